// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the mx microscaling toolkit.

#pragma once

#include "mx/bitpack.hpp"
#include "mx/container.hpp"
#include "mx/convert.hpp"
#include "mx/error.hpp"
#include "mx/format.hpp"
#include "mx/parallel.hpp"
#include "mx/qat.hpp"
#include "mx/quant.hpp"
#include "mx/sweep.hpp"
#include "mx/tensor.hpp"
