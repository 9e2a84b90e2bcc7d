// SPDX-License-Identifier: Apache-2.0
//
// Quantizes a small tensor into a few MX formats and prints the per-format
// reconstruction error.

#include <cstdio>
#include <random>

#include "mx/mx.hpp"

int main() {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal;
    mx::Tensor t({4, 64}, std::vector<double>(256));
    for (double& v : t.values) v = normal(rng);

    for (const char* name : {"mxint8", "mxint4", "mxfp8", "mxfp6", "mxfp4"}) {
        const mx::MxFormatSpec spec{mx::parse_format(name), 32, mx::TieMode::HalfAway};
        const mx::MxTensor q = mx::quantize_tensor(t, spec);
        const mx::Tensor r = mx::dequantize_tensor(q);
        std::printf("%-7s blocks=%zu bytes=%zu mse=%.3e\n", name, q.block_count(), mx::mxt_file_size(t.shape, spec),
                    mx::mse(t.values, r.values));
    }
}
