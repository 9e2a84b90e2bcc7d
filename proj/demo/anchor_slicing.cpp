// SPDX-License-Identifier: Apache-2.0
//
// Stores one mxint8 anchor and derives mxint2..mxint7 from it, comparing each
// against quantizing the source directly.

#include <cstdio>
#include <random>

#include "mx/mx.hpp"

int main() {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal;
    mx::Tensor t({1, 1024}, std::vector<double>(1024));
    for (double& v : t.values) v = normal(rng);

    const mx::MxFormatSpec anchor_spec{mx::ElementFormat::integer(8), 64, mx::TieMode::HalfAway};
    std::printf("bits  delta_e  mse_direct  mse_ss      scale_equal  code_diff\n");
    for (int bits = 7; bits >= 2; --bits) {
        mx::MxFormatSpec low = anchor_spec;
        low.element = mx::ElementFormat::integer(bits);
        const auto rep = mx::direct_vs_ss_report(t, anchor_spec, low);
        std::printf("%4d  %7d  %.3e   %.3e   %10.3f  %9.4f\n", bits, 8 - bits, rep.mse_direct, rep.mse_ss,
                    rep.scale_equal_rate(), rep.code_disagreement_rate());
    }
}
