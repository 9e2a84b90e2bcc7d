// SPDX-License-Identifier: Apache-2.0
//
// Slice-and-Scale: derive a lower-precision MX tensor from a higher-precision
// anchor without touching full-precision data.
//
//   delta_e = e_max(source) - e_max(target)
//   X_l     = X_h * 2^delta_e
//   P_l     = clip(Round(P_h / 2^delta_e))          (integer, shift-and-round)
//   P_l     = quantize_{eta_l,mu_l}(P_h / 2^delta_e) (float, requantize)

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "mx/error.hpp"
#include "mx/format.hpp"
#include "mx/parallel.hpp"
#include "mx/quant.hpp"

namespace mx {

struct ConversionPlan {
    ElementFormat source;
    ElementFormat target;
    int delta_e = 0;
    TieMode tie = TieMode::HalfAway;

    // Validates kinds and direction. Throws ConversionError for Int<->Float
    // and UpConversionError when the target is wider than the source.
    static ConversionPlan make(const ElementFormat& source, const ElementFormat& target, TieMode tie) {
        if (source.kind() != target.kind())
            throw ConversionError("cross-kind conversion " + format_name(source) + " -> " + format_name(target) +
                                  " is not supported");
        if (source.is_int()) {
            if (target.bits() > source.bits())
                throw UpConversionError("up-conversion not supported: " + format_name(source) + " -> " +
                                        format_name(target));
        } else if (target.exp_bits() > source.exp_bits() || target.man_bits() > source.man_bits()) {
            throw UpConversionError("up-conversion not supported: " + format_name(source) + " -> " +
                                    format_name(target));
        }
        return ConversionPlan{source, target, e_max(source) - e_max(target), tie};
    }
};

// Per-call diagnostics: blocks whose new shared exponent hit the E8M0 ceiling.
struct ConversionDiagnostics {
    int delta_e = 0;
    std::vector<std::size_t> saturated_blocks;
};

// clip_{b_l}(Round(p_h / 2^delta_e)) computed on the magnitude with integer
// shifts: the most-significant dropped bit decides rounding, and HalfEven
// also looks at the sticky bits and the kept LSB.
inline int ss_shift_round_int(int p_h, int delta_e, int target_bits, TieMode tie) {
    const int limit = (1 << (target_bits - 1)) - 1;
    const unsigned mag = static_cast<unsigned>(std::abs(p_h));
    unsigned q = delta_e >= 31 ? 0u : mag >> delta_e;
    if (delta_e > 0 && delta_e < 32) {
        const unsigned round_bit = (mag >> (delta_e - 1)) & 1u;
        const unsigned sticky = mag & ((1u << (delta_e - 1)) - 1u);
        if (round_bit && (tie == TieMode::HalfAway || sticky != 0 || (q & 1u))) ++q;
    }
    const int r = std::min(static_cast<int>(q), limit);
    return p_h < 0 ? -r : r;
}

namespace detail {

inline void check_anchor(const MxTensor& anchor) { validate_structure(anchor); }

inline bool all_zero(std::span<const ElementCode> codes) {
    for (ElementCode c : codes)
        if (c.raw != 0) return false;
    return true;
}

// Shared exponent after the scale update. Returns the effective shift actually
// applied, which is smaller than delta_e only when E8M0 saturates.
inline int scaled_exponent(int old_exp, int delta_e, int& shift, bool& saturated) {
    const int wanted = old_exp + delta_e;
    const int got = std::min(wanted, kMaxSharedExp);
    saturated = got != wanted;
    shift = got - old_exp;
    return got;
}

template <typename ElementFn>
MxTensor ss_convert(const MxTensor& anchor, const ConversionPlan& plan, ConversionDiagnostics* diag,
                    unsigned threads, ElementFn&& convert_element) {
    check_anchor(anchor);
    MxFormatSpec spec = anchor.spec;
    spec.element = plan.target;
    spec.tie = plan.tie;
    MxTensor out = MxTensor::allocate(anchor.shape, spec);
    const std::size_t n = anchor.block_count();
    std::vector<char> saturated(n, 0);
    parallel_for(n, threads, [&](std::size_t b) {
        std::vector<ElementCode> codes = anchor.block_codes(b);
        // All-zero blocks keep the zero-block scale so they match direct quantization.
        if (all_zero(codes)) {
            out.set_block(b, kMinSharedExp, codes);
            return;
        }
        int shift = 0;
        bool sat = false;
        const int exp = scaled_exponent(anchor.scales[b], plan.delta_e, shift, sat);
        saturated[b] = sat;
        for (ElementCode& c : codes) c = convert_element(c, shift);
        out.set_block(b, exp, codes);
    });
    if (diag) {
        diag->delta_e = plan.delta_e;
        diag->saturated_blocks.clear();
        for (std::size_t b = 0; b < n; ++b)
            if (saturated[b]) diag->saturated_blocks.push_back(b);
    }
    return out;
}

}  // namespace detail

// SSMXINT. `anchor` must hold integer elements at least `target_bits` wide.
inline MxTensor ss_convert_int(const MxTensor& anchor, int target_bits, TieMode tie,
                               ConversionDiagnostics* diag = nullptr, unsigned threads = 1) {
    if (!anchor.spec.element.is_int())
        throw ConversionError("ss_convert_int needs an integer anchor, got " + format_name(anchor.spec.element));
    const auto plan = ConversionPlan::make(anchor.spec.element, ElementFormat::integer(target_bits), tie);
    const ElementFormat src = plan.source, dst = plan.target;
    return detail::ss_convert(anchor, plan, diag, threads, [&](ElementCode c, int shift) {
        const int p_h = static_cast<int>(decode_element(c, src));
        return encode_element(ss_shift_round_int(p_h, shift, dst.bits(), tie), dst);
    });
}

// SSMXFP. Elements are decoded to double, divided by 2^delta_e and requantized.
inline MxTensor ss_convert_fp(const MxTensor& anchor, const ElementFormat& target, TieMode tie,
                              ConversionDiagnostics* diag = nullptr, unsigned threads = 1) {
    if (!anchor.spec.element.is_float())
        throw ConversionError("ss_convert_fp needs a float anchor, got " + format_name(anchor.spec.element));
    const auto plan = ConversionPlan::make(anchor.spec.element, target, tie);
    const ElementFormat src = plan.source, dst = plan.target;
    return detail::ss_convert(anchor, plan, diag, threads, [&](ElementCode c, int shift) {
        const double p_h = decode_element(c, src);
        return encode_element(round_to_float_grid(std::ldexp(p_h, -shift), dst, tie), dst);
    });
}

// Dispatches on the anchor's element kind.
inline MxTensor ss_convert(const MxTensor& anchor, const ElementFormat& target, TieMode tie,
                           ConversionDiagnostics* diag = nullptr, unsigned threads = 1) {
    ConversionPlan::make(anchor.spec.element, target, tie);
    return target.is_int() ? ss_convert_int(anchor, target.bits(), tie, diag, threads)
                           : ss_convert_fp(anchor, target, tie, diag, threads);
}

// Per-block comparison of direct quantization at `low` against SS from an
// anchor at `high`, both measured against the source values.
struct BlockComparison {
    bool scale_equal = false;
    std::size_t code_disagreements = 0;
    double mse_direct = 0.0;
    double mse_ss = 0.0;
};

struct DirectVsSsReport {
    std::vector<BlockComparison> blocks;
    std::size_t elements = 0;
    double mse_direct = 0.0;
    double mse_ss = 0.0;
    std::size_t saturated_blocks = 0;

    double scale_equal_rate() const {
        if (blocks.empty()) return 1.0;
        std::size_t eq = 0;
        for (const auto& b : blocks) eq += b.scale_equal;
        return static_cast<double>(eq) / static_cast<double>(blocks.size());
    }

    double code_disagreement_rate() const {
        if (elements == 0) return 0.0;
        std::size_t d = 0;
        for (const auto& b : blocks) d += b.code_disagreements;
        return static_cast<double>(d) / static_cast<double>(elements);
    }
};

inline DirectVsSsReport direct_vs_ss_report(const Tensor& source, const MxFormatSpec& high, const MxFormatSpec& low) {
    if (high.block_size != low.block_size)
        throw ConversionError("anchor and target block sizes differ (" + std::to_string(high.block_size) + " vs " +
                              std::to_string(low.block_size) + ")");
    ConversionPlan::make(high.element, low.element, low.tie);
    const MxTensor direct = quantize_tensor(source, low);
    const MxTensor anchor = quantize_tensor(source, high);
    ConversionDiagnostics diag;
    const MxTensor ss = ss_convert(anchor, low.element, low.tie, &diag);
    const Tensor rec_direct = dequantize_tensor(direct);
    const Tensor rec_ss = dequantize_tensor(ss);

    DirectVsSsReport report;
    report.elements = source.size();
    report.saturated_blocks = diag.saturated_blocks.size();
    const auto l = direct.layout();
    report.blocks.resize(l.block_count());
    const std::span<const double> src(source.values), rd(rec_direct.values), rs(rec_ss.values);
    for (std::size_t b = 0; b < l.block_count(); ++b) {
        auto& cmp = report.blocks[b];
        cmp.scale_equal = direct.scales[b] == ss.scales[b];
        const auto cd = direct.block_codes(b), cs = ss.block_codes(b);
        for (std::size_t i = 0; i < cd.size(); ++i) cmp.code_disagreements += cd[i] != cs[i];
        const std::size_t off = l.element_offset(b), len = l.block_length(b);
        cmp.mse_direct = mse(src.subspan(off, len), rd.subspan(off, len));
        cmp.mse_ss = mse(src.subspan(off, len), rs.subspan(off, len));
    }
    report.mse_direct = mse(src, rd);
    report.mse_ss = mse(src, rs);
    return report;
}

}  // namespace mx
