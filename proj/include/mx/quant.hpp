// SPDX-License-Identifier: Apache-2.0
//
// Direct MX block quantization and exact dequantization.
//
//   shared_exp = floor(log2(max_i |V_i|)) - e_max(f),   X = 2^shared_exp
//   P_i        = quantize_f(V_i / X)
//
// All arithmetic is done in double precision. Division by a power of two is
// exact, so every rounding decision is made on the exact ratio V_i / X.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mx/bitpack.hpp"
#include "mx/error.hpp"
#include "mx/format.hpp"
#include "mx/parallel.hpp"
#include "mx/tensor.hpp"

namespace mx {

// One block of real values with its shared exponent and element codes.
struct BlockView {
    std::vector<double> values;
    int shared_exp = kMinSharedExp;
    std::vector<ElementCode> codes;

    double scale() const { return std::ldexp(1.0, shared_exp); }
};

// A quantized tensor. `codes` holds the packed element stream: each block's
// codes are packed LSB-first and padded to a byte boundary.
struct MxTensor {
    Shape shape;
    MxFormatSpec spec;
    std::vector<int> scales;
    std::vector<std::uint8_t> codes;

    // Zero-filled tensor with the right number of scales and packed bytes.
    static MxTensor allocate(Shape shape, const MxFormatSpec& spec) {
        validate(spec);
        MxTensor t;
        t.shape = std::move(shape);
        t.spec = spec;
        const auto l = t.layout();
        t.scales.assign(l.block_count(), kMinSharedExp);
        t.codes.assign(l.total_bytes(spec.element.bits()), 0);
        return t;
    }

    BlockLayout layout() const { return BlockLayout::of(shape, spec.block_size); }
    std::size_t element_count() const { return mx::element_count(shape); }
    std::size_t block_count() const { return scales.size(); }

    std::span<const std::uint8_t> block_bytes(std::size_t block) const {
        const auto l = layout();
        const int w = spec.element.bits();
        return std::span<const std::uint8_t>(codes).subspan(l.byte_offset(block, w), l.block_bytes(block, w));
    }

    std::vector<ElementCode> block_codes(std::size_t block) const {
        const auto bytes = block_bytes(block);
        const std::size_t n = layout().block_length(block);
        std::vector<ElementCode> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = ElementCode{unpack_code(bytes, i, spec.element.bits())};
        return out;
    }

    // Packs `block_codes` into the block's byte range, replacing what was there.
    void set_block(std::size_t block, int shared_exp, std::span<const ElementCode> block_codes) {
        const auto l = layout();
        const int w = spec.element.bits();
        if (block_codes.size() != l.block_length(block)) throw DataError("block code count mismatch");
        std::span<std::uint8_t> out = std::span<std::uint8_t>(codes).subspan(l.byte_offset(block, w), l.block_bytes(block, w));
        std::fill(out.begin(), out.end(), std::uint8_t{0});
        static_assert(sizeof(ElementCode) == 1);
        pack_codes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(block_codes.data()), block_codes.size()), w, out);
        scales[block] = shared_exp;
    }

    friend bool operator==(const MxTensor&, const MxTensor&) = default;
};

// Throws ContainerError if the scale count, packed length or scale range
// disagree with the shape and spec.
inline void validate_structure(const MxTensor& t) {
    try {
        validate(t.spec);
    } catch (const FormatError& e) {
        throw ContainerError(e.what());
    }
    if (t.shape.empty()) throw ContainerError("mx tensor has empty shape");
    for (std::size_t d : t.shape)
        if (d == 0) throw ContainerError("mx tensor has a zero dimension");
    const auto l = t.layout();
    if (t.scales.size() != l.block_count())
        throw ContainerError("scale count " + std::to_string(t.scales.size()) + " != block count " +
                             std::to_string(l.block_count()));
    const std::size_t want = l.total_bytes(t.spec.element.bits());
    if (t.codes.size() != want)
        throw ContainerError("packed code length " + std::to_string(t.codes.size()) + " != expected " +
                             std::to_string(want));
    for (int s : t.scales)
        if (s < kMinSharedExp || s > kMaxSharedExp)
            throw ContainerError("shared exponent " + std::to_string(s) + " outside E8M0 range");
}

inline int compute_shared_exp(std::span<const double> block, const ElementFormat& f) {
    if (block.empty()) throw DataError("empty block");
    double max_abs = 0.0;
    for (double v : block) {
        if (!std::isfinite(v)) throw DataError("non-finite value in block");
        max_abs = std::max(max_abs, std::fabs(v));
    }
    if (max_abs == 0.0) return kMinSharedExp;
    const int e = std::ilogb(max_abs) - e_max(f);
    return std::clamp(e, kMinSharedExp, kMaxSharedExp);
}

// Round-to-nearest onto the EtaMmu grid, saturating at +-max_finite. Ties
// between grid neighbours follow `tie`; HalfEven picks the even mantissa.
inline double round_to_float_grid(double r, const ElementFormat& f, TieMode tie) {
    const double top = max_finite(f);
    const double mag = std::fabs(r);
    double q;
    if (mag >= top) {
        q = top;
    } else if (mag == 0.0) {
        return 0.0;
    } else {
        const int e = std::max(std::ilogb(mag), min_normal_exp(f));
        const int quantum_exp = e - f.man_bits();
        q = std::ldexp(round_half(std::ldexp(mag, -quantum_exp), tie), quantum_exp);
        q = std::min(q, top);
    }
    if (q == 0.0) return 0.0;
    return r < 0.0 ? -q : q;
}

inline double round_to_int_grid(double r, int bits, TieMode tie) {
    const double lim = static_cast<double>((1 << (bits - 1)) - 1);
    const double q = std::clamp(round_half(r, tie), -lim, lim);
    return q == 0.0 ? 0.0 : q;
}

// P = clip_b(Round(v / X)).
inline ElementCode quantize_element_int(double v, double scale, int bits, TieMode tie) {
    const auto f = ElementFormat::integer(bits);
    return encode_element(round_to_int_grid(v / scale, bits, tie), f);
}

// P = quantize_{eta,mu}(v / X).
inline ElementCode quantize_element_fp(double v, double scale, const ElementFormat& f, TieMode tie) {
    if (!f.is_float()) throw FormatError("quantize_element_fp needs a float element format");
    return encode_element(round_to_float_grid(v / scale, f, tie), f);
}

inline ElementCode quantize_element(double v, double scale, const ElementFormat& f, TieMode tie) {
    return f.is_int() ? quantize_element_int(v, scale, f.bits(), tie) : quantize_element_fp(v, scale, f, tie);
}

inline BlockView quantize_block(std::span<const double> values, const MxFormatSpec& spec) {
    BlockView view;
    view.values.assign(values.begin(), values.end());
    view.shared_exp = compute_shared_exp(values, spec.element);
    const double scale = view.scale();
    view.codes.reserve(values.size());
    for (double v : values) view.codes.push_back(quantize_element(v, scale, spec.element, spec.tie));
    return view;
}

inline MxTensor quantize_tensor(const Tensor& input, const MxFormatSpec& spec, unsigned threads = 1) {
    validate(spec);
    MxTensor out = MxTensor::allocate(input.shape, spec);
    const auto l = out.layout();
    if (input.values.size() != l.rows * l.last_dim) throw DataError("tensor value count does not match shape");
    for (std::size_t b = 0; b < l.block_count(); ++b) {
        const std::size_t off = l.element_offset(b);
        for (std::size_t i = 0; i < l.block_length(b); ++i)
            if (!std::isfinite(input.values[off + i]))
                throw DataError("non-finite value in block " + std::to_string(b) + " (element " +
                                std::to_string(off + i) + ")");
    }
    const std::span<const double> all(input.values);
    parallel_for(l.block_count(), threads, [&](std::size_t b) {
        const BlockView view = quantize_block(all.subspan(l.element_offset(b), l.block_length(b)), spec);
        out.set_block(b, view.shared_exp, view.codes);
    });
    return out;
}

inline Tensor dequantize_tensor(const MxTensor& qt) {
    validate_structure(qt);
    const auto l = qt.layout();
    std::vector<double> values(qt.element_count());
    for (std::size_t b = 0; b < l.block_count(); ++b) {
        const auto codes = qt.block_codes(b);
        const std::size_t off = l.element_offset(b);
        for (std::size_t i = 0; i < codes.size(); ++i) {
            double v;
            try {
                v = decode_element(codes[i], qt.spec.element);
            } catch (const FormatError& e) {
                throw ContainerError("block " + std::to_string(b) + ": " + e.what());
            }
            values[off + i] = std::ldexp(v, qt.scales[b]);
        }
    }
    return Tensor(qt.shape, std::move(values));
}

// dequantize(quantize(x)), the fake-quant used for QAT forward passes.
inline Tensor fake_quantize(const Tensor& input, const MxFormatSpec& spec) {
    return dequantize_tensor(quantize_tensor(input, spec));
}

inline double mse(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("mse: size mismatch");
    if (a.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace mx
