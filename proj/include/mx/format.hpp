// SPDX-License-Identifier: Apache-2.0
//
// Microscaling element formats: descriptors, value grids and scalar codecs.
//
// An MX format pairs a block of k low-precision elements with one shared
// power-of-two scale stored as an E8M0 byte. Elements are either b-bit
// signed integers (MXINT) or 1/eta/mu sign/exponent/mantissa floats (MXFP).

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mx/error.hpp"

namespace mx {

enum class ElementKind : std::uint8_t { Int = 0, Float = 1 };

enum class TieMode : std::uint8_t { HalfAway = 0, HalfEven = 1 };

// E8M0 shared-scale range. The byte stored on disk is shared_exp + kScaleBias;
// 0xFF (NaN in OCP) is never emitted.
inline constexpr int kScaleBias = 127;
inline constexpr int kMinSharedExp = -127;
inline constexpr int kMaxSharedExp = 127;

// Raw element bits, right-aligned. Only the low `bits()` bits may be set.
struct ElementCode {
    std::uint8_t raw = 0;

    friend constexpr auto operator<=>(ElementCode, ElementCode) = default;
};

class ElementFormat {
public:
    // MXINT(b), 2 <= b <= 8.
    static ElementFormat integer(int bits) {
        if (bits < 2 || bits > 8)
            throw FormatError("integer element width must be in [2, 8], got " + std::to_string(bits));
        return ElementFormat(ElementKind::Int, bits, 0, 0);
    }

    // E{exp_bits}M{man_bits}: 1 + eta + mu <= 8, eta >= 1, eta >= mu.
    static ElementFormat floating(int exp_bits, int man_bits) {
        if (exp_bits < 1 || man_bits < 0)
            throw FormatError("float element needs exp_bits >= 1 and man_bits >= 0");
        if (1 + exp_bits + man_bits > 8)
            throw FormatError("float element wider than 8 bits: e" + std::to_string(exp_bits) + "m" +
                              std::to_string(man_bits));
        if (exp_bits < man_bits)
            throw FormatError("float element requires exp_bits >= man_bits: e" + std::to_string(exp_bits) +
                              "m" + std::to_string(man_bits));
        return ElementFormat(ElementKind::Float, 1 + exp_bits + man_bits, exp_bits, man_bits);
    }

    constexpr ElementKind kind() const { return kind_; }
    constexpr bool is_int() const { return kind_ == ElementKind::Int; }
    constexpr bool is_float() const { return kind_ == ElementKind::Float; }
    constexpr int bits() const { return bits_; }
    constexpr int exp_bits() const { return exp_bits_; }
    constexpr int man_bits() const { return man_bits_; }

    // Float exponent bias, 2^(eta-1) - 1.
    constexpr int bias() const { return (1 << (exp_bits_ - 1)) - 1; }

    // 8-bit floats with a mantissa reserve the all-ones magnitude code
    // (the OCP E4M3 NaN slot), so E4M3 tops out at 448.
    constexpr bool reserves_top_code() const { return is_float() && bits_ == 8 && man_bits_ > 0; }

    friend constexpr bool operator==(const ElementFormat&, const ElementFormat&) = default;

private:
    constexpr ElementFormat(ElementKind kind, int bits, int exp_bits, int man_bits)
        : kind_(kind), bits_(bits), exp_bits_(exp_bits), man_bits_(man_bits) {}

    ElementKind kind_;
    int bits_;
    int exp_bits_;
    int man_bits_;
};

struct MxFormatSpec {
    ElementFormat element = ElementFormat::integer(8);
    std::size_t block_size = 32;
    TieMode tie = TieMode::HalfAway;

    friend bool operator==(const MxFormatSpec&, const MxFormatSpec&) = default;
};

inline void validate(const MxFormatSpec& spec) {
    if (spec.block_size == 0) throw FormatError("block size must be >= 1");
    if (spec.block_size > 0xFFFFFFFFu) throw FormatError("block size does not fit in 32 bits");
}

// Exponent of the largest representable magnitude: 2^e_max <= max_finite < 2^(e_max+1).
// For signed MXINT, e_max(b_h) - e_max(b_l) = b_h - b_l.
constexpr int e_max(const ElementFormat& f) {
    return f.is_int() ? f.bits() - 2 : (1 << (f.exp_bits() - 1));
}

constexpr std::uint32_t code_mask(const ElementFormat& f) { return (1u << f.bits()) - 1u; }

inline double max_finite(const ElementFormat& f) {
    if (f.is_int()) return static_cast<double>((1 << (f.bits() - 1)) - 1);
    const int mu = f.man_bits();
    const double top_mantissa = f.reserves_top_code() ? 2.0 - std::ldexp(1.0, 1 - mu) : 2.0 - std::ldexp(1.0, -mu);
    return std::ldexp(top_mantissa, e_max(f));
}

// Smallest positive normal exponent of a float element (1 - bias).
constexpr int min_normal_exp(const ElementFormat& f) { return 1 - f.bias(); }

// Round a real to an integer-valued double. HalfAway breaks ties away from
// zero, HalfEven to the even neighbour.
inline double round_half(double x, TieMode tie) {
    if (tie == TieMode::HalfAway) return std::round(x);
    const double lo = std::floor(x);
    const double frac = x - lo;
    if (frac < 0.5) return lo;
    if (frac > 0.5) return lo + 1.0;
    return std::fmod(lo, 2.0) == 0.0 ? lo : lo + 1.0;
}

inline double decode_element(ElementCode code, const ElementFormat& f) {
    const std::uint32_t c = code.raw;
    if (c > code_mask(f))
        throw FormatError("element code 0x" + std::to_string(c) + " wider than " + std::to_string(f.bits()) +
                          " bits");
    const int b = f.bits();
    if (f.is_int()) {
        const std::uint32_t sign_bit = 1u << (b - 1);
        if (c == sign_bit) throw FormatError("non-canonical integer code (most-negative value)");
        const int v = (c & sign_bit) ? static_cast<int>(c) - (1 << b) : static_cast<int>(c);
        return static_cast<double>(v);
    }
    const int mu = f.man_bits();
    const int eta = f.exp_bits();
    const std::uint32_t magnitude = c & ((1u << (b - 1)) - 1u);
    if (f.reserves_top_code() && magnitude == ((1u << (b - 1)) - 1u))
        throw FormatError("reserved float element code");
    const bool negative = (c >> (b - 1)) & 1u;
    const int exp_field = static_cast<int>(magnitude >> mu) & ((1 << eta) - 1);
    const int mantissa = static_cast<int>(magnitude & ((1u << mu) - 1u));
    double value;
    if (exp_field == 0)
        value = std::ldexp(static_cast<double>(mantissa), min_normal_exp(f) - mu);
    else
        value = std::ldexp(static_cast<double>((1 << mu) + mantissa), exp_field - f.bias() - mu);
    return negative ? -value : value;
}

// Inverse of decode_element for values exactly on the grid. Zero always
// encodes as +0.
inline ElementCode encode_element(double value, const ElementFormat& f) {
    const int b = f.bits();
    if (f.is_int()) {
        const double lim = max_finite(f);
        if (value != std::trunc(value) || std::fabs(value) > lim)
            throw FormatError("value " + std::to_string(value) + " is not on the integer grid");
        const int v = static_cast<int>(value);
        return ElementCode{static_cast<std::uint8_t>(static_cast<std::uint32_t>(v) & code_mask(f))};
    }
    const double mag = std::fabs(value);
    if (!(mag <= max_finite(f))) throw FormatError("value " + std::to_string(value) + " exceeds float grid");
    if (mag == 0.0) return ElementCode{0};
    const int mu = f.man_bits();
    std::uint32_t exp_field;
    double scaled;
    if (std::ilogb(mag) < min_normal_exp(f)) {
        exp_field = 0;
        scaled = std::ldexp(mag, mu - min_normal_exp(f));
    } else {
        const int e = std::ilogb(mag);
        exp_field = static_cast<std::uint32_t>(e + f.bias());
        scaled = std::ldexp(mag, mu - e) - std::ldexp(1.0, mu);
    }
    if (scaled != std::trunc(scaled)) throw FormatError("value " + std::to_string(value) + " is not on the float grid");
    std::uint32_t c = (exp_field << mu) | static_cast<std::uint32_t>(scaled);
    if (value < 0.0) c |= 1u << (b - 1);
    return ElementCode{static_cast<std::uint8_t>(c)};
}

// Every decodable value, ascending, with +-0 collapsed.
inline std::vector<double> value_grid(const ElementFormat& f) {
    std::vector<double> grid;
    for (std::uint32_t c = 0; c <= code_mask(f); ++c) {
        try {
            grid.push_back(decode_element(ElementCode{static_cast<std::uint8_t>(c)}, f));
        } catch (const FormatError&) {
            // non-canonical / reserved
        }
    }
    for (double& v : grid)
        if (v == 0.0) v = 0.0;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

// ---------------------------------------------------------------------------
// Names

inline std::string format_name(const ElementFormat& f) {
    if (f.is_int()) return "mxint" + std::to_string(f.bits());
    const int eta = f.exp_bits(), mu = f.man_bits();
    const bool alias = (eta == 2 && mu == 1) || (eta == 2 && mu == 2) || (eta == 3 && mu == 2) ||
                       (eta == 3 && mu == 3) || (eta == 4 && mu == 3);
    if (alias) return "mxfp" + std::to_string(f.bits());
    return "fp_e" + std::to_string(eta) + "m" + std::to_string(mu);
}

inline constexpr std::string_view kValidFormatNames =
    "mxint2..mxint8, mxfp4 (e2m1), mxfp5 (e2m2), mxfp6 (e3m2), mxfp7 (e3m3), mxfp8 (e4m3), fp_e<eta>m<mu>";

inline ElementFormat parse_format(std::string_view text) {
    std::string name(text);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
    const auto fail = [&]() -> FormatError {
        return FormatError("unknown format '" + std::string(text) + "'; valid names: " + std::string(kValidFormatNames));
    };
    const auto parse_int = [&](std::string_view digits) {
        if (digits.empty() || digits.size() > 2) throw fail();
        int v = 0;
        for (char ch : digits) {
            if (ch < '0' || ch > '9') throw fail();
            v = v * 10 + (ch - '0');
        }
        return v;
    };
    std::string_view s(name);
    if (s.starts_with("mxint")) {
        const int b = parse_int(s.substr(5));
        if (b < 2 || b > 8) throw fail();
        return ElementFormat::integer(b);
    }
    if (s.starts_with("mxfp")) {
        switch (parse_int(s.substr(4))) {
            case 4: return ElementFormat::floating(2, 1);
            case 5: return ElementFormat::floating(2, 2);
            case 6: return ElementFormat::floating(3, 2);
            case 7: return ElementFormat::floating(3, 3);
            case 8: return ElementFormat::floating(4, 3);
            default: throw fail();
        }
    }
    if (s.starts_with("fp_e")) {
        const auto m = s.find('m', 4);
        if (m == std::string_view::npos) throw fail();
        const int eta = parse_int(s.substr(4, m - 4));
        const int mu = parse_int(s.substr(m + 1));
        try {
            return ElementFormat::floating(eta, mu);
        } catch (const FormatError&) {
            throw fail();
        }
    }
    throw fail();
}

inline std::string tie_name(TieMode tie) { return tie == TieMode::HalfAway ? "half-away" : "half-even"; }

inline TieMode parse_tie(std::string_view text) {
    if (text == "half-away") return TieMode::HalfAway;
    if (text == "half-even") return TieMode::HalfEven;
    throw FormatError("unknown tie mode '" + std::string(text) + "'; expected half-away or half-even");
}

}  // namespace mx
