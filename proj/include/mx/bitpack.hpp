// SPDX-License-Identifier: Apache-2.0
//
// LSB-first packing of fixed-width element codes. Code i occupies bits
// [i*width, (i+1)*width) of the byte stream, bit 0 being the LSB of byte 0.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace mx {

constexpr std::size_t packed_size(std::size_t count, int width) {
    return (count * static_cast<std::size_t>(width) + 7) / 8;
}

// `out` must hold packed_size(codes.size(), width) zeroed bytes.
inline void pack_codes(std::span<const std::uint8_t> codes, int width, std::span<std::uint8_t> out) {
    std::size_t bit = 0;
    for (std::uint8_t c : codes) {
        const std::uint32_t v = static_cast<std::uint32_t>(c) << (bit & 7);
        out[bit >> 3] |= static_cast<std::uint8_t>(v);
        if ((bit & 7) + width > 8) out[(bit >> 3) + 1] |= static_cast<std::uint8_t>(v >> 8);
        bit += static_cast<std::size_t>(width);
    }
}

inline std::uint8_t unpack_code(std::span<const std::uint8_t> bytes, std::size_t index, int width) {
    const std::size_t bit = index * static_cast<std::size_t>(width);
    std::uint32_t v = bytes[bit >> 3];
    if ((bit & 7) + width > 8) v |= static_cast<std::uint32_t>(bytes[(bit >> 3) + 1]) << 8;
    return static_cast<std::uint8_t>((v >> (bit & 7)) & ((1u << width) - 1u));
}

}  // namespace mx
