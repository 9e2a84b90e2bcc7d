// SPDX-License-Identifier: Apache-2.0
//
// .mxt checkpoint container and raw tensor I/O.
//
// .mxt layout, all integers little-endian:
//
//   offset  size   field
//   0       4      magic "MXT1"
//   4       2      version (1)
//   6       1      element kind (0 = int, 1 = float)
//   7       2      params (int: b, 0; float: eta, mu)
//   9       1      tie mode (0 = half-away, 1 = half-even)
//   10      4      block size
//   14      1      ndim
//   15      8*ndim dims
//   ...     nblk   scales, one byte per block, shared_exp + 127
//   ...            codes, per block LSB-first, each block padded to a byte
//
// Raw tensors come as text ("dims d1 d2 ...\n" followed by values) or binary
// ("RAW1", ndim u8, dims u64, float64 values).

#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mx/error.hpp"
#include "mx/format.hpp"
#include "mx/quant.hpp"
#include "mx/tensor.hpp"

namespace mx {

inline constexpr std::array<char, 4> kMxtMagic{'M', 'X', 'T', '1'};
inline constexpr std::uint16_t kMxtVersion = 1;
inline constexpr std::array<char, 4> kRawMagic{'R', 'A', 'W', '1'};

constexpr std::size_t mxt_header_size(std::size_t ndim) { return 15 + 8 * ndim; }

// Closed-form .mxt size: header + one scale byte per block + packed codes.
inline std::size_t mxt_file_size(const Shape& shape, const MxFormatSpec& spec) {
    const auto l = BlockLayout::of(shape, spec.block_size);
    return mxt_header_size(shape.size()) + l.block_count() + l.total_bytes(spec.element.bits());
}

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    const std::vector<std::uint8_t>& data() const { return buf_; }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

    bool has(std::size_t n) const { return remaining() >= n; }

    std::uint64_t le(int n) {
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> take(std::size_t n) {
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> slurp(std::istream& in) {
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw ContainerError("read failure");
    return bytes;
}

inline std::uint64_t double_bits(double v) { return std::bit_cast<std::uint64_t>(v); }

}  // namespace detail

inline std::vector<std::uint8_t> encode_mxt(const MxTensor& qt) {
    validate_structure(qt);
    if (qt.shape.size() > 255) throw ContainerError("tensor rank exceeds 255");
    detail::ByteWriter w;
    w.bytes(kMxtMagic.data(), kMxtMagic.size());
    w.u16(kMxtVersion);
    const auto& f = qt.spec.element;
    w.u8(static_cast<std::uint8_t>(f.kind()));
    if (f.is_int()) {
        w.u8(static_cast<std::uint8_t>(f.bits()));
        w.u8(0);
    } else {
        w.u8(static_cast<std::uint8_t>(f.exp_bits()));
        w.u8(static_cast<std::uint8_t>(f.man_bits()));
    }
    w.u8(static_cast<std::uint8_t>(qt.spec.tie));
    w.u32(static_cast<std::uint32_t>(qt.spec.block_size));
    w.u8(static_cast<std::uint8_t>(qt.shape.size()));
    for (std::size_t d : qt.shape) w.u64(d);
    for (int s : qt.scales) w.u8(static_cast<std::uint8_t>(s + kScaleBias));
    w.bytes(qt.codes.data(), qt.codes.size());
    return w.data();
}

inline std::size_t write_mxt(const MxTensor& qt, std::ostream& sink) {
    const auto bytes = encode_mxt(qt);
    sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!sink) throw IoError("write failure");
    return bytes.size();
}

inline MxTensor decode_mxt(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    if (!r.has(4) || std::memcmp(r.take(4).data(), kMxtMagic.data(), 4) != 0) throw ContainerError("bad magic");
    if (!r.has(mxt_header_size(0) - 4)) throw ContainerError("truncated header");
    const auto version = static_cast<std::uint16_t>(r.le(2));
    if (version != kMxtVersion) throw ContainerError("unsupported version " + std::to_string(version));
    const auto kind = static_cast<std::uint8_t>(r.le(1));
    const auto p0 = static_cast<int>(r.le(1));
    const auto p1 = static_cast<int>(r.le(1));
    const auto tie = static_cast<std::uint8_t>(r.le(1));
    const auto block_size = static_cast<std::size_t>(r.le(4));
    const auto ndim = static_cast<std::size_t>(r.le(1));

    MxFormatSpec spec;
    try {
        if (kind == 0) {
            if (p1 != 0) throw FormatError("nonzero second parameter for integer element");
            spec.element = ElementFormat::integer(p0);
        } else if (kind == 1) {
            spec.element = ElementFormat::floating(p0, p1);
        } else {
            throw FormatError("unknown element kind " + std::to_string(kind));
        }
    } catch (const FormatError& e) {
        throw ContainerError(std::string("bad format descriptor: ") + e.what());
    }
    if (tie > 1) throw ContainerError("bad tie mode " + std::to_string(tie));
    spec.tie = static_cast<TieMode>(tie);
    if (block_size == 0) throw ContainerError("bad block size 0");
    spec.block_size = block_size;
    if (ndim == 0) throw ContainerError("bad rank 0");
    if (!r.has(8 * ndim)) throw ContainerError("truncated header");
    Shape shape(ndim);
    for (auto& d : shape) {
        d = static_cast<std::size_t>(r.le(8));
        if (d == 0) throw ContainerError("bad dimension 0");
    }
    // Guard against absurd dims before allocating.
    {
        long double count = 1;
        for (std::size_t d : shape) count *= static_cast<long double>(d);
        if (count > static_cast<long double>(bytes.size()) * 8.0L + 8.0L)
            throw ContainerError("truncated scales (shape " + shape_string(shape) + " exceeds file size)");
    }

    const auto l = BlockLayout::of(shape, block_size);
    const std::size_t nblocks = l.block_count();
    if (!r.has(nblocks))
        throw ContainerError("truncated scales: expected " + std::to_string(nblocks) + " bytes, got " +
                             std::to_string(r.remaining()));
    MxTensor qt;
    qt.shape = std::move(shape);
    qt.spec = spec;
    qt.scales.reserve(nblocks);
    for (std::uint8_t byte : r.take(nblocks)) {
        if (byte == 0xFF) throw ContainerError("bad scale byte 0xff");
        qt.scales.push_back(static_cast<int>(byte) - kScaleBias);
    }
    const std::size_t code_bytes = l.total_bytes(spec.element.bits());
    if (!r.has(code_bytes))
        throw ContainerError("truncated codes: expected " + std::to_string(code_bytes) + " bytes, got " +
                             std::to_string(r.remaining()));
    const auto payload = r.take(code_bytes);
    qt.codes.assign(payload.begin(), payload.end());
    for (std::size_t b = 0; b < nblocks; ++b) {
        for (ElementCode c : qt.block_codes(b)) {
            try {
                decode_element(c, spec.element);
            } catch (const FormatError& e) {
                throw ContainerError("bad element code in block " + std::to_string(b) + ": " + e.what());
            }
        }
    }
    if (r.remaining() != 0) throw ContainerError("trailing garbage: " + std::to_string(r.remaining()) + " extra bytes");
    return qt;
}

inline MxTensor read_mxt(std::istream& source) {
    const auto bytes = detail::slurp(source);
    return decode_mxt(bytes);
}

inline std::size_t save_mxt(const MxTensor& qt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    return write_mxt(qt, out);
}

inline MxTensor load_mxt(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read_mxt(in);
}

// ---------------------------------------------------------------------------
// Raw tensors

inline Tensor parse_raw_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kRawMagic.data(), 4) == 0) {
        detail::ByteReader r(bytes);
        r.take(4);
        if (!r.has(1)) throw ContainerError("malformed header: missing rank");
        const auto ndim = static_cast<std::size_t>(r.le(1));
        if (ndim == 0) throw ContainerError("malformed header: rank 0");
        if (!r.has(8 * ndim)) throw ContainerError("malformed header: truncated dims");
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(r.le(8));
        const std::size_t count = element_count(shape);
        if (count == 0) throw ContainerError("empty tensor");
        if (r.remaining() % 8 != 0 || r.remaining() / 8 != count)
            throw ContainerError("count mismatch: header declares " + std::to_string(count) + " values, payload has " +
                                 std::to_string(r.remaining() / 8));
        std::vector<double> values(count);
        for (auto& v : values) v = std::bit_cast<double>(r.le(8));
        return Tensor(std::move(shape), std::move(values));
    }

    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    if (!std::getline(in, line)) throw ContainerError("malformed header: empty input");
    std::istringstream header(line);
    std::string tag;
    header >> tag;
    if (tag != "dims") throw ContainerError("malformed header: expected 'dims d1 d2 ...'");
    Shape shape;
    std::string tok;
    while (header >> tok) {
        std::size_t used = 0;
        unsigned long long d = 0;
        try {
            d = std::stoull(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size() || tok[0] == '-') throw ContainerError("malformed header: bad dimension '" + tok + "'");
        shape.push_back(static_cast<std::size_t>(d));
    }
    if (shape.empty()) throw ContainerError("malformed header: no dimensions");
    const std::size_t count = element_count(shape);
    if (count == 0) throw ContainerError("empty tensor");
    std::vector<double> values;
    values.reserve(count);
    while (in >> tok) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) throw ContainerError("malformed value '" + tok + "'");
        values.push_back(v);
    }
    if (values.size() != count)
        throw ContainerError("count mismatch: header declares " + std::to_string(count) + " values, found " +
                             std::to_string(values.size()));
    return Tensor(std::move(shape), std::move(values));
}

inline Tensor read_raw_tensor(std::istream& source) {
    const auto bytes = detail::slurp(source);
    return parse_raw_tensor(bytes);
}

inline Tensor load_raw_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read_raw_tensor(in);
}

inline void write_raw_tensor(const Tensor& t, std::ostream& sink, bool binary) {
    if (binary) {
        detail::ByteWriter w;
        w.bytes(kRawMagic.data(), kRawMagic.size());
        w.u8(static_cast<std::uint8_t>(t.shape.size()));
        for (std::size_t d : t.shape) w.u64(d);
        for (double v : t.values) w.u64(detail::double_bits(v));
        sink.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
    } else {
        sink << "dims";
        for (std::size_t d : t.shape) sink << ' ' << d;
        sink << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
        const std::size_t last = t.shape.back();
        for (std::size_t i = 0; i < t.values.size(); ++i) sink << t.values[i] << ((i + 1) % last == 0 ? '\n' : ' ');
    }
    if (!sink) throw IoError("write failure");
}

inline void save_raw_tensor(const Tensor& t, const std::string& path, bool binary) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_raw_tensor(t, out, binary);
}

}  // namespace mx
