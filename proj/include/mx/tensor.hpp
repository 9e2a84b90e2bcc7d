// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mx/bitpack.hpp"
#include "mx/error.hpp"

namespace mx {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
    return s;
}

// Dense row-major tensor of doubles.
struct Tensor {
    Shape shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (shape.empty()) throw DataError("tensor shape must be nonempty");
        for (std::size_t d : shape)
            if (d == 0) throw DataError("tensor dimensions must be positive");
        if (element_count(shape) != values.size())
            throw DataError("tensor shape " + shape_string(shape) + " does not match " +
                            std::to_string(values.size()) + " values");
    }

    std::size_t size() const { return values.size(); }
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Blocks tile the last axis of the row-major flattening; the final block in
// each row is short when last_dim % block_size != 0.
struct BlockLayout {
    std::size_t rows = 0;
    std::size_t last_dim = 0;
    std::size_t block_size = 1;
    std::size_t blocks_per_row = 0;

    static BlockLayout of(const Shape& shape, std::size_t block_size) {
        if (shape.empty()) throw DataError("tensor shape must be nonempty");
        if (block_size == 0) throw DataError("block size must be >= 1");
        BlockLayout l;
        l.last_dim = shape.back();
        l.rows = element_count(shape) / (l.last_dim ? l.last_dim : 1);
        if (l.last_dim == 0) l.rows = 0;
        l.block_size = block_size;
        l.blocks_per_row = (l.last_dim + block_size - 1) / block_size;
        return l;
    }

    std::size_t block_count() const { return rows * blocks_per_row; }

    std::size_t block_length(std::size_t block) const {
        const std::size_t j = block % blocks_per_row;
        return std::min(block_size, last_dim - j * block_size);
    }

    std::size_t element_offset(std::size_t block) const {
        return (block / blocks_per_row) * last_dim + (block % blocks_per_row) * block_size;
    }

    std::size_t row_bytes(int width) const {
        const std::size_t full = last_dim / block_size;
        const std::size_t tail = last_dim % block_size;
        return full * packed_size(block_size, width) + (tail ? packed_size(tail, width) : 0);
    }

    std::size_t byte_offset(std::size_t block, int width) const {
        return (block / blocks_per_row) * row_bytes(width) + (block % blocks_per_row) * packed_size(block_size, width);
    }

    std::size_t block_bytes(std::size_t block, int width) const { return packed_size(block_length(block), width); }

    std::size_t total_bytes(int width) const { return rows * row_bytes(width); }
};

}  // namespace mx
