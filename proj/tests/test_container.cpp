// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "generators.hpp"
#include "mx/container.hpp"

using mx::ElementFormat;
using mx::MxFormatSpec;
using mx::TieMode;

namespace {

mx::MxTensor worked_example() {
    return mx::quantize_tensor(mx::Tensor({1, 4}, {1.0, 0.5, -0.25, 3.0}),
                               MxFormatSpec{ElementFormat::integer(4), 4, TieMode::HalfAway});
}

std::string decode_error(const std::vector<std::uint8_t>& bytes) {
    try {
        mx::decode_mxt(bytes);
    } catch (const mx::ContainerError& e) {
        return e.what();
    }
    return "";
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Mxt, WorkedExampleLayout) {
    const auto bytes = mx::encode_mxt(worked_example());
    // 4 magic + 2 version + 3 descriptor + 1 tie + 4 block + 1 ndim + 2 * 8 dims.
    EXPECT_EQ(mx::mxt_header_size(2), 31u);
    ASSERT_EQ(bytes.size(), 31u + 1u + 2u);
    const std::vector<std::uint8_t> header{'M', 'X', 'T', '1', 1, 0, 0, 4, 0, 0, 4, 0, 0, 0, 2,
                                           1,   0,   0,   0,   0, 0, 0, 0, 4, 0, 0, 0, 0, 0, 0, 0};
    EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 31), header);
    EXPECT_EQ(bytes[31], 126);  // -1 + 127
    // codes 2, 1, -1 (0xF), 6 packed LSB-first
    EXPECT_EQ(bytes[32], 0x12);
    EXPECT_EQ(bytes[33], 0x6F);
    EXPECT_EQ(mx::mxt_file_size({1, 4}, MxFormatSpec{ElementFormat::integer(4), 4, TieMode::HalfAway}), 34u);
}

TEST(Mxt, FloatDescriptorAndTie) {
    const auto q = mx::quantize_tensor(mx::Tensor({2}, {1.0, -2.0}), MxFormatSpec{ElementFormat::floating(3, 2), 8, TieMode::HalfEven});
    const auto bytes = mx::encode_mxt(q);
    EXPECT_EQ(bytes[6], 1);
    EXPECT_EQ(bytes[7], 3);
    EXPECT_EQ(bytes[8], 2);
    EXPECT_EQ(bytes[9], 1);
    EXPECT_EQ(mx::decode_mxt(bytes), q);
}

TEST(Mxt, ZeroTensorBytes) {
    const auto q = mx::quantize_tensor(mx::Tensor({3, 10}, std::vector<double>(30, 0.0)),
                                       MxFormatSpec{ElementFormat::integer(5), 4, TieMode::HalfAway});
    const auto bytes = mx::encode_mxt(q);
    const std::size_t h = mx::mxt_header_size(2);
    for (std::size_t i = h; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 0) << i;
    EXPECT_EQ(bytes.size(), h + q.block_count() + q.codes.size());
}

TEST(Mxt, WriteReadWriteIsByteIdentical) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto s = gen::shape(rng);
        const MxFormatSpec spec{gen::any_format(rng), gen::block_size(rng), rng() & 1 ? TieMode::HalfAway : TieMode::HalfEven};
        const auto q = mx::quantize_tensor(gen::tensor(rng, s), spec);
        std::stringstream a;
        const std::size_t n = mx::write_mxt(q, a);
        EXPECT_EQ(n, mx::mxt_file_size(s, spec));
        const auto back = mx::read_mxt(a);
        EXPECT_EQ(back, q);
        std::stringstream b;
        mx::write_mxt(back, b);
        EXPECT_EQ(a.str(), b.str());
    }
}

TEST(Mxt, DistinctDiagnostics) {
    const auto good = mx::encode_mxt(worked_example());
    auto bad = good;
    bad[0] = 'X';
    EXPECT_EQ(decode_error(bad), "bad magic");
    EXPECT_NE(decode_error({good.begin(), good.begin() + 10}).find("truncated header"), std::string::npos);
    bad = good;
    bad[4] = 2;
    EXPECT_NE(decode_error(bad).find("unsupported version 2"), std::string::npos);
    bad = good;
    bad[6] = 7;
    EXPECT_NE(decode_error(bad).find("bad format descriptor"), std::string::npos);
    bad = good;
    bad[7] = 9;
    EXPECT_NE(decode_error(bad).find("bad format descriptor"), std::string::npos);
    bad = good;
    bad[9] = 2;
    EXPECT_NE(decode_error(bad).find("bad tie mode"), std::string::npos);
    bad = good;
    bad[10] = 0;
    EXPECT_NE(decode_error(bad).find("bad block size"), std::string::npos);
    bad = good;
    bad[15] = 0;
    EXPECT_NE(decode_error(bad).find("bad dimension"), std::string::npos);
    EXPECT_NE(decode_error({good.begin(), good.begin() + 31}).find("truncated scales: expected 1 bytes, got 0"),
              std::string::npos);
    bad = good;
    bad[31] = 0xFF;
    EXPECT_NE(decode_error(bad).find("bad scale byte 0xff"), std::string::npos);
    EXPECT_NE(decode_error({good.begin(), good.end() - 1}).find("truncated codes: expected 2 bytes, got 1"),
              std::string::npos);
    bad = good;
    bad.push_back(0);
    EXPECT_NE(decode_error(bad).find("trailing garbage: 1 extra bytes"), std::string::npos);
}

TEST(Mxt, ReservedCodesRejectedAtDecode) {
    auto bytes = mx::encode_mxt(worked_example());
    bytes[32] = 0x18;  // element 0 -> most-negative int4 code
    EXPECT_THROW(mx::decode_mxt(bytes), mx::ContainerError);
}

TEST(Mxt, FileRoundTripAndIoErrors) {
    const auto dir = std::filesystem::temp_directory_path() / "mx_container_test";
    std::filesystem::create_directories(dir);
    const auto q = worked_example();
    const std::string path = (dir / "a.mxt").string();
    EXPECT_EQ(mx::save_mxt(q, path), 34u);
    EXPECT_EQ(std::filesystem::file_size(path), 34u);
    EXPECT_EQ(mx::load_mxt(path), q);
    EXPECT_THROW(mx::load_mxt((dir / "missing.mxt").string()), mx::IoError);
    EXPECT_THROW(mx::save_mxt(q, (dir / "no" / "such" / "dir.mxt").string()), mx::IoError);
    std::filesystem::remove_all(dir);
}

TEST(RawTensor, TextExample) {
    const auto t = mx::parse_raw_tensor(bytes_of("dims 1 4\n1.0 0.5 -0.25 3.0"));
    EXPECT_EQ(t.shape, (mx::Shape{1, 4}));
    EXPECT_EQ(t.values, (std::vector<double>{1.0, 0.5, -0.25, 3.0}));
}

TEST(RawTensor, BinaryMatchesText) {
    const mx::Tensor t({2, 3}, {1.5, -2, 0, 1e-300, 3.25, -7});
    std::stringstream bin, txt;
    mx::write_raw_tensor(t, bin, true);
    mx::write_raw_tensor(t, txt, false);
    EXPECT_EQ(bin.str().substr(0, 4), "RAW1");
    EXPECT_EQ(bin.str().size(), 4u + 1u + 16u + 48u);
    EXPECT_EQ(mx::read_raw_tensor(bin), t);
    EXPECT_EQ(mx::read_raw_tensor(txt), t);
}

TEST(RawTensor, Errors) {
    std::string bin = "RAW1";
    bin.push_back(1);
    const std::uint64_t zero = 0;
    bin.append(reinterpret_cast<const char*>(&zero), 8);
    EXPECT_THROW(
        {
            try {
                mx::parse_raw_tensor(bytes_of(bin));
            } catch (const mx::ContainerError& e) {
                EXPECT_NE(std::string(e.what()).find("empty tensor"), std::string::npos) << e.what();
                throw;
            }
        },
        mx::ContainerError);
    EXPECT_THROW(mx::parse_raw_tensor(bytes_of("dims 2 2\n1 2 3")), mx::ContainerError);
    EXPECT_THROW(mx::parse_raw_tensor(bytes_of("dims 2 2\n1 2 3 4 5")), mx::ContainerError);
    EXPECT_THROW(mx::parse_raw_tensor(bytes_of("shape 2\n1 2")), mx::ContainerError);
    EXPECT_THROW(mx::parse_raw_tensor(bytes_of("dims 2 x\n1 2")), mx::ContainerError);
    EXPECT_THROW(mx::parse_raw_tensor(bytes_of("dims 2\n1 abc")), mx::ContainerError);
    EXPECT_THROW(mx::parse_raw_tensor(bytes_of("")), mx::ContainerError);
}
