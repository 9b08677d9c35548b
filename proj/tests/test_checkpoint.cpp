// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "aquila/checkpoint.hpp"

using namespace aquila;
namespace fs = std::filesystem;

namespace {

template <class T>
ParamStore<T> random_store(unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    ParamStore<T> s;
    for (const auto& [name, dims] : std::vector<std::pair<std::string, Dims>>{{"a.w", {3, 4}}, {"b", {5}}, {"c.deep", {2, 1, 3}}}) {
        Tensor<T> t(dims);
        for (auto& v : t.data()) v = static_cast<T>(n(rng));
        s.add(name, Group::Decoder, t);
    }
    s.value(1).data()[0] = std::numeric_limits<T>::denorm_min();
    s.value(1).data()[1] = -0.0;
    return s;
}

FormatCode decode_code(const std::vector<unsigned char>& buf) {
    try {
        decode_checkpoint(buf);
    } catch (const FormatError& e) {
        return e.code();
    }
    ADD_FAILURE() << "decode succeeded";
    return FormatCode::Io;
}

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("aquila_ckpt_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST(Checkpoint, Crc32MatchesKnownValue) {
    const char* s = "123456789";
    EXPECT_EQ(crc32_of(reinterpret_cast<const unsigned char*>(s), 9), 0xCBF43926u);
}

template <class T>
class CheckpointRoundTrip : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(CheckpointRoundTrip, Precisions);

TYPED_TEST(CheckpointRoundTrip, BitExact) {
    const auto src = random_store<TypeParam>(3);
    const auto bytes = encode_checkpoint(checkpoint_from_store(src));
    auto dst = random_store<TypeParam>(4);
    load_into_store(decode_checkpoint(bytes), dst);
    for (ParamId id = 0; id < src.size(); ++id) {
        const auto& a = src.value(id);
        const auto& b = dst.value(id);
        ASSERT_EQ(a.dims(), b.dims());
        EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(TypeParam)), 0) << src[id].name;
    }
    EXPECT_EQ(encode_checkpoint(checkpoint_from_store(dst)), bytes);
}

TEST(Checkpoint, LayoutHeader) {
    const auto bytes = encode_checkpoint(checkpoint_from_store(random_store<float>(1)));
    ASSERT_GE(bytes.size(), 12u);
    EXPECT_EQ(std::memcmp(bytes.data(), "AQSF", 4), 0);
    std::uint32_t version = 0, count = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&count, bytes.data() + 8, 4);
    EXPECT_EQ(version, 1u);
    EXPECT_EQ(count, 3u);
}

TEST(Checkpoint, CrossPrecisionLoad) {
    const auto src = random_store<double>(5);
    auto dst = random_store<float>(6);
    load_into_store(decode_checkpoint(encode_checkpoint(checkpoint_from_store(src))), dst);
    EXPECT_EQ(dst.value(0).data()[2], static_cast<float>(src.value(0).data()[2]));
}

TEST(Checkpoint, EveryTruncationIsRejected) {
    const auto bytes = encode_checkpoint(checkpoint_from_store(random_store<float>(2)));
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        const std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
        const FormatCode c = decode_code(cut);
        EXPECT_TRUE(c == FormatCode::Truncated || c == FormatCode::BadMagic || c == FormatCode::CrcMismatch) << n;
    }
    const std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 10);
    EXPECT_EQ(decode_code(cut), FormatCode::Truncated);
}

TEST(Checkpoint, EveryFlippedByteIsRejected) {
    const auto bytes = encode_checkpoint(checkpoint_from_store(random_store<float>(2)));
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        auto bad = bytes;
        bad[i] ^= 0x5A;
        EXPECT_THROW(decode_checkpoint(bad), FormatError) << i;
    }
    auto data_flip = bytes;
    data_flip[bytes.size() - 8] ^= 1;  // inside the last tensor's payload
    EXPECT_EQ(decode_code(data_flip), FormatCode::CrcMismatch);
}

TEST(Checkpoint, HeaderErrors) {
    auto bytes = encode_checkpoint(checkpoint_from_store(random_store<float>(2)));
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_EQ(decode_code(magic), FormatCode::BadMagic);
    auto version = bytes;
    version[4] = 9;
    EXPECT_EQ(decode_code(version), FormatCode::BadVersion);
    auto extra = bytes;
    extra.insert(extra.end() - 4, 0);
    EXPECT_EQ(decode_code(extra), FormatCode::Malformed);
}

TEST(Checkpoint, LoadRejectsMismatchedModels) {
    const auto ck = checkpoint_from_store(random_store<float>(1));
    ParamStore<float> fewer;
    fewer.add("a.w", Group::Decoder, Tensor<float>({3, 4}));
    EXPECT_THROW(load_into_store(ck, fewer), FormatError);
    auto renamed = ck;
    renamed.entries[0].name = "zzz";
    auto dst = random_store<float>(2);
    EXPECT_THROW(load_into_store(renamed, dst), FormatError);
    ParamStore<float> reshaped;
    reshaped.add("a.w", Group::Decoder, Tensor<float>({4, 3}));
    reshaped.add("b", Group::Decoder, Tensor<float>({5}));
    reshaped.add("c.deep", Group::Decoder, Tensor<float>({2, 1, 3}));
    EXPECT_THROW(load_into_store(ck, reshaped), FormatError);
}

TEST(Checkpoint, FileWriteIsAtomicAndReadable) {
    const fs::path dir = temp_dir("atomic");
    const fs::path path = dir / "m.ckpt";
    const auto src = random_store<float>(8);
    write_checkpoint(path, checkpoint_from_store(src));
    EXPECT_TRUE(fs::exists(path));
    EXPECT_FALSE(fs::exists(dir / "m.ckpt.tmp"));
    auto dst = random_store<float>(9);
    load_into_store(read_checkpoint(path), dst);
    EXPECT_TRUE(std::equal(dst.value(2).data().begin(), dst.value(2).data().end(), src.value(2).data().begin()));

    // A failed write leaves the previous file untouched.
    const auto before = read_checkpoint(path);
    fs::create_directories(dir / "m.ckpt.tmp");
    EXPECT_THROW(write_checkpoint(path, checkpoint_from_store(random_store<float>(10))), FormatError);
    EXPECT_EQ(encode_checkpoint(read_checkpoint(path)), encode_checkpoint(before));
}

TEST(Checkpoint, MissingFileIsIoError) {
    try {
        read_checkpoint("/nonexistent/dir/x.ckpt");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.code(), FormatCode::Io);
        EXPECT_EQ(exit_code_for(e.kind()), 2);
    }
}
