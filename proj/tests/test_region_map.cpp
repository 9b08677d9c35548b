// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "aquila/positional.hpp"
#include "aquila/pyramid.hpp"
#include "aquila/region_map.hpp"

using namespace aquila;

TEST(RegionMap, HandExampleLTwoSideFour) {
    const RegionMap map(2, {4});
    EXPECT_EQ(map.region(0, 0), (std::vector<std::size_t>{0, 1, 4, 5}));
    EXPECT_EQ(map.region(1, 0), (std::vector<std::size_t>{2, 3, 6, 7}));
    EXPECT_EQ(map.region(3, 0), (std::vector<std::size_t>{10, 11, 14, 15}));
}

TEST(RegionMap, PartitionInvariantsExhaustive) {
    for (std::size_t L : {1, 2, 4, 8}) {
        for (std::size_t k : {1, 2, 4, 8}) {
            const std::size_t side = L * k;
            const RegionMap map(L, {side});
            std::vector<int> hits(side * side, 0);
            for (std::size_t i = 0; i < L * L; ++i) {
                const auto& reg = map.region(i, 0);
                ASSERT_EQ(reg.size(), k * k);
                const std::size_t qr = i / L, qc = i % L;
                for (std::size_t j = 0; j < reg.size(); ++j) {
                    const std::size_t r = reg[j] / side, c = reg[j] % side;
                    EXPECT_GE(r, qr * k);
                    EXPECT_LT(r, (qr + 1) * k);
                    EXPECT_GE(c, qc * k);
                    EXPECT_LT(c, (qc + 1) * k);
                    if (j > 0) {
                        EXPECT_LT(reg[j - 1], reg[j]);  // row-major within the block
                    }
                    ++hits[reg[j]];
                }
            }
            for (int h : hits) EXPECT_EQ(h, 1) << "L=" << L << " k=" << k;
        }
    }
}

TEST(RegionMap, ReferenceConfiguration) {
    const auto sides = PyramidConfig::reference().sides();
    const RegionMap map(32, sides);
    EXPECT_EQ(map.ratios(), (std::vector<std::size_t>{8, 4, 2, 1}));
    EXPECT_EQ(map.kv_count(), 85u);
    EXPECT_EQ(map.query_count(), 1024u);
    EXPECT_EQ(map.scale_offset(4), 87040u);
}

TEST(RegionMap, StackedRegionIsScaleMajor) {
    const RegionMap map(2, {4, 2});
    EXPECT_EQ(map.stacked_region(3), (std::vector<std::size_t>{10, 11, 14, 15, 16 + 3}));
}

TEST(RegionMap, RejectsIndivisibleSides) {
    EXPECT_THROW(RegionMap(3, {4}), ConfigError);
    EXPECT_THROW(RegionMap(0, {4}), ConfigError);
    EXPECT_THROW(RegionMap(2, {}), ConfigError);
}

TEST(Positional, ChannelLayout) {
    const auto pe = positional_table<double>(4, 8);
    // Token (2, 3): channels 0..3 encode row 2, channels 4..7 encode column 3.
    const auto row = pe.row(2 * 4 + 3);
    EXPECT_DOUBLE_EQ(row[0], std::sin(2.0));
    EXPECT_DOUBLE_EQ(row[1], std::cos(2.0));
    EXPECT_DOUBLE_EQ(row[2], std::sin(2.0 * std::pow(10000.0, -0.5)));
    EXPECT_DOUBLE_EQ(row[4], std::sin(3.0));
    EXPECT_DOUBLE_EQ(row[5], std::cos(3.0));
}

TEST(Positional, RowsDistinctAndBounded) {
    for (std::size_t side : {1, 4, 16, 64}) {
        for (std::size_t dim : {8, 32}) {
            const auto pe = positional_table<double>(side, dim);
            std::set<std::vector<double>> rows;
            for (std::size_t i = 0; i < side * side; ++i) {
                const auto r = pe.row(i);
                for (double v : r) EXPECT_LE(std::abs(v), 1.0);
                rows.emplace(r.begin(), r.end());
            }
            EXPECT_EQ(rows.size(), side * side) << "side=" << side << " dim=" << dim;
        }
    }
}

TEST(Positional, AddPositionalChecksTokenCount) {
    EXPECT_THROW(add_positional(Tensor<double>({5, 4}), 2), ShapeError);
    const auto out = add_positional(Tensor<double>({4, 4}), 2);
    EXPECT_EQ(out, positional_table<double>(2, 4));
}
