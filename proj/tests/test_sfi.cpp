// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "aquila/sfi.hpp"
#include "grad_helpers.hpp"

using namespace aquila;
using aquila::testing::randn;

namespace {

/// Random projected features for side list `sides` with width d.
MultiScaleFeatures<double> random_features(const std::vector<std::size_t>& sides, std::size_t d, std::mt19937_64& rng) {
    MultiScaleFeatures<double> f;
    f.projected = true;
    f.sides = sides;
    for (auto s : sides) f.grids.push_back(randn({s * s, d}, rng));
    return f;
}

std::vector<std::size_t> sides_for(std::size_t L, std::size_t scales) {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < scales; ++s) out.push_back(L << (scales - 1 - s));
    return out;
}

}  // namespace

TEST(Sfi, MatchesNaiveReference) {
    std::mt19937_64 rng(10);
    for (std::size_t L : {1, 2, 4}) {
        for (std::size_t S : {1, 2, 4}) {
            for (std::size_t D : {4, 8}) {
                const auto sides = sides_for(L, S);
                const RegionMap map(L, sides);
                Rng prng(L * 100 + S * 10 + D);
                const auto params = SfiParams<double>::random(L, D, S, prng);
                const auto feats = random_features(sides, D, rng);
                const auto fast = sfi_attend(params, feats, map);
                const auto ref = sfi_reference(params, feats, map);
                EXPECT_LE(max_abs_diff(fast, ref), 1e-10) << "L=" << L << " S=" << S << " D=" << D;
            }
        }
    }
}

TEST(Sfi, UniformWeightsWhenKeysCoincide) {
    // Sides [16, 8, 4, 2] under L = 2 give k = [8, 4, 2, 1]: 85 keys per query, as in the
    // reference geometry. Zero key maps make every logit equal.
    const std::vector<std::size_t> sides{16, 8, 4, 2};
    const RegionMap map(2, sides);
    ASSERT_EQ(map.kv_count(), 85u);
    std::mt19937_64 rng(11);
    Rng prng(12);
    auto params = SfiParams<double>::random(2, 4, 4, prng);
    for (auto& w : params.w_k) w = Tensor<double>(w.dims());
    const auto feats = random_features(sides, 4, rng);
    const auto weights = sfi_attention_weights(params, feats, map);
    for (double w : weights.data()) EXPECT_NEAR(w, 1.0 / 85.0, 1e-15);

    const auto out = sfi_attend(params, feats, map);
    const auto q = matmul_nt(params.query, params.w_q);
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> mean(4, 0.0);
        for (std::size_t s = 0; s < 4; ++s) {
            const auto v = matmul_nt(feats.grids[s], params.w_v[s]);
            for (auto idx : map.region(i, s))
                for (std::size_t c = 0; c < 4; ++c) mean[c] += v(idx, c) / 85.0;
        }
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(i, c), q(i, c) + mean[c], 1e-12);
    }
}

TEST(Sfi, OutputDependsOnlyOnOwnRegion) {
    const std::vector<std::size_t> sides{8, 4};
    const RegionMap map(2, sides);
    std::mt19937_64 rng(13);
    Rng prng(14);
    const auto params = SfiParams<double>::random(2, 6, 2, prng);
    const auto feats = random_features(sides, 6, rng);
    const auto base = sfi_attend(params, feats, map);
    // Perturb one token of the finest scale inside query 0's region.
    const std::size_t token = map.region(0, 0)[5];
    auto perturbed = feats;
    perturbed.grids[0](token, 2) += 0.75;
    const auto out = sfi_attend(params, perturbed, map);
    for (std::size_t i = 0; i < 4; ++i) {
        bool same = true;
        for (std::size_t c = 0; c < 6; ++c) same = same && out(i, c) == base(i, c);
        EXPECT_EQ(same, i != 0) << "query " << i;
    }
}

TEST(Sfi, InvariantToTokenOrderWithinRegion) {
    // With L = 1 every token is in the single region; permuting tokens within a scale only
    // reorders the softmax terms.
    const std::vector<std::size_t> sides{4, 2, 1};
    const RegionMap map(1, sides);
    std::mt19937_64 rng(15);
    Rng prng(16);
    const auto params = SfiParams<double>::random(1, 8, 3, prng);
    const auto feats = random_features(sides, 8, rng);
    auto shuffled = feats;
    for (auto& grid : shuffled.grids) {
        std::vector<std::size_t> perm(grid.rows());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        Tensor<double> g2(grid.dims());
        for (std::size_t r = 0; r < perm.size(); ++r) std::copy(grid.row(perm[r]).begin(), grid.row(perm[r]).end(), g2.row(r).begin());
        grid = g2;
    }
    EXPECT_LE(max_abs_diff(sfi_attend(params, feats, map), sfi_attend(params, shuffled, map)), 1e-13);
}

TEST(Sfi, GraphGradientMatchesFiniteDifferences) {
    const std::vector<std::size_t> sides{4, 2};
    const RegionMap map(2, sides);
    std::mt19937_64 rng(17);
    auto op = [&map](Graph<double>& g, const std::vector<Var>& v) {
        SfiVars p{v[1], {v[2], v[3]}, {v[4], v[5]}};
        return sfi_attend(g, v[0], p, {v[6], v[7]}, map);
    };
    std::vector<Tensor<double>> in{randn({4, 3}, rng)};
    for (int i = 0; i < 5; ++i) in.push_back(randn({3, 3}, rng, 0.6));
    in.push_back(randn({16, 3}, rng));
    in.push_back(randn({4, 3}, rng));
    EXPECT_LT(aquila::testing::op_grad_error(op, in), 1e-7);
}

TEST(Sfi, ScaleCountMismatchIsShapeError) {
    const RegionMap map(2, {4, 2});
    std::mt19937_64 rng(18);
    Rng prng(19);
    const auto params = SfiParams<double>::random(2, 4, 1, prng);
    EXPECT_THROW(sfi_attend(params, random_features({4, 2}, 4, rng), map), ShapeError);
    EXPECT_THROW(sfi_reference(params, random_features({4, 2}, 4, rng), map), ShapeError);
}

TEST(Concat, BilinearMatrixProperties) {
    for (auto [src, dst] : {std::pair<std::size_t, std::size_t>{4, 2}, {2, 4}, {8, 4}, {3, 3}}) {
        const auto m = bilinear_matrix<double>(src, dst);
        for (std::size_t r = 0; r < m.rows(); ++r) {
            double s = 0;
            for (double v : m.row(r)) s += v;
            EXPECT_NEAR(s, 1.0, 1e-14);
        }
    }
    // Halving averages each 2×2 block.
    const auto m = bilinear_matrix<double>(4, 2);
    for (std::size_t idx : {0, 1, 4, 5}) EXPECT_DOUBLE_EQ(m(0, idx), 0.25);
    // Same size is the identity.
    const auto id = bilinear_matrix<double>(3, 3);
    for (std::size_t r = 0; r < 9; ++r)
        for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(id(r, c), r == c ? 1.0 : 0.0);
}

TEST(Concat, FusionShapeAndMix) {
    std::mt19937_64 rng(20);
    const auto feats = random_features({4, 2}, 3, rng);
    const auto mix = randn({3, 6}, rng);
    const auto out = concat_fusion(feats, 2, mix);
    EXPECT_EQ(out.dims(), (Dims{4, 3}));
    // Row 0: average of scale-0 block {0,1,4,5} concatenated with scale-1 token 0, then mixed.
    std::vector<double> cat(6, 0.0);
    for (std::size_t idx : {0, 1, 4, 5})
        for (std::size_t c = 0; c < 3; ++c) cat[c] += feats.grids[0](idx, c) / 4.0;
    for (std::size_t c = 0; c < 3; ++c) cat[3 + c] = feats.grids[1](0, c);
    for (std::size_t o = 0; o < 3; ++o) {
        double y = 0;
        for (std::size_t c = 0; c < 6; ++c) y += mix(o, c) * cat[c];
        EXPECT_NEAR(out(0, o), y, 1e-12);
    }
}
