// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "aquila/optim.hpp"

using namespace aquila;

TEST(Schedule, Endpoints) {
    EXPECT_EQ(cosine_warmup_lr(0, 2000, 0.06, 1e-3), 0.0);
    EXPECT_DOUBLE_EQ(cosine_warmup_lr(120, 2000, 0.06, 1e-3), 1e-3);  // ⌈0.06·2000⌉ = 120
    EXPECT_NEAR(cosine_warmup_lr(2000, 2000, 0.06, 1e-3), 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(cosine_warmup_lr(60, 2000, 0.06, 1e-3), 5e-4);
    // Warmup length rounds up: ⌈0.03·10⌉ = 1.
    EXPECT_DOUBLE_EQ(cosine_warmup_lr(1, 10, 0.03, 4e-5), 4e-5);
}

TEST(Schedule, NonNegativeAndUnimodal) {
    for (double ratio : {0.0, 0.03, 0.06, 0.5}) {
        const std::size_t total = 333;
        double prev = -1.0;
        bool decreasing = false;
        for (std::size_t s = 0; s <= total; ++s) {
            const double lr = cosine_warmup_lr(s, total, ratio, 1.0);
            EXPECT_GE(lr, 0.0);
            if (lr < prev) decreasing = true;
            if (decreasing) {
                EXPECT_LE(lr, prev + 1e-15) << "ratio " << ratio << " step " << s;
            }
            prev = lr;
        }
    }
}

TEST(Schedule, Preconditions) {
    EXPECT_THROW(cosine_warmup_lr(11, 10, 0.1, 1.0), ConfigError);
    EXPECT_THROW(cosine_warmup_lr(0, 10, 1.0, 1.0), ConfigError);
    EXPECT_THROW(cosine_warmup_lr(0, 0, 0.1, 1.0), ConfigError);
}

namespace {

struct OneParam {
    ParamStore<double> store;
    ParamId id;
    explicit OneParam(std::vector<double> values) {
        const std::size_t n = values.size();
        id = store.add("p", Group::Fusion, Tensor<double>({n}, std::move(values)));
    }
};

}  // namespace

TEST(AdamW, ZeroGradientWithoutDecayLeavesParamsUnchanged) {
    OneParam p({0.5, -2.0});
    OptimState<double> st;
    adamw_step(p.store, {{p.id, Tensor<double>({2})}}, st, 0.1, AdamWConfig{0.9, 0.95, 1e-8, 0.0});
    EXPECT_EQ(p.store.value(p.id), Tensor<double>({2}, std::vector<double>{0.5, -2.0}));
}

TEST(AdamW, ZeroGradientWithDecayScalesParams) {
    OneParam p({0.5, -2.0});
    OptimState<double> st;
    adamw_step(p.store, {{p.id, Tensor<double>({2})}}, st, 0.1, AdamWConfig{0.9, 0.95, 1e-8, 0.05});
    EXPECT_DOUBLE_EQ(p.store.value(p.id)[0], 0.5 * (1 - 0.1 * 0.05));
    EXPECT_DOUBLE_EQ(p.store.value(p.id)[1], -2.0 * (1 - 0.1 * 0.05));
}

TEST(AdamW, FirstAndSecondStepHandArithmetic) {
    OneParam p({0.5, -1.0});
    OptimState<double> st;
    const AdamWConfig cfg{0.9, 0.95, 1e-8, 0.01};
    const Tensor<double> g({2}, std::vector<double>{0.2, -3.0});
    adamw_step(p.store, {{p.id, g}}, st, 0.1, cfg);
    // θ(1 − lr·λ) − lr·g/(|g| + eps) after bias correction.
    EXPECT_NEAR(p.store.value(p.id)[0], 0.3995000049999997, 1e-15);
    EXPECT_NEAR(p.store.value(p.id)[1], -0.8990000003333333, 1e-15);
    adamw_step(p.store, {{p.id, g}}, st, 0.1, cfg);
    EXPECT_NEAR(p.store.value(p.id)[0], 0.2991005099949995, 1e-15);
    EXPECT_EQ(st.step, 2u);
}

TEST(AdamW, NonFiniteGradientAbortsBeforeAnyUpdate) {
    ParamStore<double> store;
    const ParamId a = store.add("a", Group::Fusion, Tensor<double>({1}, 1.0));
    const ParamId b = store.add("b", Group::Fusion, Tensor<double>({1}, 1.0));
    OptimState<double> st;
    std::map<ParamId, Tensor<double>> grads{{a, Tensor<double>({1}, 0.5)},
                                            {b, Tensor<double>({1}, std::numeric_limits<double>::infinity())}};
    EXPECT_THROW(adamw_step(store, grads, st, 0.1, AdamWConfig{}), NumericError);
    EXPECT_EQ(store.value(a)[0], 1.0);
    EXPECT_EQ(st.step, 0u);
    EXPECT_TRUE(st.moments.empty());
}

TEST(AdamW, StateOnlyForUpdatedTensors) {
    ParamStore<double> store;
    const ParamId a = store.add("a", Group::Fusion, Tensor<double>({3}, 1.0));
    store.add("frozen", Group::Decoder, Tensor<double>({3}, 1.0));
    OptimState<double> st;
    adamw_step(store, {{a, Tensor<double>({3}, 0.1)}}, st, 0.01, AdamWConfig{});
    EXPECT_EQ(st.moments.size(), 1u);
    EXPECT_EQ(st.moments.at(a).m.dims(), store.value(a).dims());
    EXPECT_THROW(adamw_step(store, {{a, Tensor<double>({2})}}, st, 0.01, AdamWConfig{}), ShapeError);
}

TEST(Clip, GlobalNormRescaling) {
    std::map<ParamId, Tensor<double>> g{{0, Tensor<double>({2}, std::vector<double>{3, 0})}, {1, Tensor<double>({1}, 4.0)}};
    EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
    EXPECT_NEAR(global_grad_norm(g), 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(g.at(0)[0], 0.6);
    std::map<ParamId, Tensor<double>> small{{0, Tensor<double>({1}, 0.5)}};
    clip_grad_norm(small, 1.0);
    EXPECT_EQ(small.at(0)[0], 0.5);
    clip_grad_norm(g, 0.0);  // disabled
    EXPECT_NEAR(global_grad_norm(g), 1.0, 1e-15);
}
