// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <random>
#include <vector>

#include "aquila/autograd.hpp"
#include "aquila/gradcheck.hpp"

namespace aquila::testing {

inline Tensor<double> randn(Dims dims, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Tensor<double> t(std::move(dims));
    for (auto& v : t.data()) v = d(rng);
    return t;
}

/// Σ x ⊙ w, a scalar probe that gives every output element a distinct upstream gradient.
inline Var weighted_sum(Graph<double>& g, Var x, const Tensor<double>& w) {
    const Tensor<double>& xv = g.value(x);
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * w[i];
    return g.push(Tensor<double>({1}, std::vector<double>{s}), g.requires_grad(x), [x, w](Graph<double>& g, const Tensor<double>& go) {
        Tensor<double>& gx = g.grad_slot(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[0] * w[i];
    });
}

using OpBuilder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

/// Largest per-input relative error between backprop and central differences for
/// f(inputs) = Σ op(inputs) ⊙ w.
inline double op_grad_error(const OpBuilder& op, const std::vector<Tensor<double>>& inputs, std::uint64_t seed = 11,
                            FaultOp fault = FaultOp::None) {
    std::mt19937_64 rng(seed);
    Tensor<double> w;
    {
        Graph<double> g;
        std::vector<Var> vs;
        for (const auto& x : inputs) vs.push_back(g.constant(x));
        w = randn(g.value(op(g, vs)).dims(), rng);
    }
    Graph<double> g;
    g.inject_fault(fault);
    std::vector<Var> vs;
    for (const auto& x : inputs) vs.push_back(g.input(x));
    g.backward(weighted_sum(g, op(g, vs), w));
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&](const Tensor<double>& probe) {
            Graph<double> fg;
            std::vector<Var> fv;
            for (std::size_t j = 0; j < inputs.size(); ++j) fv.push_back(fg.constant(j == k ? probe : inputs[j]));
            return fg.value(weighted_sum(fg, op(fg, fv), w))[0];
        };
        worst = std::max(worst, relative_error(g.grad(vs[k]), finite_diff_grad<double>(f, inputs[k])));
    }
    return worst;
}

}  // namespace aquila::testing
