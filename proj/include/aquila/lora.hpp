// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <string>

#include "aquila/autograd.hpp"
#include "aquila/tensor.hpp"

namespace aquila {

/// Low-rank additive delta (alpha / rank)·B·A on a frozen [d_out × d_in] weight.
template <class T>
struct LoraAdapter {
    std::string target;
    Tensor<T> down;  // A: [rank × d_in]
    Tensor<T> up;    // B: [d_out × rank]
    std::size_t rank = 0;
    T alpha{1};
    T dropout{0};

    T scaling() const { return alpha / static_cast<T>(rank); }

    Tensor<T> delta() const {
        Tensor<T> d = matmul(up, down);
        for (auto& v : d.data()) v *= scaling();
        return d;
    }
};

inline void check_lora_rank(std::size_t rank, std::size_t d_in, std::size_t d_out) {
    if (rank == 0 || rank >= std::min(d_in, d_out)) {
        throw ConfigError("LoRA rank " + std::to_string(rank) + " must be in [1, min(d_in, d_out)) = [1, " +
                          std::to_string(std::min(d_in, d_out)) + ")");
    }
}

/// x·(W + (alpha/r)·B·A)ᵀ evaluated as x·Wᵀ + (alpha/r)·(x·Aᵀ)·Bᵀ. W is not modified.
template <class T>
Tensor<T> lora_apply(const Tensor<T>& x, const Tensor<T>& base_weight, const LoraAdapter<T>& adapter) {
    base_weight.require_rank(2);
    check_lora_rank(adapter.rank, base_weight.cols(), base_weight.rows());
    if (adapter.down.dims() != Dims{adapter.rank, base_weight.cols()} ||
        adapter.up.dims() != Dims{base_weight.rows(), adapter.rank}) {
        throw ShapeError("LoRA factor dims do not match base weight " + dims_str(base_weight.dims()));
    }
    Tensor<T> out = matmul_nt(x, base_weight);
    Tensor<T> low = matmul_nt(matmul_nt(x, adapter.down), adapter.up);
    const T s = adapter.scaling();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * low[i];
    return out;
}

namespace ag {

/// Graph form of lora_apply with optional inverted dropout on the adapter input.
template <class T, class Rng>
Var lora_linear(Graph<T>& g, Var x, Var weight, Var down, Var up, T scaling, T dropout_p, Rng* rng) {
    Var base = linear(g, x, weight);
    Var xin = (rng && dropout_p > T{0}) ? dropout(g, x, dropout_p, *rng) : x;
    Var low = linear(g, linear(g, xin, down), up);
    return add(g, base, scale(g, low, scaling));
}

}  // namespace ag
}  // namespace aquila
