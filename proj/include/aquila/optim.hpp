// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "aquila/errors.hpp"
#include "aquila/params.hpp"
#include "aquila/tensor.hpp"

namespace aquila {

/// Linear ramp 0 → base_lr over ⌈warmup_ratio·total⌉ steps, then half-cosine down to 0 at total.
inline double cosine_warmup_lr(std::size_t step, std::size_t total_steps, double warmup_ratio, double base_lr) {
    if (total_steps == 0 || step > total_steps) throw ConfigError("schedule step out of range");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) throw ConfigError("warmup_ratio must be in [0, 1)");
    const auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double span = static_cast<double>(total_steps - warmup);
    if (span == 0.0) return base_lr;
    const double progress = static_cast<double>(step - warmup) / span;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// First/second moments per trainable tensor. Tensors absent from `moments` have never been
/// updated, which is how frozen parameters stay free of optimizer state.
template <class T>
struct OptimState {
    struct Moments {
        Tensor<T> m, v;
    };
    std::map<ParamId, Moments> moments;
    std::size_t step = 0;
};

/// One bias-corrected AdamW update with decoupled weight decay, applied in place.
template <class T>
void adamw_update(Tensor<T>& param, const Tensor<T>& grad, typename OptimState<T>::Moments& mom, std::size_t step,
                  double lr, const AdamWConfig& cfg) {
    if (!param.same_shape(grad)) throw ShapeError("gradient dims " + dims_str(grad.dims()) + " do not match parameter " + dims_str(param.dims()));
    if (mom.m.empty()) {
        mom.m = Tensor<T>(param.dims());
        mom.v = Tensor<T>(param.dims());
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        const double m = cfg.beta1 * static_cast<double>(mom.m[i]) + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * static_cast<double>(mom.v[i]) + (1.0 - cfg.beta2) * g * g;
        mom.m[i] = static_cast<T>(m);
        mom.v[i] = static_cast<T>(v);
        const double mh = m / bc1, vh = v / bc2;
        param[i] = static_cast<T>(static_cast<double>(param[i]) * decay - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
}

/// Applies one AdamW step to every parameter present in `grads`. All gradients are checked before
/// any parameter is touched, so a non-finite gradient leaves the model and state unchanged.
template <class T>
void adamw_step(ParamStore<T>& store, const std::map<ParamId, Tensor<T>>& grads, OptimState<T>& state, double lr,
                const AdamWConfig& cfg) {
    for (const auto& [id, g] : grads) {
        for (T x : g.data())
            if (!std::isfinite(static_cast<double>(x))) throw NumericError("non-finite gradient for " + store[id].name);
    }
    ++state.step;
    for (const auto& [id, g] : grads) adamw_update(store.value(id), g, state.moments[id], state.step, lr, cfg);
}

template <class T>
double global_grad_norm(const std::map<ParamId, Tensor<T>>& grads) {
    double s = 0.0;
    for (const auto& [id, g] : grads)
        for (T x : g.data()) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
}

/// Rescales gradients so their global L2 norm is at most max_norm (≤ 0 disables). Returns the
/// norm before clipping.
template <class T>
double clip_grad_norm(std::map<ParamId, Tensor<T>>& grads, double max_norm) {
    const double norm = global_grad_norm(grads);
    if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto& [id, g] : grads)
            for (T& x : g.data()) x *= s;
    }
    return norm;
}

}  // namespace aquila
