// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "aquila/tensor.hpp"

namespace aquila {

/// Central-difference estimate of d f / d x, one coordinate at a time.
template <class T, class F>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& x, T h = T{1e-5}) {
    Tensor<T> probe = x;
    Tensor<T> out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T orig = probe[i];
        probe[i] = orig + h;
        const T fp = f(static_cast<const Tensor<T>&>(probe));
        probe[i] = orig - h;
        const T fm = f(static_cast<const Tensor<T>&>(probe));
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("finite_diff_grad: f is not finite near x");
        out[i] = (fp - fm) / (T{2} * h);
    }
    return out;
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂); zero when both are exactly zero.
template <class T>
T relative_error(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("relative_error: " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
    T diff{0}, na{0}, nb{0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const T denom = std::sqrt(std::max(na, nb));
    if (denom == T{0}) return T{0};
    return std::sqrt(diff) / denom;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
    T m{0};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace aquila
