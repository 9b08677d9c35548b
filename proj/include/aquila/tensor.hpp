// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "aquila/errors.hpp"

namespace aquila {

using Dims = std::vector<std::size_t>;

inline std::string dims_str(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t dims_product(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major tensor. Value type; copying copies the data.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Dims dims, T fill = T{}) : dims_(std::move(dims)), data_(dims_product(dims_), fill) {
        check_dims();
    }

    Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
        check_dims();
        if (dims_product(dims_) != data_.size()) {
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match dims " +
                             dims_str(dims_));
        }
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor vector(std::initializer_list<T> values) {
        return Tensor({values.size()}, std::vector<T>(values));
    }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const {
        require_rank(2);
        return dims_[0];
    }
    std::size_t cols() const {
        require_rank(2);
        return dims_[1];
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * dims_[1], dims_[1]}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * dims_[1], dims_[1]}; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Dims dims) const {
        if (dims_product(dims) != size()) throw ShapeError("cannot reshape " + dims_str(dims_) + " to " + dims_str(dims));
        return Tensor(std::move(dims), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(dims_, std::move(out));
    }

    bool same_shape(const Tensor& o) const noexcept { return dims_ == o.dims_; }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.dims_ == b.dims_ && a.data_ == b.data_; }

    void require_rank(std::size_t r) const {
        if (dims_.size() != r) {
            throw ShapeError("expected rank " + std::to_string(r) + ", got " + dims_str(dims_));
        }
    }

private:
    void check_dims() const {
        for (auto d : dims_) {
            if (d == 0) throw ShapeError("dimensions must be positive, got " + dims_str(dims_));
        }
    }

    Dims dims_;
    std::vector<T> data_;
};

namespace kernels {

// C[m×n] += A[m×k] · B[k×n]
template <class T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T{0}) continue;
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m×n] += Aᵀ · B where A is [k×m] and B is [k×n]
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* ap = a + p * m;
        const T* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = ap[i];
            if (av == T{0}) continue;
            T* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <class T>
void transpose(const T* a, T* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
}

// C[m×n] += A[m×k] · B[n×k]ᵀ. B is transposed once so the inner loop stays contiguous.
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<T> bt(k * n);
    transpose(b, bt.data(), n, k);
    gemm_nn_acc(a, bt.data(), c, m, k, n);
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s{0};
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace kernels

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_rank(2);
    b.require_rank(2);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul inner dims differ: " + dims_str(a.dims()) + " · " + dims_str(b.dims()));
    }
    Tensor<T> out({a.rows(), b.cols()});
    kernels::gemm_nn_acc(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
    return out;
}

/// a · bᵀ
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_rank(2);
    b.require_rank(2);
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt inner dims differ: " + dims_str(a.dims()) + " · " + dims_str(b.dims()) + "ᵀ");
    }
    Tensor<T> out({a.rows(), b.rows()});
    kernels::gemm_nt_acc(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.rows());
    return out;
}

/// aᵀ · b
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_rank(2);
    b.require_rank(2);
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn inner dims differ: " + dims_str(a.dims()) + "ᵀ · " + dims_str(b.dims()));
    }
    Tensor<T> out({a.cols(), b.cols()});
    kernels::gemm_tn_acc(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
    return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    a.require_rank(2);
    Tensor<T> out({a.cols(), a.rows()});
    kernels::transpose(a.data().data(), out.data().data(), a.rows(), a.cols());
    return out;
}

template <class T>
void check_finite(const Tensor<T>& x, const char* where) {
    for (T v : x.data()) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
    }
}

/// Row-wise softmax, stabilized by subtracting the row maximum.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    x.require_rank(2);
    Tensor<T> out(x.dims());
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        T mx = in[0];
        for (T v : in) {
            if (std::isnan(v)) throw NumericError("NaN input to softmax");
            mx = std::max(mx, v);
        }
        T sum{0};
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
    }
    return out;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    x.require_rank(2);
    const std::size_t n = x.cols();
    if (gamma.size() != n || beta.size() != n) throw ShapeError("layer_norm affine params must have length " + std::to_string(n));
    Tensor<T> out(x.dims());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        T mean{0};
        for (T v : in) mean += v;
        mean /= static_cast<T>(n);
        T var{0};
        for (T v : in) var += (v - mean) * (v - mean);
        var /= static_cast<T>(n);
        const T rstd = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) o[j] = (in[j] - mean) * rstd * gamma[j] + beta[j];
    }
    return out;
}

namespace detail {
template <class T>
constexpr T gelu_k0 = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
template <class T>
constexpr T gelu_k1 = static_cast<T>(0.044715);
}  // namespace detail

/// GELU, tanh approximation.
template <class T>
T gelu(T x) {
    const T u = detail::gelu_k0<T> * (x + detail::gelu_k1<T> * x * x * x);
    return T{0.5} * x * (T{1} + std::tanh(u));
}

template <class T>
T gelu_derivative(T x) {
    const T u = detail::gelu_k0<T> * (x + detail::gelu_k1<T> * x * x * x);
    const T t = std::tanh(u);
    const T du = detail::gelu_k0<T> * (T{1} + T{3} * detail::gelu_k1<T> * x * x);
    return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * du;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
    return out;
}

/// Mean negative log-likelihood over positions whose mask flag is set.
template <class T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets, const std::vector<bool>& mask) {
    logits.require_rank(2);
    const std::size_t rows = logits.rows(), v = logits.cols();
    if (targets.size() != rows || mask.size() != rows) throw ShapeError("cross_entropy targets/mask length must equal logits rows");
    T total{0};
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) throw ShapeError("target id out of range");
        auto in = logits.row(r);
        T mx = *std::max_element(in.begin(), in.end());
        T sum{0};
        for (T x : in) sum += std::exp(x - mx);
        total += std::log(sum) + mx - in[static_cast<std::size_t>(targets[r])];
        ++count;
    }
    if (count == 0) throw NumericError("cross_entropy: every position is masked (empty loss)");
    return total / static_cast<T>(count);
}

}  // namespace aquila
