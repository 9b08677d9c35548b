// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aquila/tensor.hpp"

namespace aquila {

/// Ops whose backward rule can be deliberately corrupted to exercise the gradient checker.
enum class FaultOp {
    None,
    Linear,
    Gelu,
    LayerNorm,
    CausalAttention,
    RegionAttention,
};

struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const noexcept { return id != npos; }
};

/// Tape for one forward pass. Nodes are appended in evaluation order; backward walks them in
/// reverse and calls each node's rule with the gradient accumulated so far.
template <class T>
class Graph {
public:
    using Backward = std::function<void(Graph&, const Tensor<T>&)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    /// Leaf that collects a gradient.
    Var input(Tensor<T> value) { return push(std::move(value), true, nullptr); }

    /// Leaf bound to an externally owned parameter. The same key always maps to the same node.
    Var param(std::size_t key, const Tensor<T>& value, bool trainable) {
        if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{it->second};
        Node n;
        n.external = &value;
        n.requires_grad = trainable;
        n.param_key = key;
        nodes_.push_back(std::move(n));
        const std::size_t id = nodes_.size() - 1;
        param_nodes_.emplace(key, id);
        return Var{id};
    }

    Var push(Tensor<T> value, bool requires_grad, Backward backward) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    const Tensor<T>& value(Var v) const {
        const Node& n = nodes_.at(v.id);
        return n.external ? *n.external : n.value;
    }

    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

    /// Gradient of the last backward() root with respect to v (zeros if v received none).
    Tensor<T> grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (!n.grad.empty()) return n.grad;
        return Tensor<T>(value(v).dims());
    }

    /// Mutable gradient slot, allocated on first use. Only valid for nodes that require grad.
    Tensor<T>& grad_slot(Var v) {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) n.grad = Tensor<T>(value(v).dims());
        return n.grad;
    }

    void backward(Var root, T seed = T{1}) {
        if (value(root).size() != 1) throw ShapeError("backward root must be a scalar");
        if (!requires_grad(root)) return;
        grad_slot(root)[0] += seed;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            // The rule may allocate grad slots on earlier nodes but never appends, so the
            // reference stays valid.
            n.backward(*this, n.grad);
        }
    }

    /// Visits (key, gradient) for each trainable parameter node that received a gradient.
    template <class F>
    void for_each_param_grad(F&& f) const {
        for (const Node& n : nodes_) {
            if (n.param_key != Var::npos && n.requires_grad && !n.grad.empty()) f(n.param_key, n.grad);
        }
    }

    void inject_fault(FaultOp op) noexcept { fault_ = op; }
    /// Multiplier applied by the named op's backward rule; 1 unless a fault is injected.
    T fault_scale(FaultOp op) const noexcept { return fault_ == op ? T{1.01} : T{1}; }

    std::size_t node_count() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        bool requires_grad = false;
        std::size_t param_key = Var::npos;
        Backward backward;
    };

    // A deque keeps references returned by value() and grad() valid while the graph grows.
    std::deque<Node> nodes_;
    std::unordered_map<std::size_t, std::size_t> param_nodes_;
    FaultOp fault_ = FaultOp::None;
};

namespace ag {

template <class T>
bool any_grad(const Graph<T>& g, std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (g.requires_grad(v)) return true;
    return false;
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src, T scale = T{1}) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
    Tensor<T> out = aquila::matmul(g.value(a), g.value(b));
    return g.push(std::move(out), any_grad(g, {a, b}), [a, b](Graph<T>& g, const Tensor<T>& go) {
        const Tensor<T>& av = g.value(a);
        const Tensor<T>& bv = g.value(b);
        if (g.requires_grad(a)) {
            kernels::gemm_nt_acc(go.data().data(), bv.data().data(), g.grad_slot(a).data().data(), go.rows(), go.cols(),
                                 bv.rows());
        }
        if (g.requires_grad(b)) {
            kernels::gemm_tn_acc(av.data().data(), go.data().data(), g.grad_slot(b).data().data(), av.rows(), av.cols(),
                                 go.cols());
        }
    });
}

/// x · Wᵀ (+ bias). W is stored [out × in].
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var bias = Var{}) {
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& wv = g.value(w);
    xv.require_rank(2);
    wv.require_rank(2);
    if (xv.cols() != wv.cols()) {
        throw ShapeError("linear: input width " + std::to_string(xv.cols()) + " vs weight " + dims_str(wv.dims()));
    }
    Tensor<T> out({xv.rows(), wv.rows()});
    if (bias.valid()) {
        const Tensor<T>& bv = g.value(bias);
        if (bv.size() != wv.rows()) throw ShapeError("linear: bias length mismatch");
        for (std::size_t r = 0; r < out.rows(); ++r) std::copy(bv.data().begin(), bv.data().end(), out.row(r).begin());
    }
    kernels::gemm_nt_acc(xv.data().data(), wv.data().data(), out.data().data(), xv.rows(), xv.cols(), wv.rows());
    const bool rg = any_grad(g, {x, w}) || (bias.valid() && g.requires_grad(bias));
    return g.push(std::move(out), rg, [x, w, bias](Graph<T>& g, const Tensor<T>& go) {
        const T s = g.fault_scale(FaultOp::Linear);
        const Tensor<T>& xv = g.value(x);
        const Tensor<T>& wv = g.value(w);
        if (g.requires_grad(x)) {
            Tensor<T>& gx = g.grad_slot(x);
            kernels::gemm_nn_acc(go.data().data(), wv.data().data(), gx.data().data(), go.rows(), go.cols(), wv.cols());
        }
        if (g.requires_grad(w)) {
            Tensor<T>& gw = g.grad_slot(w);
            if (s != T{1}) {
                Tensor<T> tmp(gw.dims());
                kernels::gemm_tn_acc(go.data().data(), xv.data().data(), tmp.data().data(), go.rows(), go.cols(), xv.cols());
                accumulate(gw, tmp, s);
            } else {
                kernels::gemm_tn_acc(go.data().data(), xv.data().data(), gw.data().data(), go.rows(), go.cols(), xv.cols());
            }
        }
        if (bias.valid() && g.requires_grad(bias)) {
            Tensor<T>& gb = g.grad_slot(bias);
            for (std::size_t r = 0; r < go.rows(); ++r) {
                auto row = go.row(r);
                for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
            }
        }
    });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    if (!av.same_shape(bv)) throw ShapeError("add: " + dims_str(av.dims()) + " vs " + dims_str(bv.dims()));
    Tensor<T> out = av;
    accumulate(out, bv);
    return g.push(std::move(out), any_grad(g, {a, b}), [a, b](Graph<T>& g, const Tensor<T>& go) {
        if (g.requires_grad(a)) accumulate(g.grad_slot(a), go);
        if (g.requires_grad(b)) accumulate(g.grad_slot(b), go);
    });
}

template <class T>
Var scale(Graph<T>& g, Var a, T s) {
    Tensor<T> out = g.value(a);
    for (auto& v : out.data()) v *= s;
    return g.push(std::move(out), g.requires_grad(a), [a, s](Graph<T>& g, const Tensor<T>& go) {
        accumulate(g.grad_slot(a), go, s);
    });
}

template <class T>
Var gelu(Graph<T>& g, Var a) {
    Tensor<T> out = aquila::gelu(g.value(a));
    return g.push(std::move(out), g.requires_grad(a), [a](Graph<T>& g, const Tensor<T>& go) {
        const T s = g.fault_scale(FaultOp::Gelu);
        const Tensor<T>& av = g.value(a);
        Tensor<T>& ga = g.grad_slot(a);
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += s * go[i] * gelu_derivative(av[i]);
    });
}

template <class T>
Var softmax_rows(Graph<T>& g, Var a) {
    Tensor<T> out = aquila::softmax_rows(g.value(a));
    Tensor<T> saved = out;
    return g.push(std::move(out), g.requires_grad(a), [a, p = std::move(saved)](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>& ga = g.grad_slot(a);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            auto pr = p.row(r);
            auto gr = go.row(r);
            const T inner = kernels::dot(pr.data(), gr.data(), pr.size());
            auto dst = ga.row(r);
            for (std::size_t j = 0; j < pr.size(); ++j) dst[j] += pr[j] * (gr[j] - inner);
        }
    });
}

template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T{1e-5}) {
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& gv = g.value(gamma);
    const Tensor<T>& bv = g.value(beta);
    xv.require_rank(2);
    const std::size_t rows = xv.rows(), n = xv.cols();
    if (gv.size() != n || bv.size() != n) throw ShapeError("layer_norm affine params must have length " + std::to_string(n));
    Tensor<T> xhat(xv.dims());
    std::vector<T> rstd(rows);
    Tensor<T> out(xv.dims());
    for (std::size_t r = 0; r < rows; ++r) {
        auto in = xv.row(r);
        T mean{0};
        for (T v : in) mean += v;
        mean /= static_cast<T>(n);
        T var{0};
        for (T v : in) var += (v - mean) * (v - mean);
        var /= static_cast<T>(n);
        rstd[r] = T{1} / std::sqrt(var + eps);
        auto xh = xhat.row(r);
        auto o = out.row(r);
        for (std::size_t j = 0; j < n; ++j) {
            xh[j] = (in[j] - mean) * rstd[r];
            o[j] = xh[j] * gv[j] + bv[j];
        }
    }
    const bool rg = any_grad(g, {x, gamma, beta});
    return g.push(std::move(out), rg,
                  [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g, const Tensor<T>& go) {
                      const T s = g.fault_scale(FaultOp::LayerNorm);
                      const Tensor<T>& gv = g.value(gamma);
                      const std::size_t n = xhat.cols();
                      if (g.requires_grad(gamma) || g.requires_grad(beta)) {
                          for (std::size_t r = 0; r < xhat.rows(); ++r) {
                              auto gr = go.row(r);
                              auto xh = xhat.row(r);
                              if (g.requires_grad(gamma)) {
                                  Tensor<T>& gg = g.grad_slot(gamma);
                                  for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * xh[j];
                              }
                              if (g.requires_grad(beta)) {
                                  Tensor<T>& gb = g.grad_slot(beta);
                                  for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
                              }
                          }
                      }
                      if (g.requires_grad(x)) {
                          Tensor<T>& gx = g.grad_slot(x);
                          std::vector<T> dxh(n);
                          for (std::size_t r = 0; r < xhat.rows(); ++r) {
                              auto gr = go.row(r);
                              auto xh = xhat.row(r);
                              T sum_d{0}, sum_dx{0};
                              for (std::size_t j = 0; j < n; ++j) {
                                  dxh[j] = gr[j] * gv[j];
                                  sum_d += dxh[j];
                                  sum_dx += dxh[j] * xh[j];
                              }
                              const T inv_n = T{1} / static_cast<T>(n);
                              auto dst = gx.row(r);
                              for (std::size_t j = 0; j < n; ++j) {
                                  dst[j] += s * rstd[r] * (dxh[j] - inv_n * sum_d - xh[j] * inv_n * sum_dx);
                              }
                          }
                      }
                  });
}

/// Rows of `table` selected by ids (embedding lookup).
template <class T>
Var gather_rows(Graph<T>& g, Var table, std::vector<int> ids) {
    const Tensor<T>& tv = g.value(table);
    tv.require_rank(2);
    const std::size_t w = tv.cols();
    Tensor<T> out({ids.size(), w});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) throw ShapeError("gather_rows: id out of range");
        auto src = tv.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return g.push(std::move(out), g.requires_grad(table), [table, ids = std::move(ids)](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>& gt = g.grad_slot(table);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto dst = gt.row(static_cast<std::size_t>(ids[i]));
            auto src = go.row(i);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
    });
}

template <class T>
Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t count) {
    const Tensor<T>& xv = g.value(x);
    xv.require_rank(2);
    if (begin + count > xv.rows()) throw ShapeError("slice_rows out of range");
    const std::size_t w = xv.cols();
    Tensor<T> out({count, w});
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * w), count * w, out.data().begin());
    return g.push(std::move(out), g.requires_grad(x), [x, begin](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>& gx = g.grad_slot(x);
        const std::size_t off = begin * go.cols();
        for (std::size_t i = 0; i < go.size(); ++i) gx[off + i] += go[i];
    });
}

/// x with `delta` added to rows [begin, begin + delta.rows). Other rows are copied unchanged.
template <class T>
Var add_rows(Graph<T>& g, Var x, std::size_t begin, Var delta) {
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& dv = g.value(delta);
    xv.require_rank(2);
    dv.require_rank(2);
    if (dv.cols() != xv.cols() || begin + dv.rows() > xv.rows()) throw ShapeError("add_rows: delta does not fit");
    Tensor<T> out = xv;
    const std::size_t off = begin * xv.cols();
    for (std::size_t i = 0; i < dv.size(); ++i) out[off + i] += dv[i];
    return g.push(std::move(out), any_grad(g, {x, delta}), [x, begin, delta](Graph<T>& g, const Tensor<T>& go) {
        if (g.requires_grad(x)) accumulate(g.grad_slot(x), go);
        if (g.requires_grad(delta)) {
            Tensor<T>& gd = g.grad_slot(delta);
            const std::size_t off = begin * go.cols();
            for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += go[off + i];
        }
    });
}

template <class T>
Var concat_rows(Graph<T>& g, const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t w = g.value(parts[0]).cols();
    std::size_t rows = 0;
    bool rg = false;
    for (Var p : parts) {
        const Tensor<T>& pv = g.value(p);
        if (pv.cols() != w) throw ShapeError("concat_rows: width mismatch");
        rows += pv.rows();
        rg = rg || g.requires_grad(p);
    }
    Tensor<T> out({rows, w});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor<T>& pv = g.value(p);
        std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
        off += pv.size();
    }
    return g.push(std::move(out), rg, [parts](Graph<T>& g, const Tensor<T>& go) {
        std::size_t off = 0;
        for (Var p : parts) {
            const std::size_t n = g.value(p).size();
            if (g.requires_grad(p)) {
                Tensor<T>& gp = g.grad_slot(p);
                for (std::size_t i = 0; i < n; ++i) gp[i] += go[off + i];
            }
            off += n;
        }
    });
}

template <class T>
Var concat_cols(Graph<T>& g, const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = g.value(parts[0]).rows();
    std::size_t width = 0;
    bool rg = false;
    for (Var p : parts) {
        if (g.value(p).rows() != rows) throw ShapeError("concat_cols: row count mismatch");
        width += g.value(p).cols();
        rg = rg || g.requires_grad(p);
    }
    Tensor<T> out({rows, width});
    std::size_t col = 0;
    for (Var p : parts) {
        const Tensor<T>& pv = g.value(p);
        for (std::size_t r = 0; r < rows; ++r) std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(col));
        col += pv.cols();
    }
    return g.push(std::move(out), rg, [parts](Graph<T>& g, const Tensor<T>& go) {
        std::size_t col = 0;
        for (Var p : parts) {
            const std::size_t w = g.value(p).cols();
            if (g.requires_grad(p)) {
                Tensor<T>& gp = g.grad_slot(p);
                for (std::size_t r = 0; r < go.rows(); ++r)
                    for (std::size_t j = 0; j < w; ++j) gp(r, j) += go(r, col + j);
            }
            col += w;
        }
    });
}

/// Inverted dropout with a caller-provided generator. Identity when p == 0.
template <class T, class Rng>
Var dropout(Graph<T>& g, Var x, T p, Rng& rng) {
    if (p <= T{0}) return x;
    const Tensor<T>& xv = g.value(x);
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    const T inv = T{1} / (T{1} - p);
    Tensor<T> mask(xv.dims());
    Tensor<T> out(xv.dims());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        mask[i] = keep(rng) ? inv : T{0};
        out[i] = xv[i] * mask[i];
    }
    return g.push(std::move(out), g.requires_grad(x), [x, mask = std::move(mask)](Graph<T>& g, const Tensor<T>& go) {
        Tensor<T>& gx = g.grad_slot(x);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * mask[i];
    });
}

/// Mean (or sum) NLL over rows whose mask is set. Returns a 1-element tensor.
template <class T>
Var cross_entropy(Graph<T>& g, Var logits, std::vector<int> targets, std::vector<bool> mask, bool mean = true) {
    const Tensor<T>& lv = g.value(logits);
    lv.require_rank(2);
    const std::size_t rows = lv.rows(), v = lv.cols();
    if (targets.size() != rows || mask.size() != rows) throw ShapeError("cross_entropy targets/mask length must equal logits rows");
    Tensor<T> probs(lv.dims());
    T total{0};
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) throw ShapeError("target id out of range");
        auto in = lv.row(r);
        auto pr = probs.row(r);
        T mx = *std::max_element(in.begin(), in.end());
        T sum{0};
        for (std::size_t j = 0; j < v; ++j) {
            pr[j] = std::exp(in[j] - mx);
            sum += pr[j];
        }
        for (std::size_t j = 0; j < v; ++j) pr[j] /= sum;
        total += std::log(sum) + mx - in[static_cast<std::size_t>(targets[r])];
        ++count;
    }
    if (count == 0) throw NumericError("cross_entropy: every position is masked (empty loss)");
    const T norm = mean ? T{1} / static_cast<T>(count) : T{1};
    Tensor<T> out({1}, std::vector<T>{total * norm});
    return g.push(std::move(out), g.requires_grad(logits),
                  [logits, targets = std::move(targets), mask = std::move(mask), probs = std::move(probs), norm](
                      Graph<T>& g, const Tensor<T>& go) {
                      Tensor<T>& gl = g.grad_slot(logits);
                      const T s = go[0] * norm;
                      for (std::size_t r = 0; r < probs.rows(); ++r) {
                          if (!mask[r]) continue;
                          auto pr = probs.row(r);
                          auto dst = gl.row(r);
                          for (std::size_t j = 0; j < pr.size(); ++j) dst[j] += s * pr[j];
                          dst[static_cast<std::size_t>(targets[r])] -= s;
                      }
                  });
}

}  // namespace ag
}  // namespace aquila
