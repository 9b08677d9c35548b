// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "aquila/autograd.hpp"
#include "aquila/params.hpp"
#include "aquila/positional.hpp"
#include "aquila/pyramid.hpp"
#include "aquila/region_map.hpp"
#include "aquila/tensor.hpp"

namespace aquila {

// ---------------------------------------------------------------------------------------------
// Region-restricted attention primitive.

namespace ag {

/// out_i = softmax(q_i · K_Rᵀ · scale) · V_R, with R = map.stacked_region(i).
/// keys/values hold every scale stacked scale-major.
template <class T>
Var region_attention(Graph<T>& g, Var q, Var keys, Var values, const RegionMap& map, T scale) {
    const Tensor<T>& qv = g.value(q);
    const Tensor<T>& kv = g.value(keys);
    const Tensor<T>& vv = g.value(values);
    qv.require_rank(2);
    kv.require_rank(2);
    vv.require_rank(2);
    const std::size_t n = map.query_count();
    const std::size_t d = qv.cols();
    if (qv.rows() != n) throw ShapeError("region_attention: query rows " + std::to_string(qv.rows()) + " vs map " + std::to_string(n));
    if (kv.cols() != d || vv.cols() != d) throw ShapeError("region_attention: key/value width mismatch");
    if (kv.rows() != map.scale_offset(map.num_scales()) || vv.rows() != kv.rows()) {
        throw ShapeError("region_attention: stacked feature rows do not match the region map");
    }
    const std::size_t m = map.kv_count();
    std::vector<std::vector<std::size_t>> idx(n);
    Tensor<T> probs({n, m});
    Tensor<T> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = map.stacked_region(i);
        auto qi = qv.row(i);
        auto pi = probs.row(i);
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            pi[j] = kernels::dot(qi.data(), kv.row(idx[i][j]).data(), d) * scale;
            mx = std::max(mx, pi[j]);
        }
        T sum{0};
        for (std::size_t j = 0; j < m; ++j) {
            pi[j] = std::exp(pi[j] - mx);
            sum += pi[j];
        }
        auto oi = out.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            pi[j] /= sum;
            auto vr = vv.row(idx[i][j]);
            for (std::size_t c = 0; c < d; ++c) oi[c] += pi[j] * vr[c];
        }
    }
    const bool rg = any_grad(g, {q, keys, values});
    return g.push(std::move(out), rg,
                  [q, keys, values, scale, idx = std::move(idx), probs = std::move(probs)](Graph<T>& g,
                                                                                           const Tensor<T>& go) {
                      const T fs = g.fault_scale(FaultOp::RegionAttention);
                      const Tensor<T>& qv = g.value(q);
                      const Tensor<T>& kv = g.value(keys);
                      const Tensor<T>& vv = g.value(values);
                      const std::size_t d = qv.cols(), m = probs.cols();
                      Tensor<T>* gq = g.requires_grad(q) ? &g.grad_slot(q) : nullptr;
                      Tensor<T>* gk = g.requires_grad(keys) ? &g.grad_slot(keys) : nullptr;
                      Tensor<T>* gvv = g.requires_grad(values) ? &g.grad_slot(values) : nullptr;
                      std::vector<T> ds(m);
                      for (std::size_t i = 0; i < idx.size(); ++i) {
                          auto gi = go.row(i);
                          auto pi = probs.row(i);
                          T inner{0};
                          for (std::size_t j = 0; j < m; ++j) {
                              const T dp = kernels::dot(gi.data(), vv.row(idx[i][j]).data(), d);
                              ds[j] = dp;
                              inner += pi[j] * dp;
                          }
                          for (std::size_t j = 0; j < m; ++j) ds[j] = pi[j] * (ds[j] - inner) * scale * fs;
                          for (std::size_t j = 0; j < m; ++j) {
                              const std::size_t row = idx[i][j];
                              if (gvv) {
                                  auto dst = gvv->row(row);
                                  for (std::size_t c = 0; c < d; ++c) dst[c] += pi[j] * gi[c];
                              }
                              if (gq) {
                                  auto dst = gq->row(i);
                                  auto kr = kv.row(row);
                                  for (std::size_t c = 0; c < d; ++c) dst[c] += ds[j] * kr[c];
                              }
                              if (gk) {
                                  auto dst = gk->row(row);
                                  auto qi = qv.row(i);
                                  for (std::size_t c = 0; c < d; ++c) dst[c] += ds[j] * qi[c];
                              }
                          }
                      }
                  });
}

}  // namespace ag

// ---------------------------------------------------------------------------------------------
// SFI parameters.

/// Plain-tensor form of the SFI parameters: query grid X_q [L² × D], W_Q, and per-scale W_Ks, W_Vs.
template <class T>
struct SfiParams {
    Tensor<T> query;
    Tensor<T> w_q;
    std::vector<Tensor<T>> w_k, w_v;

    static SfiParams random(std::size_t query_side, std::size_t dim, std::size_t scales, Rng& rng) {
        SfiParams p;
        p.query = init::normal<T>({query_side * query_side, dim}, 1.0, rng);
        p.w_q = init::fan_in<T>(dim, dim, rng);
        for (std::size_t s = 0; s < scales; ++s) {
            p.w_k.push_back(init::fan_in<T>(dim, dim, rng));
            p.w_v.push_back(init::fan_in<T>(dim, dim, rng));
        }
        return p;
    }
};

/// Store ids of one SFI parameter set. `query` is unset for the decoder-internal re-alignment
/// blocks, whose queries come from hidden states.
struct SfiWeights {
    ParamId query = Var::npos;
    ParamId w_q = 0;
    std::vector<ParamId> w_k, w_v;
};

template <class T>
SfiWeights add_sfi_params(ParamStore<T>& store, const std::string& prefix, Group group, std::size_t query_side,
                          std::size_t dim, std::size_t scales, bool with_query, Rng& rng) {
    SfiWeights w;
    if (with_query) {
        w.query = store.add(prefix + ".query", group, init::normal<T>({query_side * query_side, dim}, 0.5, rng));
    }
    w.w_q = store.add(prefix + ".w_q", group, init::fan_in<T>(dim, dim, rng));
    for (std::size_t s = 0; s < scales; ++s) {
        w.w_k.push_back(store.add(prefix + ".w_k." + std::to_string(s), group, init::fan_in<T>(dim, dim, rng)));
        w.w_v.push_back(store.add(prefix + ".w_v." + std::to_string(s), group, init::fan_in<T>(dim, dim, rng)));
    }
    return w;
}

struct SfiVars {
    Var w_q;
    std::vector<Var> w_k, w_v;
};

inline SfiVars bind_sfi(const auto& bind, const SfiWeights& w) {
    SfiVars v{bind(w.w_q), {}, {}};
    for (auto id : w.w_k) v.w_k.push_back(bind(id));
    for (auto id : w.w_v) v.w_v.push_back(bind(id));
    return v;
}

// ---------------------------------------------------------------------------------------------
// SFI attention.

/// Region-restricted cross-attention from the query grid onto the projected scale grids.
/// `query_in` and `features` must already carry their positional encodings.
/// Row i of the result is q_i + softmax(q_i·K_iᵀ/√D)·V_i with q_i = W_Q·query_in(i).
template <class T>
Var sfi_attend(Graph<T>& g, Var query_in, const SfiVars& p, const std::vector<Var>& features, const RegionMap& map) {
    if (features.size() != map.num_scales() || p.w_k.size() != map.num_scales() || p.w_v.size() != map.num_scales()) {
        throw ShapeError("sfi_attend: scale count mismatch between map, features and parameters");
    }
    for (std::size_t s = 0; s < features.size(); ++s) {
        const std::size_t side = map.scale_sides()[s];
        if (g.value(features[s]).rows() != side * side) throw ShapeError("sfi_attend: scale " + std::to_string(s) + " token count mismatch");
    }
    const std::size_t dim = g.value(query_in).cols();
    Var q = ag::linear(g, query_in, p.w_q);
    std::vector<Var> ks, vs;
    for (std::size_t s = 0; s < features.size(); ++s) {
        ks.push_back(ag::linear(g, features[s], p.w_k[s]));
        vs.push_back(ag::linear(g, features[s], p.w_v[s]));
    }
    Var keys = ks.size() == 1 ? ks[0] : ag::concat_rows(g, ks);
    Var values = vs.size() == 1 ? vs[0] : ag::concat_rows(g, vs);
    Var att = ag::region_attention(g, q, keys, values, map, T{1} / std::sqrt(static_cast<T>(dim)));
    return ag::add(g, q, att);
}

template <class T>
Tensor<T> sfi_attend(const SfiParams<T>& params, const MultiScaleFeatures<T>& features, const RegionMap& map) {
    if (!features.projected) throw ShapeError("sfi_attend expects projected features");
    Graph<T> g;
    SfiVars v{g.constant(params.w_q), {}, {}};
    for (const auto& w : params.w_k) v.w_k.push_back(g.constant(w));
    for (const auto& w : params.w_v) v.w_v.push_back(g.constant(w));
    std::vector<Var> feats;
    for (const auto& grid : features.grids) feats.push_back(g.constant(grid));
    return g.value(sfi_attend(g, g.constant(params.query), v, feats, map));
}

/// Attention weights of every query over its stacked region (rows sum to one).
template <class T>
Tensor<T> sfi_attention_weights(const SfiParams<T>& params, const MultiScaleFeatures<T>& features, const RegionMap& map) {
    if (features.grids.size() != map.num_scales() || params.w_k.size() != map.num_scales()) {
        throw ShapeError("sfi_attention_weights: scale count mismatch");
    }
    const Tensor<T> q = matmul_nt(params.query, params.w_q);
    std::vector<Tensor<T>> keys;
    for (std::size_t s = 0; s < features.grids.size(); ++s) keys.push_back(matmul_nt(features.grids[s], params.w_k[s]));
    const T scale = T{1} / std::sqrt(static_cast<T>(q.cols()));
    Tensor<T> logits({map.query_count(), map.kv_count()});
    for (std::size_t i = 0; i < map.query_count(); ++i) {
        std::size_t j = 0;
        for (std::size_t s = 0; s < map.num_scales(); ++s)
            for (std::size_t idx : map.region(i, s))
                logits(i, j++) = kernels::dot(q.row(i).data(), keys[s].row(idx).data(), q.cols()) * scale;
    }
    return softmax_rows(logits);
}

/// Naive oracle: per query, per region element, explicit scalar loops. Single-threaded.
template <class T>
Tensor<T> sfi_reference(const SfiParams<T>& params, const MultiScaleFeatures<T>& features, const RegionMap& map) {
    if (!features.projected) throw ShapeError("sfi_reference expects projected features");
    if (features.grids.size() != map.num_scales() || params.w_k.size() != map.num_scales() || params.w_v.size() != map.num_scales()) {
        throw ShapeError("sfi_reference: scale count mismatch");
    }
    const std::size_t n = map.query_count();
    const std::size_t d = params.query.cols();
    if (params.query.rows() != n) throw ShapeError("sfi_reference: query grid size mismatch");

    auto project = [d](const Tensor<T>& w, std::span<const T> x) {
        std::vector<T> y(d, T{0});
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) y[r] += w(r, c) * x[c];
        return y;
    };

    Tensor<T> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<T> q = project(params.w_q, params.query.row(i));
        std::vector<std::vector<T>> keys, values;
        for (std::size_t s = 0; s < map.num_scales(); ++s) {
            if (features.grids[s].rows() != map.scale_sides()[s] * map.scale_sides()[s]) {
                throw ShapeError("sfi_reference: scale token count mismatch");
            }
            for (std::size_t idx : map.region(i, s)) {
                keys.push_back(project(params.w_k[s], features.grids[s].row(idx)));
                values.push_back(project(params.w_v[s], features.grids[s].row(idx)));
            }
        }
        std::vector<T> logits(keys.size());
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < keys.size(); ++j) {
            T s{0};
            for (std::size_t c = 0; c < d; ++c) s += q[c] * keys[j][c];
            logits[j] = s / std::sqrt(static_cast<T>(d));
            mx = std::max(mx, logits[j]);
        }
        T z{0};
        for (auto& l : logits) {
            l = std::exp(l - mx);
            z += l;
        }
        for (std::size_t c = 0; c < d; ++c) {
            T acc{0};
            for (std::size_t j = 0; j < values.size(); ++j) acc += logits[j] / z * values[j][c];
            out(i, c) = q[c] + acc;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Concatenation baseline.

/// [dst² × src²] bilinear resampling matrix with half-pixel centers and edge clamping.
template <class T>
Tensor<T> bilinear_matrix(std::size_t src, std::size_t dst) {
    std::vector<std::vector<std::pair<std::size_t, double>>> taps(dst);
    for (std::size_t o = 0; o < dst; ++o) {
        double x = (static_cast<double>(o) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
        x = std::clamp(x, 0.0, static_cast<double>(src - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(x));
        const std::size_t i1 = std::min(i0 + 1, src - 1);
        const double w = x - static_cast<double>(i0);
        taps[o].push_back({i0, 1.0 - w});
        if (w > 0.0) taps[o].push_back({i1, w});
    }
    Tensor<T> m({dst * dst, src * src});
    for (std::size_t r = 0; r < dst; ++r)
        for (std::size_t c = 0; c < dst; ++c)
            for (auto [ir, wr] : taps[r])
                for (auto [ic, wc] : taps[c]) m(r * dst + c, ir * src + ic) += static_cast<T>(wr * wc);
    return m;
}

/// Resample every scale to L × L, concatenate channels (S·D) and mix back to D with a 1×1 map.
template <class T>
Var concat_fusion(Graph<T>& g, const std::vector<Var>& features, const std::vector<std::size_t>& sides,
                  std::size_t target_side, Var mix) {
    if (features.size() != sides.size() || features.empty()) throw ShapeError("concat_fusion: scale count mismatch");
    std::vector<Var> parts;
    for (std::size_t s = 0; s < features.size(); ++s) {
        if (g.value(features[s]).rows() != sides[s] * sides[s]) throw ShapeError("concat_fusion: token count mismatch");
        if (sides[s] == target_side) {
            parts.push_back(features[s]);
        } else {
            parts.push_back(ag::matmul(g, g.constant(bilinear_matrix<T>(sides[s], target_side)), features[s]));
        }
    }
    Var cat = parts.size() == 1 ? parts[0] : ag::concat_cols(g, parts);
    return ag::linear(g, cat, mix);
}

template <class T>
Tensor<T> concat_fusion(const MultiScaleFeatures<T>& features, std::size_t target_side, const Tensor<T>& mix) {
    Graph<T> g;
    std::vector<Var> feats;
    for (const auto& grid : features.grids) feats.push_back(g.constant(grid));
    return g.value(concat_fusion(g, feats, features.sides, target_side, g.constant(mix)));
}

}  // namespace aquila
