// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "aquila/autograd.hpp"
#include "aquila/lora.hpp"
#include "aquila/params.hpp"
#include "aquila/positional.hpp"
#include "aquila/region_map.hpp"
#include "aquila/sfi.hpp"

namespace aquila {

struct DecoderConfig {
    std::size_t n_layers = 4;
    std::size_t d_model = 64;
    std::size_t n_heads = 2;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 64;
    std::size_t mlp_ratio = 4;
    /// Layers followed by a re-alignment block. Unset means every ⌈n_layers/4⌉-th layer.
    std::optional<std::vector<std::size_t>> sfi_layers;
    /// Width of the SFI attention inside re-alignment blocks (the unified projected width D).
    std::size_t sfi_dim = 32;
    std::size_t lora_rank = 8;
    double lora_alpha = 2.0;
    double lora_dropout = 0.05;

    std::vector<std::size_t> realign_layers() const {
        if (sfi_layers) return *sfi_layers;
        std::vector<std::size_t> out;
        const std::size_t step = (n_layers + 3) / 4;
        for (std::size_t l = step - 1; l < n_layers; l += step) out.push_back(l);
        return out;
    }

    void validate() const {
        if (n_layers == 0 || d_model == 0 || n_heads == 0) throw ConfigError("decoder dims must be positive");
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
        if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
        const auto layers = realign_layers();
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i] >= n_layers) throw ConfigError("sfi layer index out of range");
            if (i > 0 && layers[i] <= layers[i - 1]) throw ConfigError("sfi layer indices must be strictly increasing");
        }
        check_lora_rank(lora_rank, d_model, d_model);
        if (lora_dropout < 0.0 || lora_dropout >= 1.0) throw ConfigError("lora dropout must be in [0, 1)");
    }
};

struct LayerWeights {
    ParamId ln1_g, ln1_b, w_q, w_k, w_v, w_o, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    ParamId lora_q_down, lora_q_up, lora_v_down, lora_v_up;
};

/// Re-alignment block: d_model → D input map, an SFI parameter set without its own query grid,
/// and a zero-initialized D → d_model output map.
struct RealignWeights {
    std::size_t layer = 0;
    ParamId w_in, w_out;
    SfiWeights sfi;
};

struct DecoderWeights {
    ParamId tok_emb, pos_emb, lnf_g, lnf_b, lm_head;
    std::vector<LayerWeights> layers;
    std::vector<RealignWeights> realign;

    const RealignWeights* realign_for(std::size_t layer) const {
        for (const auto& r : realign)
            if (r.layer == layer) return &r;
        return nullptr;
    }
};

template <class T>
DecoderWeights add_decoder_params(ParamStore<T>& store, const DecoderConfig& cfg, std::size_t num_scales, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.d_model, h = cfg.mlp_ratio * d, r = cfg.lora_rank;
    DecoderWeights w;
    w.tok_emb = store.add("decoder.tok_emb", Group::Decoder, init::normal<T>({cfg.vocab_size, d}, 0.5, rng));
    w.pos_emb = store.add("decoder.pos_emb", Group::Decoder, init::normal<T>({cfg.max_seq_len, d}, 0.1, rng));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "decoder.layer" + std::to_string(l);
        LayerWeights lw{};
        lw.ln1_g = store.add(p + ".ln1.gamma", Group::Decoder, init::ones<T>({d}));
        lw.ln1_b = store.add(p + ".ln1.beta", Group::Decoder, init::zeros<T>({d}));
        lw.w_q = store.add(p + ".attn.w_q", Group::Decoder, init::fan_in<T>(d, d, rng));
        lw.w_k = store.add(p + ".attn.w_k", Group::Decoder, init::fan_in<T>(d, d, rng));
        lw.w_v = store.add(p + ".attn.w_v", Group::Decoder, init::fan_in<T>(d, d, rng));
        lw.w_o = store.add(p + ".attn.w_o", Group::Decoder, init::fan_in<T>(d, d, rng, 0.5));
        lw.ln2_g = store.add(p + ".ln2.gamma", Group::Decoder, init::ones<T>({d}));
        lw.ln2_b = store.add(p + ".ln2.beta", Group::Decoder, init::zeros<T>({d}));
        lw.fc1_w = store.add(p + ".mlp.fc1.weight", Group::Decoder, init::fan_in<T>(h, d, rng));
        lw.fc1_b = store.add(p + ".mlp.fc1.bias", Group::Decoder, init::zeros<T>({h}));
        lw.fc2_w = store.add(p + ".mlp.fc2.weight", Group::Decoder, init::fan_in<T>(d, h, rng, 0.5));
        lw.fc2_b = store.add(p + ".mlp.fc2.bias", Group::Decoder, init::zeros<T>({d}));
        lw.lora_q_down = store.add(p + ".lora_q.down", Group::Lora, init::fan_in<T>(r, d, rng));
        lw.lora_q_up = store.add(p + ".lora_q.up", Group::Lora, init::zeros<T>({d, r}));
        lw.lora_v_down = store.add(p + ".lora_v.down", Group::Lora, init::fan_in<T>(r, d, rng));
        lw.lora_v_up = store.add(p + ".lora_v.up", Group::Lora, init::zeros<T>({d, r}));
        w.layers.push_back(lw);
    }
    w.lnf_g = store.add("decoder.lnf.gamma", Group::Decoder, init::ones<T>({d}));
    w.lnf_b = store.add("decoder.lnf.beta", Group::Decoder, init::zeros<T>({d}));
    w.lm_head = store.add("decoder.lm_head", Group::Decoder, init::fan_in<T>(cfg.vocab_size, d, rng));
    for (std::size_t l : cfg.realign_layers()) {
        const std::string p = "realign.layer" + std::to_string(l);
        RealignWeights rw;
        rw.layer = l;
        rw.w_in = store.add(p + ".w_in", Group::Realign, init::fan_in<T>(cfg.sfi_dim, d, rng));
        rw.sfi = add_sfi_params(store, p + ".sfi", Group::Realign, 0, cfg.sfi_dim, num_scales, false, rng);
        rw.w_out = store.add(p + ".w_out", Group::Realign, init::zeros<T>({d, cfg.sfi_dim}));
        w.realign.push_back(rw);
    }
    return w;
}

// ---------------------------------------------------------------------------------------------

namespace ag {

/// Multi-head causal self-attention core (no projections): position t attends to positions ≤ t.
template <class T>
Var causal_attention(Graph<T>& g, Var q, Var k, Var v, std::size_t n_heads) {
    const Tensor<T>& qv = g.value(q);
    const Tensor<T>& kv = g.value(k);
    const Tensor<T>& vv = g.value(v);
    if (!qv.same_shape(kv) || !qv.same_shape(vv)) throw ShapeError("causal_attention: q/k/v shapes differ");
    const std::size_t n = qv.rows(), d = qv.cols();
    if (n_heads == 0 || d % n_heads != 0) throw ShapeError("causal_attention: width not divisible by heads");
    const std::size_t hd = d / n_heads;
    const T scale = T{1} / std::sqrt(static_cast<T>(hd));
    // probs[h][t][j] for j ≤ t, stored densely as [heads·n × n].
    Tensor<T> probs({n_heads * n, n});
    Tensor<T> out({n, d});
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t o = h * hd;
        for (std::size_t t = 0; t < n; ++t) {
            auto p = probs.row(h * n + t);
            const T* qt = qv.row(t).data() + o;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j <= t; ++j) {
                p[j] = kernels::dot(qt, kv.row(j).data() + o, hd) * scale;
                mx = std::max(mx, p[j]);
            }
            T sum{0};
            for (std::size_t j = 0; j <= t; ++j) {
                p[j] = std::exp(p[j] - mx);
                sum += p[j];
            }
            T* ot = out.row(t).data() + o;
            for (std::size_t j = 0; j <= t; ++j) {
                p[j] /= sum;
                const T* vj = vv.row(j).data() + o;
                for (std::size_t c = 0; c < hd; ++c) ot[c] += p[j] * vj[c];
            }
        }
    }
    const bool rg = any_grad(g, {q, k, v});
    return g.push(std::move(out), rg, [q, k, v, n_heads, scale, probs = std::move(probs)](Graph<T>& g, const Tensor<T>& go) {
        const T fs = g.fault_scale(FaultOp::CausalAttention);
        const Tensor<T>& qv = g.value(q);
        const Tensor<T>& kv = g.value(k);
        const Tensor<T>& vv = g.value(v);
        const std::size_t n = qv.rows(), d = qv.cols(), hd = d / n_heads;
        Tensor<T>* gq = g.requires_grad(q) ? &g.grad_slot(q) : nullptr;
        Tensor<T>* gk = g.requires_grad(k) ? &g.grad_slot(k) : nullptr;
        Tensor<T>* gv = g.requires_grad(v) ? &g.grad_slot(v) : nullptr;
        std::vector<T> ds(n);
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t o = h * hd;
            for (std::size_t t = 0; t < n; ++t) {
                auto p = probs.row(h * n + t);
                const T* gt = go.row(t).data() + o;
                T inner{0};
                for (std::size_t j = 0; j <= t; ++j) {
                    ds[j] = kernels::dot(gt, vv.row(j).data() + o, hd);
                    inner += p[j] * ds[j];
                }
                for (std::size_t j = 0; j <= t; ++j) {
                    const T dsj = p[j] * (ds[j] - inner) * scale * fs;
                    if (gv) {
                        T* dst = gv->row(j).data() + o;
                        for (std::size_t c = 0; c < hd; ++c) dst[c] += p[j] * gt[c];
                    }
                    if (gq) {
                        T* dst = gq->row(t).data() + o;
                        const T* kj = kv.row(j).data() + o;
                        for (std::size_t c = 0; c < hd; ++c) dst[c] += dsj * kj[c];
                    }
                    if (gk) {
                        T* dst = gk->row(j).data() + o;
                        const T* qt = qv.row(t).data() + o;
                        for (std::size_t c = 0; c < hd; ++c) dst[c] += dsj * qt[c];
                    }
                }
            }
        }
    });
}

}  // namespace ag

template <class T>
struct AttentionWeights {
    Tensor<T> w_q, w_k, w_v, w_o;  // each [d_model × d_model]
};

/// Plain multi-head causal self-attention with input and output projections.
template <class T>
Tensor<T> causal_self_attention(const Tensor<T>& hidden, const AttentionWeights<T>& w, std::size_t n_heads,
                                std::size_t max_seq_len = std::numeric_limits<std::size_t>::max()) {
    hidden.require_rank(2);
    if (hidden.rows() > max_seq_len) {
        throw CapacityError("sequence length " + std::to_string(hidden.rows()) + " exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    Graph<T> g;
    Var x = g.constant(hidden);
    Var q = ag::linear(g, x, g.constant(w.w_q));
    Var k = ag::linear(g, x, g.constant(w.w_k));
    Var v = ag::linear(g, x, g.constant(w.w_v));
    return g.value(ag::linear(g, ag::causal_attention(g, q, k, v, n_heads), g.constant(w.w_o)));
}

/// Token ids with a visual prefix and a per-position loss mask.
///
/// loss_mask[t] marks that the logits at position t are supervised with the token at t + 1.
struct SequenceBatch {
    std::size_t n_visual = 0;
    std::vector<int> tokens;
    std::vector<bool> loss_mask;

    std::size_t length() const noexcept { return n_visual + tokens.size(); }

    void validate() const {
        if (loss_mask.size() != length()) throw ShapeError("loss mask length must equal n_visual + tokens");
        for (std::size_t t = 0; t < n_visual; ++t)
            if (loss_mask[t]) throw ShapeError("loss mask must be false at visual positions");
        if (!loss_mask.empty() && loss_mask.back()) throw ShapeError("last position has no successor target");
    }

    /// Next-token targets aligned with sequence positions (0 where unsupervised).
    std::vector<int> targets() const {
        std::vector<int> out(length(), 0);
        for (std::size_t t = 0; t + 1 < length(); ++t) {
            if (t + 1 >= n_visual) out[t] = tokens[t + 1 - n_visual];
        }
        return out;
    }
};

/// Cached projected scale grids (with positional encodings) that re-alignment blocks attend to.
template <class T>
struct MdaCache {
    std::vector<Var> features;
    const RegionMap* map = nullptr;
    Tensor<T> query_pe;  // [L² × D]
};

template <class T>
struct DecoderRun {
    const DecoderConfig* cfg = nullptr;
    const DecoderWeights* weights = nullptr;
    /// Whether re-alignment blocks run. They require a cache when enabled.
    bool realign = true;
    /// Whether LoRA adapters are applied; false gives the plain base decoder.
    bool lora = true;
    const MdaCache<T>* cache = nullptr;
    /// LoRA dropout is applied only when a generator is supplied.
    Rng* dropout_rng = nullptr;
};

/// Residual re-attention of the visual rows onto the cached multi-scale features.
template <class T>
Var mda_realign(const Binder<T>& bind, Var hidden, std::size_t n_visual, const RealignWeights& w, const MdaCache<T>* cache) {
    if (!cache || !cache->map) throw StateError("re-alignment requires cached projected features");
    Graph<T>& g = bind.graph();
    const RegionMap& map = *cache->map;
    if (n_visual != map.query_count()) throw ShapeError("visual token count must equal the query grid size");
    Var vis = ag::slice_rows(g, hidden, 0, n_visual);
    Var q_in = ag::add(g, ag::linear(g, vis, bind(w.w_in)), g.constant(cache->query_pe));
    Var fused = sfi_attend(g, q_in, bind_sfi(bind, w.sfi), cache->features, map);
    Var delta = ag::linear(g, fused, bind(w.w_out));
    return ag::add_rows(g, hidden, 0, delta);
}

/// Visual block (may be invalid when the batch has no visual tokens) followed by embedded text;
/// pre-norm blocks with LoRA on the query/value projections; re-alignment after selected blocks.
template <class T>
Var decoder_forward(const Binder<T>& bind, const DecoderRun<T>& run, Var visual, const SequenceBatch& batch) {
    const DecoderConfig& cfg = *run.cfg;
    const DecoderWeights& w = *run.weights;
    Graph<T>& g = bind.graph();
    batch.validate();
    const std::size_t total = batch.length();
    if (total > cfg.max_seq_len) {
        throw CapacityError("sequence length " + std::to_string(total) + " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (batch.n_visual > 0) {
        if (!visual.valid() || g.value(visual).rows() != batch.n_visual || g.value(visual).cols() != cfg.d_model) {
            throw ShapeError("visual block must be n_visual × d_model");
        }
    }
    std::vector<Var> parts;
    if (batch.n_visual > 0) parts.push_back(visual);
    if (!batch.tokens.empty()) parts.push_back(ag::gather_rows(g, bind(w.tok_emb), batch.tokens));
    Var x = parts.size() == 1 ? parts[0] : ag::concat_rows(g, parts);
    x = ag::add(g, x, ag::slice_rows(g, bind(w.pos_emb), 0, total));

    const T lora_scale = static_cast<T>(cfg.lora_alpha / static_cast<double>(cfg.lora_rank));
    const T lora_drop = static_cast<T>(cfg.lora_dropout);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = w.layers[l];
        Var a = ag::layer_norm(g, x, bind(lw.ln1_g), bind(lw.ln1_b));
        Var q, v;
        if (run.lora) {
            q = ag::lora_linear(g, a, bind(lw.w_q), bind(lw.lora_q_down), bind(lw.lora_q_up), lora_scale, lora_drop, run.dropout_rng);
            v = ag::lora_linear(g, a, bind(lw.w_v), bind(lw.lora_v_down), bind(lw.lora_v_up), lora_scale, lora_drop, run.dropout_rng);
        } else {
            q = ag::linear(g, a, bind(lw.w_q));
            v = ag::linear(g, a, bind(lw.w_v));
        }
        Var k = ag::linear(g, a, bind(lw.w_k));
        Var att = ag::causal_attention(g, q, k, v, cfg.n_heads);
        x = ag::add(g, x, ag::linear(g, att, bind(lw.w_o)));
        Var m = ag::layer_norm(g, x, bind(lw.ln2_g), bind(lw.ln2_b));
        m = ag::gelu(g, ag::linear(g, m, bind(lw.fc1_w), bind(lw.fc1_b)));
        x = ag::add(g, x, ag::linear(g, m, bind(lw.fc2_w), bind(lw.fc2_b)));
        if (run.realign) {
            if (const RealignWeights* rw = w.realign_for(l)) x = mda_realign(bind, x, batch.n_visual, *rw, run.cache);
        }
    }
    x = ag::layer_norm(g, x, bind(w.lnf_g), bind(w.lnf_b));
    return ag::linear(g, x, bind(w.lm_head));
}

/// Shifted next-token cross-entropy over supervised positions; mean unless `mean` is false.
template <class T>
Var next_token_loss(Graph<T>& g, Var logits, const SequenceBatch& batch, bool mean = true) {
    batch.validate();
    return ag::cross_entropy(g, logits, batch.targets(), batch.loss_mask, mean);
}

}  // namespace aquila
