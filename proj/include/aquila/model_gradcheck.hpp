// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "aquila/gradcheck.hpp"
#include "aquila/model.hpp"

namespace aquila {

/// Small end-to-end configuration for finite-difference checks: 16×16 image, two scales (sides
/// 4 and 2), a 2×2 query grid, and a 2-layer decoder with re-alignment after both layers.
inline ModelConfig gradcheck_toy_config(FusionKind fusion = FusionKind::Sfi) {
    ModelConfig c;
    c.pyramid.resolution = 16;
    c.pyramid.channels = {4, 8};
    c.pyramid.projected_dim = 8;
    c.query_side = 2;
    c.fusion = fusion;
    c.mda = true;
    c.decoder.n_layers = 2;
    c.decoder.d_model = 16;
    c.decoder.n_heads = 2;
    c.decoder.vocab_size = 11;
    c.decoder.max_seq_len = 9;  // N_v = 4 plus T = 5
    c.decoder.sfi_layers = std::vector<std::size_t>{0, 1};
    c.decoder.lora_rank = 2;
    c.decoder.lora_alpha = 4.0;
    c.decoder.lora_dropout = 0.0;
    return c;
}

struct GradcheckEntry {
    std::string name;
    std::size_t size = 0;
    double rel_error = 0.0;
    double max_abs = 0.0;
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double tolerance = 1e-5;

    bool passed() const {
        for (const auto& e : entries)
            if (!e.pass) return false;
        return !entries.empty();
    }
    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.rel_error);
        return w;
    }
};

/// Compares backprop gradients of the mean next-token loss against central differences for every
/// tensor outside the pyramid (which is frozen and has no backward path). Adapter up-maps and
/// re-alignment output maps are given random values first so that every path carries gradient.
inline GradcheckReport run_model_gradcheck(FusionKind fusion = FusionKind::Sfi, FaultOp fault = FaultOp::None,
                                           std::uint64_t seed = 7, double tolerance = 1e-5, double h = 1e-5) {
    const ModelConfig cfg = gradcheck_toy_config(fusion);
    AquilaModel<double> model(cfg, seed);
    auto& store = model.store();
    Rng rng = derive_rng(seed, 9, 0);
    for (const auto& lw : model.decoder_weights().layers) {
        store.value(lw.lora_q_up) = init::normal<double>(store.value(lw.lora_q_up).dims(), 0.3, rng);
        store.value(lw.lora_v_up) = init::normal<double>(store.value(lw.lora_v_up).dims(), 0.3, rng);
    }
    for (const auto& rw : model.decoder_weights().realign) {
        store.value(rw.w_out) = init::normal<double>(store.value(rw.w_out).dims(), 0.3, rng);
    }
    Tensor<double> image({cfg.pyramid.resolution, cfg.pyramid.resolution, 3});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& v : image.data()) v = unit(rng);
    const auto raw = model.encode(image);

    SequenceBatch batch;
    batch.n_visual = cfg.n_visual();
    batch.tokens = {1, 4, 7, 3, 10};
    batch.loss_mask.assign(batch.length(), false);
    for (std::size_t t = batch.n_visual - 1; t + 1 < batch.length(); ++t) batch.loss_mask[t] = true;
    batch.loss_mask[batch.n_visual - 1] = false;

    const GroupMask trainable{Group::Projector, Group::Fusion, Group::Realign, Group::Lora, Group::Decoder};
    auto loss_of = [&](Graph<double>& g) {
        Binder<double> bind(g, store, trainable);
        auto enc = model.encode_visual(bind, raw);
        return next_token_loss(g, model.forward(bind, enc, batch), batch);
    };

    Graph<double> g;
    g.inject_fault(fault);
    g.backward(loss_of(g));
    std::map<ParamId, Tensor<double>> analytic;
    g.for_each_param_grad([&](std::size_t key, const Tensor<double>& grad) { analytic.emplace(key, grad); });

    GradcheckReport report;
    report.tolerance = tolerance;
    for (ParamId id = 0; id < store.size(); ++id) {
        if (!trainable.count(store[id].group)) continue;
        const Tensor<double> saved = store.value(id);
        auto f = [&](const Tensor<double>& probe) {
            store.value(id) = probe;
            Graph<double> fg;
            return fg.value(loss_of(fg))[0];
        };
        const Tensor<double> numeric = finite_diff_grad<double>(f, saved, h);
        store.value(id) = saved;
        const auto it = analytic.find(id);
        const Tensor<double> a = it != analytic.end() ? it->second : Tensor<double>(saved.dims());
        GradcheckEntry e;
        e.name = store[id].name;
        e.size = saved.size();
        e.rel_error = relative_error(a, numeric);
        e.max_abs = max_abs_diff(a, numeric);
        e.pass = e.rel_error <= tolerance;
        report.entries.push_back(e);
    }
    return report;
}

}  // namespace aquila
