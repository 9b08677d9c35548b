// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "aquila/decoder.hpp"
#include "aquila/params.hpp"
#include "aquila/positional.hpp"
#include "aquila/pyramid.hpp"
#include "aquila/region_map.hpp"
#include "aquila/sfi.hpp"

namespace aquila {

enum class FusionKind { Sfi, Concat };

inline std::string fusion_name(FusionKind k) { return k == FusionKind::Sfi ? "sfi" : "concat"; }

struct ModelConfig {
    PyramidConfig pyramid;
    std::size_t query_side = 4;
    FusionKind fusion = FusionKind::Sfi;
    bool mda = true;
    DecoderConfig decoder;

    std::size_t n_visual() const noexcept { return query_side * query_side; }

    /// Decoder config with the re-alignment layers resolved (none when MDA is off).
    DecoderConfig resolved_decoder() const {
        DecoderConfig d = decoder;
        d.sfi_dim = pyramid.projected_dim;
        if (!mda) d.sfi_layers = std::vector<std::size_t>{};
        else if (!d.sfi_layers) d.sfi_layers = decoder.realign_layers();
        return d;
    }

    void validate() const {
        pyramid.validate();
        RegionMap probe(query_side, pyramid.sides());
        (void)probe;
        resolved_decoder().validate();
        if (n_visual() >= decoder.max_seq_len) throw ConfigError("visual block does not fit in max_seq_len");
    }
};

struct FusionWeights {
    SfiWeights sfi;                  // when fusion == Sfi
    ParamId concat_mix = Var::npos;  // when fusion == Concat
    ParamId visual_out = 0;          // D → d_model
};

/// The full vision-language stack: frozen pyramid, projectors, fusion, decoder with optional
/// re-alignment and LoRA adapters. Parameters live in one store.
template <class T>
class AquilaModel {
public:
    AquilaModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        cfg_.decoder = cfg_.resolved_decoder();
        // One generator per component: variants that differ only in fusion or re-alignment
        // share identical pyramid, projector and decoder initializations.
        const std::size_t d = cfg_.pyramid.projected_dim;
        const std::size_t s = cfg_.pyramid.num_scales();
        Rng pyramid_rng = derive_rng(seed, 1, 0), projector_rng = derive_rng(seed, 2, 0), rng = derive_rng(seed, 3, 0);
        Rng decoder_rng = derive_rng(seed, 4, 0);
        pyramid_ = add_pyramid_params(store_, cfg_.pyramid, pyramid_rng);
        projectors_ = add_projector_params(store_, cfg_.pyramid, projector_rng);
        if (cfg_.fusion == FusionKind::Sfi) {
            fusion_.sfi = add_sfi_params(store_, "fusion.sfi", Group::Fusion, cfg_.query_side, d, s, true, rng);
        } else {
            fusion_.concat_mix = store_.add("fusion.concat.mix", Group::Fusion, init::fan_in<T>(d, s * d, rng));
        }
        fusion_.visual_out = store_.add("fusion.visual_out", Group::Fusion, init::fan_in<T>(cfg_.decoder.d_model, d, rng, 0.5));
        decoder_ = add_decoder_params(store_, cfg_.decoder, s, decoder_rng);
        map_ = RegionMap(cfg_.query_side, cfg_.pyramid.sides());
        query_pe_ = positional_table<T>(cfg_.query_side, d);
        for (std::size_t side : cfg_.pyramid.sides()) scale_pe_.push_back(positional_table<T>(side, d));
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    ParamStore<T>& store() noexcept { return store_; }
    const ParamStore<T>& store() const noexcept { return store_; }
    const PyramidWeights& pyramid_weights() const noexcept { return pyramid_; }
    const ProjectorWeights& projector_weights() const noexcept { return projectors_; }
    const FusionWeights& fusion_weights() const noexcept { return fusion_; }
    const DecoderWeights& decoder_weights() const noexcept { return decoder_; }
    const RegionMap& region_map() const noexcept { return map_; }

    MultiScaleFeatures<T> encode(const Tensor<T>& image) const {
        return extract_pyramid(image, cfg_.pyramid, store_, pyramid_);
    }

    /// Projected scale grids with positional encodings, as graph nodes.
    std::vector<Var> project(const Binder<T>& bind, const MultiScaleFeatures<T>& raw) const {
        Graph<T>& g = bind.graph();
        std::vector<Var> in;
        for (const auto& grid : raw.grids) in.push_back(g.constant(grid));
        std::vector<Var> proj = project_scales(bind, projectors_, in);
        for (std::size_t s = 0; s < proj.size(); ++s) proj[s] = ag::add(g, proj[s], g.constant(scale_pe_[s]));
        return proj;
    }

    /// Fused visual block [L² × d_model].
    Var fuse(const Binder<T>& bind, const std::vector<Var>& features) const {
        Graph<T>& g = bind.graph();
        Var fused;
        if (cfg_.fusion == FusionKind::Sfi) {
            Var q_in = ag::add(g, bind(fusion_.sfi.query), g.constant(query_pe_));
            fused = sfi_attend(g, q_in, bind_sfi(bind, fusion_.sfi), features, map_);
        } else {
            fused = concat_fusion(g, features, cfg_.pyramid.sides(), cfg_.query_side, bind(fusion_.concat_mix));
        }
        return ag::linear(g, fused, bind(fusion_.visual_out));
    }

    struct Encoded {
        Var visual;
        MdaCache<T> cache;
    };

    Encoded encode_visual(const Binder<T>& bind, const MultiScaleFeatures<T>& raw) const {
        Encoded e;
        e.cache.features = project(bind, raw);
        e.cache.map = &map_;
        e.cache.query_pe = query_pe_;
        e.visual = fuse(bind, e.cache.features);
        return e;
    }

    /// Logits for one image-conditioned sequence.
    Var forward(const Binder<T>& bind, const Encoded& enc, const SequenceBatch& batch, Rng* dropout_rng = nullptr) const {
        DecoderRun<T> run{&cfg_.decoder, &decoder_, true, true, &enc.cache, dropout_rng};
        return decoder_forward(bind, run, enc.visual, batch);
    }

    /// Logits for a sequence whose visual block is given directly (no re-alignment).
    Var forward_prefix(const Binder<T>& bind, Var prefix, const SequenceBatch& batch) const {
        DecoderRun<T> run{&cfg_.decoder, &decoder_, false, true, nullptr, nullptr};
        return decoder_forward(bind, run, prefix, batch);
    }

    /// Base decoder only: no re-alignment and no adapters.
    Var forward_base(const Binder<T>& bind, Var visual, const SequenceBatch& batch) const {
        DecoderRun<T> run{&cfg_.decoder, &decoder_, false, false, nullptr, nullptr};
        return decoder_forward(bind, run, visual, batch);
    }

private:
    ModelConfig cfg_;
    ParamStore<T> store_;
    PyramidWeights pyramid_;
    ProjectorWeights projectors_;
    FusionWeights fusion_;
    DecoderWeights decoder_;
    RegionMap map_;
    Tensor<T> query_pe_;
    std::vector<Tensor<T>> scale_pe_;
};

}  // namespace aquila
