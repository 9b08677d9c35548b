// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "aquila/errors.hpp"
#include "aquila/dataset.hpp"
#include "aquila/model.hpp"

namespace aquila {

struct StageConfig {
    double lr = 1e-3;
    double weight_decay = 0.05;
    double warmup_ratio = 0.06;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double grad_clip = 1.0;
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    /// Training examples per epoch; total steps = epochs · ⌈samples / batch_size⌉.
    std::size_t samples = 16000;

    std::size_t total_steps() const { return epochs * ((samples + batch_size - 1) / batch_size); }
};

struct DataConfig {
    std::uint64_t seed = 1234;
    std::size_t val_samples = 200;
    std::size_t eval_samples = 200;
    std::size_t max_new_tokens = 12;
};

struct RunConfig {
    ModelConfig model;
    /// Language pretraining of the decoder before stage 1, standing in for a pretrained LLM.
    StageConfig pretrain{2e-3, 0.01, 0.05, 0.9, 0.95, 1e-8, 1.0, 1, 8, 12000};
    StageConfig stage1;
    StageConfig stage2{4e-5, 0.1, 0.03};
    DataConfig data;

    /// Applies `section.key = value`. Unknown keys and malformed values are configuration errors.
    void set(const std::string& qualified_key, const std::string& value);
    /// Every key with its current value, in a stable order.
    std::vector<std::pair<std::string, std::string>> entries() const;
    void validate() const;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
    N out{};
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end) throw ConfigError("invalid value for " + key + ": '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
    return out;
}

inline std::string format_list(const std::vector<std::size_t>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

inline std::string format_double(double x) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, p);
}

struct Key {
    std::string name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class N, class Get>
Key number_key(std::string name, Get field) {
    Key k;
    k.name = name;
    k.set = [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<N>(name, v); };
    k.get = [field](const RunConfig& c) {
        const N x = field(c);
        if constexpr (std::is_floating_point_v<N>) return format_double(x);
        else return std::to_string(x);
    };
    return k;
}

inline void add_stage_keys(std::vector<Key>& keys, const std::string& sec, StageConfig RunConfig::*stage) {
    keys.push_back(number_key<double>(sec + ".lr", [stage](auto& c) -> auto& { return (c.*stage).lr; }));
    keys.push_back(number_key<double>(sec + ".weight_decay", [stage](auto& c) -> auto& { return (c.*stage).weight_decay; }));
    keys.push_back(number_key<double>(sec + ".warmup_ratio", [stage](auto& c) -> auto& { return (c.*stage).warmup_ratio; }));
    keys.push_back(number_key<double>(sec + ".beta1", [stage](auto& c) -> auto& { return (c.*stage).beta1; }));
    keys.push_back(number_key<double>(sec + ".beta2", [stage](auto& c) -> auto& { return (c.*stage).beta2; }));
    keys.push_back(number_key<double>(sec + ".eps", [stage](auto& c) -> auto& { return (c.*stage).eps; }));
    keys.push_back(number_key<double>(sec + ".grad_clip", [stage](auto& c) -> auto& { return (c.*stage).grad_clip; }));
    keys.push_back(number_key<std::size_t>(sec + ".epochs", [stage](auto& c) -> auto& { return (c.*stage).epochs; }));
    keys.push_back(number_key<std::size_t>(sec + ".batch_size", [stage](auto& c) -> auto& { return (c.*stage).batch_size; }));
    keys.push_back(number_key<std::size_t>(sec + ".samples", [stage](auto& c) -> auto& { return (c.*stage).samples; }));
}

inline const std::vector<Key>& config_keys() {
    static const std::vector<Key> keys = [] {
        std::vector<Key> k;
        using Sz = std::size_t;
        k.push_back(number_key<Sz>("pyramid.resolution", [](auto& c) -> auto& { return c.model.pyramid.resolution; }));
        k.push_back({"pyramid.channels",
                     [](RunConfig& c, const std::string& v) { c.model.pyramid.channels = parse_list("pyramid.channels", v); },
                     [](const RunConfig& c) { return format_list(c.model.pyramid.channels); }});
        k.push_back(number_key<Sz>("pyramid.projected_dim", [](auto& c) -> auto& { return c.model.pyramid.projected_dim; }));
        k.push_back(number_key<Sz>("pyramid.projector_hidden", [](auto& c) -> auto& { return c.model.pyramid.projector_hidden; }));

        k.push_back(number_key<Sz>("sfi.query_side", [](auto& c) -> auto& { return c.model.query_side; }));
        k.push_back({"sfi.fusion",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "sfi") c.model.fusion = FusionKind::Sfi;
                         else if (v == "concat") c.model.fusion = FusionKind::Concat;
                         else throw ConfigError("sfi.fusion must be 'sfi' or 'concat', got '" + v + "'");
                     },
                     [](const RunConfig& c) { return fusion_name(c.model.fusion); }});
        k.push_back({"sfi.mda", [](RunConfig& c, const std::string& v) { c.model.mda = parse_bool("sfi.mda", v); },
                     [](const RunConfig& c) { return std::string(c.model.mda ? "true" : "false"); }});
        k.push_back({"sfi.layers",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "auto") c.model.decoder.sfi_layers.reset();
                         else if (v == "none") c.model.decoder.sfi_layers = std::vector<std::size_t>{};
                         else c.model.decoder.sfi_layers = parse_list("sfi.layers", v);
                     },
                     [](const RunConfig& c) {
                         const auto& l = c.model.decoder.sfi_layers;
                         if (!l) return std::string("auto");
                         return l->empty() ? std::string("none") : format_list(*l);
                     }});

        k.push_back(number_key<Sz>("decoder.n_layers", [](auto& c) -> auto& { return c.model.decoder.n_layers; }));
        k.push_back(number_key<Sz>("decoder.d_model", [](auto& c) -> auto& { return c.model.decoder.d_model; }));
        k.push_back(number_key<Sz>("decoder.n_heads", [](auto& c) -> auto& { return c.model.decoder.n_heads; }));
        k.push_back(number_key<Sz>("decoder.max_seq_len", [](auto& c) -> auto& { return c.model.decoder.max_seq_len; }));
        k.push_back(number_key<Sz>("decoder.mlp_ratio", [](auto& c) -> auto& { return c.model.decoder.mlp_ratio; }));
        k.push_back(number_key<Sz>("decoder.lora_rank", [](auto& c) -> auto& { return c.model.decoder.lora_rank; }));
        k.push_back(number_key<double>("decoder.lora_alpha", [](auto& c) -> auto& { return c.model.decoder.lora_alpha; }));
        k.push_back(number_key<double>("decoder.lora_dropout", [](auto& c) -> auto& { return c.model.decoder.lora_dropout; }));

        add_stage_keys(k, "train.pretrain", &RunConfig::pretrain);
        add_stage_keys(k, "train.stage1", &RunConfig::stage1);
        add_stage_keys(k, "train.stage2", &RunConfig::stage2);

        k.push_back(number_key<std::uint64_t>("data.seed", [](auto& c) -> auto& { return c.data.seed; }));
        k.push_back(number_key<Sz>("data.val_samples", [](auto& c) -> auto& { return c.data.val_samples; }));
        k.push_back(number_key<Sz>("data.eval_samples", [](auto& c) -> auto& { return c.data.eval_samples; }));
        k.push_back(number_key<Sz>("data.max_new_tokens", [](auto& c) -> auto& { return c.data.max_new_tokens; }));
        return k;
    }();
    return keys;
}

}  // namespace detail

inline void RunConfig::set(const std::string& qualified_key, const std::string& value) {
    for (const auto& k : detail::config_keys()) {
        if (k.name == qualified_key) {
            k.set(*this, detail::trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key: " + qualified_key);
}

inline std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : detail::config_keys()) out.emplace_back(k.name, k.get(*this));
    return out;
}

inline void RunConfig::validate() const {
    ModelConfig m = model;
    m.decoder.vocab_size = std::max<std::size_t>(m.decoder.vocab_size, 2);
    m.validate();
    for (const StageConfig* s : {&pretrain, &stage1, &stage2}) {
        if (!(s->lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (s->weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
        if (s->warmup_ratio < 0.0 || s->warmup_ratio >= 1.0) throw ConfigError("warmup_ratio must be in [0, 1)");
        if (s->beta1 < 0.0 || s->beta1 >= 1.0 || s->beta2 < 0.0 || s->beta2 >= 1.0) throw ConfigError("betas must be in [0, 1)");
        if (!(s->eps > 0.0)) throw ConfigError("eps must be positive");
        if (s->epochs == 0 || s->batch_size == 0 || s->samples == 0) throw ConfigError("epochs, batch_size and samples must be positive");
    }
    if (data.val_samples == 0 || data.eval_samples == 0) throw ConfigError("val/eval sample counts must be positive");
    if (data.max_new_tokens == 0) throw ConfigError("max_new_tokens must be positive");
    if (model.pyramid.resolution % kSceneGrid != 0 || model.pyramid.resolution < 8 * kSceneGrid) {
        throw ConfigError("pyramid.resolution must be a multiple of 4 and at least 32 for the scene renderer");
    }
}

/// Parses "[section]" headers and "key = value" lines; '#' starts a comment.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside of a section");
        base.set(section + "." + detail::trim(t.substr(0, eq)), t.substr(eq + 1));
    }
    return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

/// Renders the config back into the file syntax (parse_config(render_config(c)) == c).
inline std::string render_config(const RunConfig& cfg) {
    std::string out, section;
    for (const auto& [key, value] : cfg.entries()) {
        const auto dot = key.rfind('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            out += (out.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        out += key.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
}

}  // namespace aquila
