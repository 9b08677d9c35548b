// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aquila/autograd.hpp"
#include "aquila/tensor.hpp"

namespace aquila {

/// Parameter groups used by the freeze masks. Fusion covers the query grid, projections and the
/// visual output map of whichever fusion module is active; Projector is the per-scale MLP stack.
enum class Group : std::uint8_t {
    Pyramid,
    Projector,
    Fusion,
    Realign,
    Lora,
    Decoder,
};

inline std::string_view group_name(Group g) {
    switch (g) {
    case Group::Pyramid: return "pyramid";
    case Group::Projector: return "projector";
    case Group::Fusion: return "fusion";
    case Group::Realign: return "realign";
    case Group::Lora: return "lora";
    case Group::Decoder: return "decoder";
    }
    return "?";
}

using GroupMask = std::set<Group>;

using ParamId = std::size_t;

using Rng = std::mt19937_64;

/// Independent generator per (seed, stream, index), so streams never share draws.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

template <class T>
struct Param {
    std::string name;
    Group group;
    Tensor<T> value;
};

/// Owns every named tensor of a model. Ids are stable indices.
template <class T>
class ParamStore {
public:
    ParamId add(std::string name, Group group, Tensor<T> value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_.emplace(name, params_.size());
        params_.push_back(Param<T>{std::move(name), group, std::move(value)});
        return params_.size() - 1;
    }

    std::size_t size() const noexcept { return params_.size(); }
    Param<T>& operator[](ParamId id) { return params_.at(id); }
    const Param<T>& operator[](ParamId id) const { return params_.at(id); }
    Tensor<T>& value(ParamId id) { return params_.at(id).value; }
    const Tensor<T>& value(ParamId id) const { return params_.at(id).value; }

    ParamId find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw StateError("unknown parameter: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

private:
    std::vector<Param<T>> params_;
    std::unordered_map<std::string, ParamId> index_;
};

/// Binds store parameters into a graph; only groups in the mask collect gradients.
template <class T>
class Binder {
public:
    Binder(Graph<T>& g, const ParamStore<T>& store, const GroupMask& trainable)
        : graph_(g), store_(store), trainable_(trainable) {}

    Var operator()(ParamId id) const {
        const Param<T>& p = store_[id];
        return graph_.param(id, p.value, trainable_.count(p.group) != 0);
    }

    Graph<T>& graph() const noexcept { return graph_; }
    const ParamStore<T>& store() const noexcept { return store_; }

private:
    Graph<T>& graph_;
    const ParamStore<T>& store_;
    const GroupMask& trainable_;
};

namespace init {

template <class T>
Tensor<T> normal(Dims dims, double stddev, Rng& rng) {
    Tensor<T> t(std::move(dims));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

/// N(0, 1/fan_in) for a [out × in] weight.
template <class T>
Tensor<T> fan_in(std::size_t out, std::size_t in, Rng& rng, double gain = 1.0) {
    return normal<T>({out, in}, gain / std::sqrt(static_cast<double>(in)), rng);
}

template <class T>
Tensor<T> zeros(Dims dims) {
    return Tensor<T>(std::move(dims));
}

template <class T>
Tensor<T> ones(Dims dims) {
    return Tensor<T>(std::move(dims), T{1});
}

}  // namespace init
}  // namespace aquila
