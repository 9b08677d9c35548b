// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aquila/autograd.hpp"
#include "aquila/params.hpp"
#include "aquila/tensor.hpp"

namespace aquila {

/// Multi-scale encoder geometry. Stage s has spatial side R / 4 / 2^s (0-based s).
struct PyramidConfig {
    std::size_t resolution = 64;
    std::vector<std::size_t> channels{8, 16, 32};
    std::size_t projected_dim = 32;
    /// 0 means 4 × projected_dim.
    std::size_t projector_hidden = 0;

    std::size_t num_scales() const noexcept { return channels.size(); }
    std::size_t hidden_dim() const noexcept { return projector_hidden ? projector_hidden : 4 * projected_dim; }

    void validate() const {
        if (channels.empty()) throw ConfigError("pyramid needs at least one scale");
        const std::size_t div = std::size_t{4} << (channels.size() - 1);
        if (resolution == 0 || resolution % div != 0) {
            throw ConfigError("resolution " + std::to_string(resolution) + " is not divisible by " + std::to_string(div) +
                              " for " + std::to_string(channels.size()) + " scales");
        }
        for (std::size_t s = 0; s < channels.size(); ++s) {
            if (channels[s] == 0) throw ConfigError("scale channels must be positive");
            if (s > 0 && channels[s] <= channels[s - 1]) throw ConfigError("scale channels must be strictly increasing");
        }
        if (projected_dim == 0) throw ConfigError("projected_dim must be positive");
    }

    std::vector<std::size_t> sides() const {
        validate();
        std::vector<std::size_t> out;
        std::size_t side = resolution / 4;
        for (std::size_t s = 0; s < channels.size(); ++s, side /= 2) out.push_back(side);
        return out;
    }

    static PyramidConfig reference() { return PyramidConfig{1024, {384, 768, 1536, 3072}, 1024, 0}; }
};

/// Per-scale token grids, row-major over each L_s × L_s grid.
template <class T>
struct MultiScaleFeatures {
    bool projected = false;
    std::vector<std::size_t> sides;
    std::vector<Tensor<T>> grids;

    std::size_t num_scales() const noexcept { return grids.size(); }
    std::size_t total_tokens() const {
        std::size_t n = 0;
        for (auto s : sides) n += s * s;
        return n;
    }
};

// ---------------------------------------------------------------------------------------------
// Image input format: u32 LE width, u32 LE height, then width*height RGB byte triples row-major.

struct RgbImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels;  // RGB interleaved
};

inline void write_image(const std::filesystem::path& path, const RgbImage& img) {
    if (img.pixels.size() != std::size_t{img.width} * img.height * 3) throw ShapeError("image pixel buffer size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError(FormatCode::Io, "cannot open " + path.string() + " for writing");
    auto put32 = [&](std::uint32_t v) {
        const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
        os.write(b, 4);
    };
    put32(img.width);
    put32(img.height);
    os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw FormatError(FormatCode::Io, "write failed: " + path.string());
}

inline RgbImage read_image(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(FormatCode::Io, "cannot open image " + path.string());
    unsigned char hdr[8];
    if (!is.read(reinterpret_cast<char*>(hdr), 8)) throw FormatError(FormatCode::Truncated, "image header truncated");
    auto get32 = [&](int o) {
        return std::uint32_t{hdr[o]} | std::uint32_t{hdr[o + 1]} << 8 | std::uint32_t{hdr[o + 2]} << 16 |
               std::uint32_t{hdr[o + 3]} << 24;
    };
    RgbImage img;
    img.width = get32(0);
    img.height = get32(4);
    if (img.width == 0 || img.height == 0 || img.width > 16384 || img.height > 16384) {
        throw FormatError(FormatCode::Malformed, "implausible image size");
    }
    img.pixels.resize(std::size_t{img.width} * img.height * 3);
    if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
        throw FormatError(FormatCode::Truncated, "image pixels truncated");
    }
    return img;
}

/// [H × W × 3] tensor with values scaled to [0, 1].
template <class T>
Tensor<T> image_to_tensor(const RgbImage& img) {
    Tensor<T> t({img.height, img.width, 3});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<T>(img.pixels[i]) / T{255};
    return t;
}

// ---------------------------------------------------------------------------------------------

struct PyramidWeights {
    std::vector<ParamId> weight, bias;
};

struct ProjectorWeights {
    std::vector<ParamId> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <class T>
PyramidWeights add_pyramid_params(ParamStore<T>& store, const PyramidConfig& cfg, Rng& rng) {
    cfg.validate();
    PyramidWeights w;
    std::size_t in = 3;
    for (std::size_t s = 0; s < cfg.num_scales(); ++s) {
        const std::string p = "pyramid.stage" + std::to_string(s);
        w.weight.push_back(store.add(p + ".weight", Group::Pyramid, init::fan_in<T>(cfg.channels[s], in, rng, 2.0)));
        w.bias.push_back(store.add(p + ".bias", Group::Pyramid, init::normal<T>({cfg.channels[s]}, 0.1, rng)));
        in = cfg.channels[s];
    }
    return w;
}

template <class T>
ProjectorWeights add_projector_params(ParamStore<T>& store, const PyramidConfig& cfg, Rng& rng) {
    ProjectorWeights w;
    const std::size_t h = cfg.hidden_dim(), d = cfg.projected_dim;
    for (std::size_t s = 0; s < cfg.num_scales(); ++s) {
        const std::string p = "projector." + std::to_string(s);
        w.fc1_w.push_back(store.add(p + ".fc1.weight", Group::Projector, init::fan_in<T>(h, cfg.channels[s], rng)));
        w.fc1_b.push_back(store.add(p + ".fc1.bias", Group::Projector, init::zeros<T>({h})));
        w.fc2_w.push_back(store.add(p + ".fc2.weight", Group::Projector, init::fan_in<T>(d, h, rng)));
        w.fc2_b.push_back(store.add(p + ".fc2.bias", Group::Projector, init::zeros<T>({d})));
    }
    return w;
}

/// Average pool a row-major [side² × c] grid by `factor` in both directions.
template <class T>
Tensor<T> avg_pool_grid(const Tensor<T>& grid, std::size_t side, std::size_t factor) {
    const std::size_t c = grid.cols();
    if (grid.rows() != side * side || side % factor != 0) throw ShapeError("avg_pool_grid: bad grid");
    const std::size_t out_side = side / factor;
    Tensor<T> out({out_side * out_side, c});
    const T inv = T{1} / static_cast<T>(factor * factor);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t col = 0; col < side; ++col) {
            auto src = grid.row(r * side + col);
            auto dst = out.row((r / factor) * out_side + col / factor);
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j] * inv;
        }
    return out;
}

/// Toy encoder: the first stage pools 4×4, later stages pool 2×2; each stage is followed by a
/// channel map and GELU. Output grids are raw (unprojected).
template <class T>
MultiScaleFeatures<T> extract_pyramid(const Tensor<T>& image, const PyramidConfig& cfg, const ParamStore<T>& store,
                                      const PyramidWeights& w) {
    cfg.validate();
    image.require_rank(3);
    if (image.dims()[0] != cfg.resolution || image.dims()[1] != cfg.resolution || image.dims()[2] != 3) {
        throw ShapeError("image must be " + std::to_string(cfg.resolution) + "x" + std::to_string(cfg.resolution) +
                         "x3, got " + dims_str(image.dims()));
    }
    MultiScaleFeatures<T> out;
    out.sides = cfg.sides();
    Tensor<T> grid = image.reshaped({cfg.resolution * cfg.resolution, 3});
    std::size_t side = cfg.resolution;
    for (std::size_t s = 0; s < cfg.num_scales(); ++s) {
        const std::size_t factor = s == 0 ? 4 : 2;
        Tensor<T> pooled = avg_pool_grid(grid, side, factor);
        side /= factor;
        Tensor<T> mapped = matmul_nt(pooled, store.value(w.weight[s]));
        const Tensor<T>& b = store.value(w.bias[s]);
        for (std::size_t r = 0; r < mapped.rows(); ++r) {
            auto row = mapped.row(r);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] = gelu(row[j] + b[j]);
        }
        out.grids.push_back(mapped);
        grid = std::move(mapped);
    }
    return out;
}

/// Per-scale two-layer MLP (Linear, GELU, Linear) to the unified width, as graph nodes.
template <class T>
std::vector<Var> project_scales(const Binder<T>& bind, const ProjectorWeights& w, const std::vector<Var>& raw) {
    Graph<T>& g = bind.graph();
    if (raw.size() != w.fc1_w.size()) throw ShapeError("project_scales: scale count mismatch");
    std::vector<Var> out;
    for (std::size_t s = 0; s < raw.size(); ++s) {
        Var h = ag::linear(g, raw[s], bind(w.fc1_w[s]), bind(w.fc1_b[s]));
        h = ag::gelu(g, h);
        out.push_back(ag::linear(g, h, bind(w.fc2_w[s]), bind(w.fc2_b[s])));
    }
    return out;
}

template <class T>
MultiScaleFeatures<T> project_scales(const MultiScaleFeatures<T>& raw, const ParamStore<T>& store,
                                     const ProjectorWeights& w) {
    if (raw.projected) throw ShapeError("project_scales expects raw features");
    Graph<T> g;
    const GroupMask none;
    Binder<T> bind(g, store, none);
    std::vector<Var> in;
    for (const auto& grid : raw.grids) in.push_back(g.constant(grid));
    auto vars = project_scales(bind, w, in);
    MultiScaleFeatures<T> out;
    out.projected = true;
    out.sides = raw.sides;
    for (Var v : vars) out.grids.push_back(g.value(v));
    return out;
}

}  // namespace aquila
