// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "aquila/errors.hpp"

namespace aquila {

/// Assignment of each query-grid cell to its k_s × k_s block in every scale grid.
///
/// Query (r, c) on the L × L grid maps to rows [r·k_s, (r+1)·k_s) and cols [c·k_s, (c+1)·k_s)
/// of scale s, whose side is k_s·L. Indices within a block are row-major.
class RegionMap {
public:
    RegionMap() = default;

    RegionMap(std::size_t query_side, std::vector<std::size_t> scale_sides)
        : query_side_(query_side), sides_(std::move(scale_sides)) {
        if (query_side_ == 0) throw ConfigError("query side must be positive");
        if (sides_.empty()) throw ConfigError("region map needs at least one scale");
        const std::size_t n = query_side_ * query_side_;
        for (std::size_t side : sides_) {
            if (side == 0 || side % query_side_ != 0) {
                throw ConfigError("scale side " + std::to_string(side) + " is not a positive multiple of query side " +
                                  std::to_string(query_side_));
            }
            const std::size_t k = side / query_side_;
            ratios_.push_back(k);
            std::vector<std::vector<std::size_t>> per_query(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t qr = i / query_side_, qc = i % query_side_;
                auto& idx = per_query[i];
                idx.reserve(k * k);
                for (std::size_t dr = 0; dr < k; ++dr)
                    for (std::size_t dc = 0; dc < k; ++dc) idx.push_back((qr * k + dr) * side + qc * k + dc);
            }
            regions_.push_back(std::move(per_query));
        }
    }

    std::size_t query_side() const noexcept { return query_side_; }
    std::size_t query_count() const noexcept { return query_side_ * query_side_; }
    std::size_t num_scales() const noexcept { return sides_.size(); }
    const std::vector<std::size_t>& scale_sides() const noexcept { return sides_; }
    const std::vector<std::size_t>& ratios() const noexcept { return ratios_; }

    /// Token indices of scale s attended by query i.
    const std::vector<std::size_t>& region(std::size_t i, std::size_t s) const { return regions_.at(s).at(i); }

    /// Keys/values per query across all scales: Σ k_s².
    std::size_t kv_count() const noexcept {
        std::size_t n = 0;
        for (auto k : ratios_) n += k * k;
        return n;
    }

    /// Row offset of scale s when all scale grids are stacked scale-major.
    std::size_t scale_offset(std::size_t s) const {
        std::size_t off = 0;
        for (std::size_t t = 0; t < s; ++t) off += sides_[t] * sides_[t];
        return off;
    }

    /// Stacked-row indices for query i: scale-major, row-major within each block.
    std::vector<std::size_t> stacked_region(std::size_t i) const {
        std::vector<std::size_t> out;
        out.reserve(kv_count());
        for (std::size_t s = 0; s < sides_.size(); ++s) {
            const std::size_t off = scale_offset(s);
            for (std::size_t idx : region(i, s)) out.push_back(off + idx);
        }
        return out;
    }

private:
    std::size_t query_side_ = 0;
    std::vector<std::size_t> sides_;
    std::vector<std::size_t> ratios_;
    std::vector<std::vector<std::vector<std::size_t>>> regions_;
};

inline RegionMap build_region_map(std::size_t query_side, const std::vector<std::size_t>& scale_sides) {
    return RegionMap(query_side, scale_sides);
}

}  // namespace aquila
