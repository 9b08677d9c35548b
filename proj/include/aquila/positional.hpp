// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "aquila/tensor.hpp"

namespace aquila {

/// Fixed 2-D sinusoidal table [side² × dim]. The first dim/2 channels encode the row, the rest
/// the column; channel k of a band of width n uses frequency 10000^(-2⌊k/2⌋/n), sin on even k
/// and cos on odd k.
template <class T>
Tensor<T> positional_table(std::size_t side, std::size_t dim) {
    if (side == 0 || dim < 2) throw ShapeError("positional_table needs side ≥ 1 and dim ≥ 2");
    const std::size_t row_band = dim / 2;
    const std::size_t col_band = dim - row_band;
    auto encode = [](double pos, std::size_t k, std::size_t band) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k / 2) / static_cast<double>(band));
        return k % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    };
    Tensor<T> table({side * side, dim});
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            auto row = table.row(r * side + c);
            for (std::size_t k = 0; k < row_band; ++k) row[k] = static_cast<T>(encode(static_cast<double>(r), k, row_band));
            for (std::size_t k = 0; k < col_band; ++k)
                row[row_band + k] = static_cast<T>(encode(static_cast<double>(c), k, col_band));
        }
    return table;
}

template <class T>
Tensor<T> add_positional(const Tensor<T>& grid, std::size_t side) {
    grid.require_rank(2);
    if (grid.rows() != side * side) {
        throw ShapeError("add_positional: " + std::to_string(grid.rows()) + " tokens for side " + std::to_string(side));
    }
    Tensor<T> out = grid;
    const Tensor<T> pe = positional_table<T>(side, grid.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += pe[i];
    return out;
}

}  // namespace aquila
