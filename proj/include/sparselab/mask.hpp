#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/matrix.hpp"
#include "sparselab/rng.hpp"

namespace sparselab {

// Binary connectivity pattern of a weight matrix, oriented out_neurons x
// in_features: row i holds the incoming connections of neuron i.
struct Mask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> on;

    Mask() = default;
    Mask(std::size_t r, std::size_t c, bool active = false) : rows(r), cols(c), on(r * c, active ? 1 : 0) {}

    static Mask dense(std::size_t r, std::size_t c) { return Mask(r, c, true); }

    std::uint8_t& operator()(std::size_t i, std::size_t j) { return on[i * cols + j]; }
    std::uint8_t operator()(std::size_t i, std::size_t j) const { return on[i * cols + j]; }

    std::size_t size() const { return on.size(); }

    std::size_t active_count() const {
        return static_cast<std::size_t>(std::accumulate(on.begin(), on.end(), std::uint64_t{0}));
    }

    std::size_t fan_in(std::size_t row) const {
        std::size_t n = 0;
        for (std::size_t j = 0; j < cols; ++j) n += on[row * cols + j];
        return n;
    }

    bool is_dense() const { return active_count() == size(); }

    bool operator==(const Mask& o) const { return rows == o.rows && cols == o.cols && on == o.on; }
};

// s_i = 1 - fan_in_i / in_features, one entry per output neuron.
inline std::vector<double> neuron_sparsities(const Mask& mask) {
    if (mask.rows == 0 || mask.cols == 0) throw std::invalid_argument("neuron_sparsities: empty mask");
    std::vector<double> s(mask.rows);
    for (std::size_t i = 0; i < mask.rows; ++i)
        s[i] = 1.0 - static_cast<double>(mask.fan_in(i)) / static_cast<double>(mask.cols);
    return s;
}

// Uniform mask with exactly round(density * size) active entries. Rows left
// empty by the draw are repaired by moving one active entry out of a fullest
// row, so the active count is preserved exactly.
struct MaskRepairLog {
    std::size_t repaired_rows = 0;
};

inline Mask random_mask(std::size_t rows, std::size_t cols, double density, Rng& rng,
                        MaskRepairLog* log = nullptr) {
    if (!(density > 0.0) || density > 1.0)
        throw std::invalid_argument("random_mask: density must be in (0,1]");
    const std::size_t total = rows * cols;
    const std::size_t k = static_cast<std::size_t>(std::llround(density * static_cast<double>(total)));
    Mask mask(rows, cols);
    // Partial Fisher-Yates over flat indices.
    std::vector<std::uint32_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0u);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(total - i));
        std::swap(idx[i], idx[j]);
        mask.on[idx[i]] = 1;
    }
    // Repair pass: no neuron may end up with zero incoming connections.
    for (std::size_t r = 0; r < rows; ++r) {
        if (mask.fan_in(r) > 0) continue;
        std::size_t donor = r;
        std::size_t best = 0;
        for (std::size_t i = 0; i < rows; ++i) {
            const std::size_t f = mask.fan_in(i);
            if (f > best) {
                best = f;
                donor = i;
            }
        }
        if (best < 2) throw std::runtime_error("random_mask: cannot repair empty row, mask too sparse");
        // Drop a random active entry of the donor row, grow a random entry here.
        std::size_t nth = static_cast<std::size_t>(rng.next_below(best));
        for (std::size_t j = 0; j < cols; ++j) {
            if (!mask(donor, j)) continue;
            if (nth-- == 0) {
                mask(donor, j) = 0;
                break;
            }
        }
        mask(r, static_cast<std::size_t>(rng.next_below(cols))) = 1;
        if (log) ++log->repaired_rows;
    }
    return mask;
}

// Mask where every neuron has exactly the same fan-in (used by the layer-norm
// check, whose prediction only holds under uniform per-neuron sparsity).
inline Mask uniform_fanin_mask(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
    if (fan_in == 0 || fan_in > cols) throw std::invalid_argument("uniform_fanin_mask: bad fan_in");
    Mask mask(rows, cols);
    std::vector<std::uint32_t> idx(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::iota(idx.begin(), idx.end(), 0u);
        for (std::size_t i = 0; i < fan_in; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.next_below(cols - i));
            std::swap(idx[i], idx[j]);
            mask(r, idx[i]) = 1;
        }
    }
    return mask;
}

// The uniform-sparsity analysis only applies when every neuron shares one
// fan-in; returns it, or throws naming the first offending row.
inline std::size_t require_uniform_fanin(const Mask& mask) {
    if (mask.rows == 0) throw std::invalid_argument("require_uniform_fanin: empty mask");
    const std::size_t f0 = mask.fan_in(0);
    for (std::size_t r = 1; r < mask.rows; ++r)
        if (mask.fan_in(r) != f0)
            throw std::runtime_error("mask is not uniform fan-in: row " + std::to_string(r) + " has " +
                                     std::to_string(mask.fan_in(r)) + " active entries, row 0 has " +
                                     std::to_string(f0));
    return f0;
}

// Erdos-Renyi-kernel style per-layer density allocation: density proportional
// to (in+out)/(in*out), normalized so the global active fraction equals
// 1 - target_sparsity. Layers that would exceed density 1 are clamped and the
// deficit redistributed over the rest.
inline std::vector<double> erk_densities(const std::vector<std::pair<std::size_t, std::size_t>>& layer_dims,
                                         double target_sparsity) {
    if (target_sparsity < 0.0 || target_sparsity >= 1.0)
        throw std::invalid_argument("erk_densities: target_sparsity must be in [0,1)");
    const std::size_t n = layer_dims.size();
    std::vector<double> density(n, 0.0);
    std::vector<bool> clamped(n, false);
    double total_params = 0.0;
    for (auto [in, out] : layer_dims) total_params += static_cast<double>(in) * static_cast<double>(out);
    const double required = (1.0 - target_sparsity) * total_params;
    if (required > total_params + 1e-9) throw std::invalid_argument("erk_densities: infeasible target");

    while (true) {
        double clamped_params = 0.0;
        double weight_sum = 0.0;  // sum of (in+out) over unclamped layers
        for (std::size_t l = 0; l < n; ++l) {
            const double in = static_cast<double>(layer_dims[l].first);
            const double out = static_cast<double>(layer_dims[l].second);
            if (clamped[l])
                clamped_params += in * out;
            else
                weight_sum += in + out;
        }
        if (weight_sum == 0.0) break;  // everything clamped
        const double c = (required - clamped_params) / weight_sum;
        bool newly_clamped = false;
        for (std::size_t l = 0; l < n; ++l) {
            if (clamped[l]) continue;
            const double in = static_cast<double>(layer_dims[l].first);
            const double out = static_cast<double>(layer_dims[l].second);
            density[l] = c * (in + out) / (in * out);
            if (density[l] > 1.0) {
                density[l] = 1.0;
                clamped[l] = true;
                newly_clamped = true;
            }
        }
        if (!newly_clamped) break;
    }
    for (std::size_t l = 0; l < n; ++l)
        if (clamped[l]) density[l] = 1.0;
    return density;
}

enum class InitScheme { dense_kaiming, sparse_aware };

// Per-neuron weight std. dense_kaiming ignores the mask; sparse_aware scales
// by the actual fan-in so pre-activation variance stays flat across neurons.
inline std::vector<double> sparse_init_scale(const Mask& mask, InitScheme scheme) {
    std::vector<double> out(mask.rows);
    for (std::size_t i = 0; i < mask.rows; ++i) {
        if (scheme == InitScheme::dense_kaiming) {
            out[i] = std::sqrt(2.0 / static_cast<double>(mask.cols));
        } else {
            const std::size_t f = mask.fan_in(i);
            if (f == 0)
                throw std::runtime_error("sparse_init_scale: neuron " + std::to_string(i) +
                                         " has no active incoming weights");
            out[i] = std::sqrt(2.0 / static_cast<double>(f));
        }
    }
    return out;
}

}  // namespace sparselab
