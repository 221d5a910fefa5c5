#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/mask.hpp"
#include "sparselab/model.hpp"
#include "sparselab/optim.hpp"
#include "sparselab/preconditioner.hpp"
#include "sparselab/rng.hpp"

namespace sparselab {

enum class DstMethod { set, rigl, static_mask };
enum class RegrowSource { original, corrected };
enum class DropDecay { constant, cosine };

struct DstConfig {
    DstMethod method = DstMethod::rigl;
    double drop_fraction = 0.3;
    long long update_every = 100;   // steps between mask updates
    double stop_after = 0.75;       // fraction of total training after which masks freeze
    RegrowSource regrow_source = RegrowSource::original;
    DropDecay drop_decay = DropDecay::constant;

    void validate() const {
        if (method == DstMethod::static_mask) return;
        if (!(drop_fraction > 0.0) || !(drop_fraction < 1.0))
            throw std::invalid_argument("DstConfig: drop_fraction must be in (0,1)");
        if (update_every < 1) throw std::invalid_argument("DstConfig: update_every must be >= 1");
    }

    double drop_fraction_at(long long step, long long stop_step) const {
        if (drop_decay == DropDecay::constant) return drop_fraction;
        if (stop_step <= 0) return drop_fraction;
        const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(stop_step));
        return drop_fraction * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
};

struct MaskUpdateEvent {
    long long step = 0;
    std::size_t layer = 0;
    std::size_t dropped = 0;
    std::size_t grown = 0;
    std::size_t repaired_rows = 0;
    std::vector<double> s_before;
    std::vector<double> s_after;

    double min_s() const { return *std::min_element(s_after.begin(), s_after.end()); }
    double max_s() const { return *std::max_element(s_after.begin(), s_after.end()); }
    double mean_s() const {
        return std::accumulate(s_after.begin(), s_after.end(), 0.0) / static_cast<double>(s_after.size());
    }
};

// Deactivates the k active entries of smallest |w|; ties broken by flat
// (row-major) index so results are reproducible.
inline Mask magnitude_prune(const Matrix& weights, const Mask& mask, std::size_t k) {
    if (weights.rows != mask.rows || weights.cols != mask.cols)
        throw std::invalid_argument("magnitude_prune: weights and mask shapes differ");
    const std::size_t active = mask.active_count();
    if (k > active) throw std::invalid_argument("magnitude_prune: k exceeds active count");
    Mask out = mask;
    if (k == 0) return out;
    std::vector<std::uint32_t> idx;
    idx.reserve(active);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.on[i]) idx.push_back(static_cast<std::uint32_t>(i));
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                         const double ma = std::abs(weights.data[a]);
                         const double mb = std::abs(weights.data[b]);
                         if (ma != mb) return ma < mb;
                         return a < b;
                     });
    for (std::size_t i = 0; i < k; ++i) out.on[idx[i]] = 0;
    return out;
}

// Activates k inactive entries chosen uniformly without replacement.
inline Mask set_regrow(const Mask& mask, std::size_t k, Rng& rng) {
    const std::size_t inactive = mask.size() - mask.active_count();
    if (k > inactive) throw std::invalid_argument("set_regrow: k exceeds inactive count");
    Mask out = mask;
    if (k == 0) return out;
    std::vector<std::uint32_t> idx;
    idx.reserve(inactive);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask.on[i]) idx.push_back(static_cast<std::uint32_t>(i));
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(idx.size() - i));
        std::swap(idx[i], idx[j]);
        out.on[idx[i]] = 1;
    }
    return out;
}

// Activates the k inactive entries of largest |grad| (gradient computed with
// the mask lifted); ties broken by flat index.
inline Mask rigl_regrow(const Mask& mask, const Matrix& dense_grad, std::size_t k) {
    if (dense_grad.rows != mask.rows || dense_grad.cols != mask.cols)
        throw std::invalid_argument("rigl_regrow: gradient and mask shapes differ");
    const std::size_t inactive = mask.size() - mask.active_count();
    if (k > inactive) throw std::invalid_argument("rigl_regrow: k exceeds inactive count");
    Mask out = mask;
    if (k == 0) return out;
    std::vector<std::uint32_t> idx;
    idx.reserve(inactive);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask.on[i]) idx.push_back(static_cast<std::uint32_t>(i));
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                         const double ma = std::abs(dense_grad.data[a]);
                         const double mb = std::abs(dense_grad.data[b]);
                         if (ma != mb) return ma > mb;
                         return a < b;
                     });
    for (std::size_t i = 0; i < k; ++i) out.on[idx[i]] = 1;
    return out;
}

// Running union of every mask seen, per tracked layer. R_m is the fraction of
// all parameters that were active at least once.
struct ItopTracker {
    std::vector<Mask> unions;
    std::size_t total_params = 0;

    void init(const std::vector<const Mask*>& masks) {
        unions.clear();
        total_params = 0;
        for (const Mask* m : masks) {
            unions.push_back(*m);
            total_params += m->size();
        }
    }

    void update(const std::vector<const Mask*>& masks) {
        if (masks.size() != unions.size()) throw std::invalid_argument("ItopTracker: layer count changed");
        for (std::size_t l = 0; l < masks.size(); ++l) {
            if (masks[l]->size() != unions[l].size())
                throw std::invalid_argument("ItopTracker: mask shape changed");
            for (std::size_t i = 0; i < unions[l].size(); ++i) unions[l].on[i] |= masks[l]->on[i];
        }
    }

    double rate() const {
        std::size_t active = 0;
        for (const auto& u : unions) active += u.active_count();
        return total_params == 0 ? 0.0 : static_cast<double>(active) / static_cast<double>(total_params);
    }
};

namespace detail {

// Collects the inactive-in-old-mask candidates of one row.
inline std::vector<std::uint32_t> row_candidates(const Mask& old_mask, std::size_t row) {
    std::vector<std::uint32_t> c;
    for (std::size_t j = 0; j < old_mask.cols; ++j)
        if (!old_mask(row, j)) c.push_back(static_cast<std::uint32_t>(row * old_mask.cols + j));
    return c;
}

}  // namespace detail

// One prune/regrow cycle over every prunable linear layer of the model.
// Per layer: k = round(f_drop(step) * active); the k smallest-|w| actives are
// dropped; rows left empty are repaired first (consuming regrow slots); the
// remaining slots are regrown by method among entries that were inactive
// before the update, so nothing is dropped and regrown in the same cycle.
// Newly grown weights start at zero with zero velocity, dropped entries have
// weight and velocity zeroed. Active counts are conserved exactly.
inline std::vector<MaskUpdateEvent> mask_update(Mlp& model, const MlpGrads& grads, const DstConfig& cfg,
                                                long long step, long long stop_step, Rng& rng,
                                                OptState* state = nullptr) {
    cfg.validate();
    std::vector<MaskUpdateEvent> events;
    if (cfg.method == DstMethod::static_mask) return events;
    if (!grads.has_dense && cfg.method == DstMethod::rigl)
        throw std::invalid_argument("mask_update: rigl needs dense gradients (run backward with dense grads)");

    const double f_drop = cfg.drop_fraction_at(step, stop_step);

    for (std::size_t l = 0; l < model.linears.size(); ++l) {
        auto& lin = model.linears[l];
        const Mask old_mask = lin.mask;
        const std::size_t active = old_mask.active_count();
        const std::size_t inactive = old_mask.size() - active;
        if (inactive == 0) continue;  // dense layer: nothing to explore
        std::size_t k = static_cast<std::size_t>(std::llround(f_drop * static_cast<double>(active)));
        k = std::min({k, active, inactive});
        if (k == 0) continue;

        MaskUpdateEvent ev;
        ev.step = step;
        ev.layer = l;
        ev.s_before = neuron_sparsities(old_mask);

        Mask pruned = magnitude_prune(lin.weights, old_mask, k);

        // Scores for gradient-based growth. The corrected source applies the
        // current per-neuron correction factors to the dense gradient, which
        // reranks candidates across rows.
        Matrix scores;
        if (cfg.method == DstMethod::rigl) {
            scores = grads.d_weights_dense[l];
            if (cfg.regrow_source == RegrowSource::corrected) {
                const Preconditioner p = build_preconditioner(old_mask, lin.mask_version);
                scores = apply_preconditioner(p, scores);
            }
        }

        // Repair: any row pruned down to zero fan-in regrows one entry that
        // was inactive before the update, chosen by score (rigl) or uniformly
        // (set). These regrowths count toward k.
        Mask grown = pruned;
        std::size_t repairs = 0;
        for (std::size_t r = 0; r < grown.rows && repairs < k; ++r) {
            if (grown.fan_in(r) > 0) continue;
            std::vector<std::uint32_t> cand = detail::row_candidates(old_mask, r);
            if (cand.empty()) continue;  // row was fully dense before; leave to global regrowth
            std::uint32_t pick = cand.front();
            if (cfg.method == DstMethod::rigl) {
                for (std::uint32_t c : cand)
                    if (std::abs(scores.data[c]) > std::abs(scores.data[pick])) pick = c;
            } else {
                pick = cand[static_cast<std::size_t>(rng.next_below(cand.size()))];
            }
            grown.on[pick] = 1;
            ++repairs;
        }

        // Global regrowth of the remaining slots among old-inactive entries.
        const std::size_t remaining = k - repairs;
        if (remaining > 0) {
            // Candidates: inactive before the update and still inactive now.
            Mask candidate_view = grown;
            for (std::size_t i = 0; i < candidate_view.size(); ++i)
                if (old_mask.on[i]) candidate_view.on[i] = 1;  // exclude dropped entries from regrowth
            Mask filled = cfg.method == DstMethod::rigl ? rigl_regrow(candidate_view, scores, remaining)
                                                        : set_regrow(candidate_view, remaining, rng);
            for (std::size_t i = 0; i < grown.size(); ++i)
                if (filled.on[i] && !candidate_view.on[i]) grown.on[i] = 1;
        }

        // Commit: zero weights and velocities on every changed entry.
        for (std::size_t i = 0; i < grown.size(); ++i) {
            const bool was = old_mask.on[i] != 0;
            const bool now = grown.on[i] != 0;
            if (was != now) {
                lin.weights.data[i] = 0.0;
                if (state) state->v_weights[l].data[i] = 0.0;
            }
        }
        lin.set_mask(grown);

        ev.dropped = k;
        ev.grown = k;
        ev.repaired_rows = repairs;
        ev.s_after = neuron_sparsities(lin.mask);
        if (lin.mask.active_count() != active)
            throw std::logic_error("mask_update: active count not conserved on layer " + std::to_string(l));
        events.push_back(std::move(ev));
    }
    return events;
}

}  // namespace sparselab
