#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sparselab/model.hpp"
#include "sparselab/preconditioner.hpp"

namespace sparselab {

// Per-parameter momentum buffers, congruent with the model that created them.
// Masked entries of sparse-layer buffers are zeroed whenever the mask changes
// (see dst.hpp).
struct OptState {
    std::vector<Matrix> v_weights;
    std::vector<std::vector<double>> v_bias;
    std::vector<VecGrads> v_bn;  // d_gamma/d_beta fields reused as velocity storage
    std::vector<VecGrads> v_ln;
    long long t = 0;

    static OptState for_model(const Mlp& model) {
        OptState s;
        for (const auto& lin : model.linears) {
            s.v_weights.emplace_back(lin.weights.rows, lin.weights.cols);
            s.v_bias.emplace_back(lin.bias.size(), 0.0);
        }
        for (const auto& bn : model.batchnorms)
            s.v_bn.push_back({std::vector<double>(bn.features(), 0.0), std::vector<double>(bn.features(), 0.0)});
        for (const auto& ln : model.layernorms)
            s.v_ln.push_back({std::vector<double>(ln.features(), 0.0), std::vector<double>(ln.features(), 0.0)});
        return s;
    }
};

struct SgdOptions {
    double eta = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

namespace detail {

// v <- momentum*v + g_eff; w <- w - eta*v
inline void momentum_update(double* w, const double* g_eff, double* v, std::size_t n, const SgdOptions& opt) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = opt.momentum * v[i] + g_eff[i];
        w[i] -= opt.eta * v[i];
    }
}

inline void step_vector(std::vector<double>& w, const std::vector<double>& g, std::vector<double>& v,
                        const SgdOptions& opt, double ham_alpha = 0.0) {
    std::vector<double> g_eff(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = g[i] + opt.weight_decay * w[i];
        if (ham_alpha > 0.0) gi *= 1.0 + ham_alpha * std::abs(w[i]);
        g_eff[i] = gi;
    }
    momentum_update(w.data(), g_eff.data(), v.data(), w.size(), opt);
}

}  // namespace detail

// One heavy-ball SGD step over every parameter of the model.
// v <- momentum*v + (g + weight_decay*w); w <- w - eta*v. Masked weight
// entries have zero gradient and zero velocity, so they stay exactly zero.
inline void sgd_step(Mlp& model, const MlpGrads& grads, OptState& state, const SgdOptions& opt) {
    for (std::size_t l = 0; l < model.linears.size(); ++l) {
        auto& lin = model.linears[l];
        const Matrix& g = grads.d_weights[l];
        check_same_shape(lin.weights, g, "sgd_step");
        std::vector<double> g_eff(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            g_eff[i] = g.data[i] + opt.weight_decay * lin.weights.data[i];
        detail::momentum_update(lin.weights.data.data(), g_eff.data(), state.v_weights[l].data.data(), g.size(),
                                opt);
        if (!lin.bias.empty()) detail::step_vector(lin.bias, grads.d_bias[l], state.v_bias[l], opt);
    }
    for (std::size_t l = 0; l < model.batchnorms.size(); ++l) {
        detail::step_vector(model.batchnorms[l].gamma, grads.bn_grads[l].d_gamma, state.v_bn[l].d_gamma, opt);
        detail::step_vector(model.batchnorms[l].beta, grads.bn_grads[l].d_beta, state.v_bn[l].d_beta, opt);
    }
    for (std::size_t l = 0; l < model.layernorms.size(); ++l) {
        detail::step_vector(model.layernorms[l].gamma, grads.ln_grads[l].d_gamma, state.v_ln[l].d_gamma, opt);
        detail::step_vector(model.layernorms[l].beta, grads.ln_grads[l].d_beta, state.v_ln[l].d_beta, opt);
    }
    ++state.t;
}

// Sparsity-aware preconditioned step: each sparse weight gradient goes through
// apply_preconditioner before entering the momentum recurrence; every other
// parameter follows the plain SGD path. With all-dense masks the
// preconditioners are exact identities and the result is bit-identical to
// sgd_step.
inline void sparseopt_step(Mlp& model, const MlpGrads& grads, const std::vector<Preconditioner>& precs,
                           OptState& state, const SgdOptions& opt) {
    if (precs.size() != model.linears.size())
        throw std::invalid_argument("sparseopt_step: one preconditioner per linear layer required");
    for (std::size_t l = 0; l < model.linears.size(); ++l) {
        auto& lin = model.linears[l];
        if (precs[l].mask_version != lin.mask_version)
            throw std::runtime_error("sparseopt_step: stale preconditioner for layer " + std::to_string(l) +
                                     " (mask changed since build)");
        const Matrix pg = apply_preconditioner(precs[l], grads.d_weights[l]);
        std::vector<double> g_eff(pg.size());
        for (std::size_t i = 0; i < pg.size(); ++i)
            g_eff[i] = pg.data[i] + opt.weight_decay * lin.weights.data[i];
        detail::momentum_update(lin.weights.data.data(), g_eff.data(), state.v_weights[l].data.data(), pg.size(),
                                opt);
        if (!lin.bias.empty()) detail::step_vector(lin.bias, grads.d_bias[l], state.v_bias[l], opt);
    }
    for (std::size_t l = 0; l < model.batchnorms.size(); ++l) {
        detail::step_vector(model.batchnorms[l].gamma, grads.bn_grads[l].d_gamma, state.v_bn[l].d_gamma, opt);
        detail::step_vector(model.batchnorms[l].beta, grads.bn_grads[l].d_beta, state.v_bn[l].d_beta, opt);
    }
    for (std::size_t l = 0; l < model.layernorms.size(); ++l) {
        detail::step_vector(model.layernorms[l].gamma, grads.ln_grads[l].d_gamma, state.v_ln[l].d_gamma, opt);
        detail::step_vector(model.layernorms[l].beta, grads.ln_grads[l].d_beta, state.v_ln[l].d_beta, opt);
    }
    ++state.t;
}

// Momentum-free metric step: weights and biases move along (1 + alpha*|w|) ⊙ g,
// normalization parameters (gamma, beta) take the plain gradient.
inline void ham_step(Mlp& model, const MlpGrads& grads, double eta, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("ham_step: alpha must be >= 0");
    for (std::size_t l = 0; l < model.linears.size(); ++l) {
        auto& lin = model.linears[l];
        const Matrix& g = grads.d_weights[l];
        check_same_shape(lin.weights, g, "ham_step");
        for (std::size_t i = 0; i < g.size(); ++i) {
            double& w = lin.weights.data[i];
            w -= eta * (1.0 + alpha * std::abs(w)) * g.data[i];
        }
        for (std::size_t i = 0; i < lin.bias.size(); ++i) {
            double& b = lin.bias[i];
            b -= eta * (1.0 + alpha * std::abs(b)) * grads.d_bias[l][i];
        }
    }
    for (std::size_t l = 0; l < model.batchnorms.size(); ++l) {
        auto& bn = model.batchnorms[l];
        for (std::size_t i = 0; i < bn.gamma.size(); ++i) {
            bn.gamma[i] -= eta * grads.bn_grads[l].d_gamma[i];
            bn.beta[i] -= eta * grads.bn_grads[l].d_beta[i];
        }
    }
    for (std::size_t l = 0; l < model.layernorms.size(); ++l) {
        auto& ln = model.layernorms[l];
        for (std::size_t i = 0; i < ln.gamma.size(); ++i) {
            ln.gamma[i] -= eta * grads.ln_grads[l].d_gamma[i];
            ln.beta[i] -= eta * grads.ln_grads[l].d_beta[i];
        }
    }
}

// Global l2 norm over all parameter gradients; every gradient is multiplied by
// 1/max(norm, 1). Returns the pre-scaling norm.
inline double grad_renormalize(MlpGrads& grads) {
    double sq = 0.0;
    for (const auto& g : grads.d_weights)
        for (double v : g.data) sq += v * v;
    for (const auto& g : grads.d_bias)
        for (double v : g) sq += v * v;
    for (const auto& g : grads.bn_grads) {
        for (double v : g.d_gamma) sq += v * v;
        for (double v : g.d_beta) sq += v * v;
    }
    for (const auto& g : grads.ln_grads) {
        for (double v : g.d_gamma) sq += v * v;
        for (double v : g.d_beta) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    const double scale = 1.0 / std::max(norm, 1.0);
    if (scale != 1.0) {
        for (auto& g : grads.d_weights)
            for (double& v : g.data) v *= scale;
        for (auto& g : grads.d_bias)
            for (double& v : g) v *= scale;
        for (auto& g : grads.bn_grads) {
            for (double& v : g.d_gamma) v *= scale;
            for (double& v : g.d_beta) v *= scale;
        }
        for (auto& g : grads.ln_grads) {
            for (double& v : g.d_gamma) v *= scale;
            for (double& v : g.d_beta) v *= scale;
        }
    }
    return norm;
}

// Full update pipeline used by the training loop: weight decay, optional
// preconditioning, optional hyperbolic metric on the (already corrected)
// weight gradients, then the momentum recurrence. The metric leaves
// normalization parameters untouched.
struct OptimizerConfig {
    SgdOptions sgd;
    bool use_sparseopt = false;
    bool use_ham = false;
    double ham_alpha = 4.0;
};

inline void optimizer_step(Mlp& model, const MlpGrads& grads, const std::vector<Preconditioner>* precs,
                           OptState& state, const OptimizerConfig& cfg) {
    for (std::size_t l = 0; l < model.linears.size(); ++l) {
        auto& lin = model.linears[l];
        Matrix g = grads.d_weights[l];
        check_same_shape(lin.weights, g, "optimizer_step");
        if (cfg.use_sparseopt) {
            if (!precs) throw std::invalid_argument("optimizer_step: sparseopt requires preconditioners");
            if ((*precs)[l].mask_version != lin.mask_version)
                throw std::runtime_error("optimizer_step: stale preconditioner for layer " + std::to_string(l));
            g = apply_preconditioner((*precs)[l], g);
        }
        std::vector<double> g_eff(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            double gi = g.data[i] + cfg.sgd.weight_decay * lin.weights.data[i];
            if (cfg.use_ham) gi *= 1.0 + cfg.ham_alpha * std::abs(lin.weights.data[i]);
            g_eff[i] = gi;
        }
        detail::momentum_update(lin.weights.data.data(), g_eff.data(), state.v_weights[l].data.data(), g.size(),
                                cfg.sgd);
        if (!lin.bias.empty())
            detail::step_vector(lin.bias, grads.d_bias[l], state.v_bias[l], cfg.sgd,
                                cfg.use_ham ? cfg.ham_alpha : 0.0);
    }
    for (std::size_t l = 0; l < model.batchnorms.size(); ++l) {
        detail::step_vector(model.batchnorms[l].gamma, grads.bn_grads[l].d_gamma, state.v_bn[l].d_gamma, cfg.sgd);
        detail::step_vector(model.batchnorms[l].beta, grads.bn_grads[l].d_beta, state.v_bn[l].d_beta, cfg.sgd);
    }
    for (std::size_t l = 0; l < model.layernorms.size(); ++l) {
        detail::step_vector(model.layernorms[l].gamma, grads.ln_grads[l].d_gamma, state.v_ln[l].d_gamma, cfg.sgd);
        detail::step_vector(model.layernorms[l].beta, grads.ln_grads[l].d_beta, state.v_ln[l].d_beta, cfg.sgd);
    }
    ++state.t;
}

}  // namespace sparselab
