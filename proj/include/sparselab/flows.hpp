#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparselab/matrix.hpp"
#include "sparselab/rng.hpp"

namespace sparselab {

// One student/teacher neuron: prediction a * relu(gamma * xhat + beta) where
// xhat is the full-dataset batch normalization of w.z.
struct NeuronParams {
    double a = 1.0;
    std::vector<double> w;
    double gamma = 1.0;
    double beta = 0.0;
    std::vector<std::uint8_t> mask;  // over w; masked entries of w are held at 0

    std::size_t dim() const { return w.size(); }

    std::size_t active_count() const {
        std::size_t n = 0;
        for (auto m : mask) n += m;
        return n;
    }

    double sparsity() const {
        return 1.0 - static_cast<double>(active_count()) / static_cast<double>(dim());
    }

    void apply_mask() {
        for (std::size_t j = 0; j < w.size(); ++j)
            if (!mask[j]) w[j] = 0.0;
    }
};

struct TeacherDataset {
    Matrix inputs;                // m x dim
    std::vector<double> targets;  // m
};

struct NeuronGrads {
    double a = 0.0;
    double gamma = 0.0;
    double beta = 0.0;
    std::vector<double> w;
};

struct FlowEval {
    double loss = 0.0;
    std::vector<NeuronGrads> grads;  // one entry per student neuron
    std::size_t relu_kinks = 0;      // samples that hit the ReLU kink exactly
};

// Prediction of a sum of neurons on the whole dataset, each neuron normalized
// by its own full-dataset statistics.
inline std::vector<double> flow_predict(const std::vector<NeuronParams>& neurons, const Matrix& z, double eps) {
    const std::size_t m = z.rows;
    std::vector<double> pred(m, 0.0);
    for (const auto& p : neurons) {
        if (p.dim() != z.cols) throw std::invalid_argument("flow_predict: dimension mismatch");
        std::vector<double> x(m, 0.0);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t d = 0; d < z.cols; ++d)
                if (p.mask[d]) x[j] += p.w[d] * z(j, d);
        double mu = 0.0;
        for (double v : x) mu += v;
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (double v : x) var += (v - mu) * (v - mu);
        var /= static_cast<double>(m);
        if (var + eps <= 0.0) throw std::runtime_error("flow_predict: zero variance with eps = 0");
        const double denom = std::sqrt(var + eps);
        for (std::size_t j = 0; j < m; ++j) {
            const double y = p.gamma * (x[j] - mu) / denom + p.beta;
            pred[j] += p.a * (y > 0.0 ? y : 0.0);
        }
    }
    return pred;
}

// L = (1/2m) sum_j (target_j - sum_k a_k relu(y_kj))^2 and its exact gradient
// for every parameter of every neuron, with the chain rule taken through the
// full-dataset normalization. Masked entries of each w-gradient are zeroed.
inline FlowEval multi_neuron_loss_grads(const std::vector<NeuronParams>& neurons, const TeacherDataset& data,
                                        double eps) {
    const std::size_t m = data.inputs.rows;
    const std::size_t dim = data.inputs.cols;
    if (m < 2) throw std::invalid_argument("multi_neuron_loss_grads: need at least 2 samples");
    if (data.targets.size() != m) throw std::invalid_argument("multi_neuron_loss_grads: target count mismatch");

    struct PerNeuron {
        std::vector<double> x, xhat, y, act, dact;
        double denom = 0.0;
    };
    std::vector<PerNeuron> fw(neurons.size());
    FlowEval out;
    std::vector<double> pred(m, 0.0);

    for (std::size_t k = 0; k < neurons.size(); ++k) {
        const auto& p = neurons[k];
        if (p.dim() != dim) throw std::invalid_argument("multi_neuron_loss_grads: dimension mismatch");
        auto& f = fw[k];
        f.x.assign(m, 0.0);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t d = 0; d < dim; ++d)
                if (p.mask[d]) f.x[j] += p.w[d] * data.inputs(j, d);
        double mu = 0.0;
        for (double v : f.x) mu += v;
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (double v : f.x) var += (v - mu) * (v - mu);
        var /= static_cast<double>(m);
        if (var + eps <= 0.0) throw std::runtime_error("multi_neuron_loss_grads: zero variance with eps = 0");
        f.denom = std::sqrt(var + eps);
        f.xhat.resize(m);
        f.y.resize(m);
        f.act.resize(m);
        f.dact.resize(m);
        for (std::size_t j = 0; j < m; ++j) {
            f.xhat[j] = (f.x[j] - mu) / f.denom;
            f.y[j] = p.gamma * f.xhat[j] + p.beta;
            f.act[j] = f.y[j] > 0.0 ? f.y[j] : 0.0;
            f.dact[j] = f.y[j] > 0.0 ? 1.0 : 0.0;
            if (f.y[j] == 0.0) ++out.relu_kinks;
            pred[j] += p.a * f.act[j];
        }
    }

    std::vector<double> residual(m);  // e_j = target_j - pred_j
    for (std::size_t j = 0; j < m; ++j) {
        residual[j] = data.targets[j] - pred[j];
        out.loss += residual[j] * residual[j];
    }
    out.loss /= 2.0 * static_cast<double>(m);

    out.grads.resize(neurons.size());
    for (std::size_t k = 0; k < neurons.size(); ++k) {
        const auto& p = neurons[k];
        const auto& f = fw[k];
        auto& g = out.grads[k];
        g.w.assign(dim, 0.0);
        std::vector<double> d_xhat(m);
        for (std::size_t j = 0; j < m; ++j) {
            const double d_pred = -residual[j] / static_cast<double>(m);  // dL/dpred_j
            const double d_y = d_pred * p.a * f.dact[j];
            g.a += d_pred * f.act[j];
            g.gamma += d_y * f.xhat[j];
            g.beta += d_y;
            d_xhat[j] = d_y * p.gamma;
        }
        // dL/dx through the full-dataset normalization.
        double mean_dx = 0.0, mean_dxx = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            mean_dx += d_xhat[j];
            mean_dxx += d_xhat[j] * f.xhat[j];
        }
        mean_dx /= static_cast<double>(m);
        mean_dxx /= static_cast<double>(m);
        for (std::size_t j = 0; j < m; ++j) {
            const double d_x = (d_xhat[j] - mean_dx - f.xhat[j] * mean_dxx) / f.denom;
            for (std::size_t d = 0; d < dim; ++d) g.w[d] += d_x * data.inputs(j, d);
        }
        for (std::size_t d = 0; d < dim; ++d)
            if (!p.mask[d]) g.w[d] = 0.0;
    }
    return out;
}

inline FlowEval neuron_loss_grads(const NeuronParams& p, const TeacherDataset& data, double eps) {
    return multi_neuron_loss_grads({p}, data, eps);
}

enum class FlowKind { gf, ham };

// Per neuron: multiplies the w-gradient by sqrt(1 - s) (the correction the
// main optimizer applies to sparse rows).
inline void scale_w_grads(std::vector<NeuronGrads>& grads, const std::vector<NeuronParams>& neurons) {
    for (std::size_t k = 0; k < grads.size(); ++k) {
        const double f = std::sqrt(1.0 - neurons[k].sparsity());
        for (double& v : grads[k].w) v *= f;
    }
}

// Euler step of the chosen flow. GF moves every parameter by -eta * grad; HAM
// multiplies the a and w updates elementwise by (1 + alpha*|.|) and leaves
// gamma and beta unmetriced.
inline void flow_step(std::vector<NeuronParams>& neurons, const std::vector<NeuronGrads>& grads, double eta,
                      FlowKind kind, double alpha) {
    if (grads.size() != neurons.size()) throw std::invalid_argument("flow_step: gradient count mismatch");
    for (std::size_t k = 0; k < neurons.size(); ++k) {
        auto& p = neurons[k];
        const auto& g = grads[k];
        const double metric_a = kind == FlowKind::ham ? 1.0 + alpha * std::abs(p.a) : 1.0;
        p.a -= eta * metric_a * g.a;
        for (std::size_t d = 0; d < p.w.size(); ++d) {
            const double metric_w = kind == FlowKind::ham ? 1.0 + alpha * std::abs(p.w[d]) : 1.0;
            p.w[d] -= eta * metric_w * g.w[d];
        }
        p.gamma -= eta * g.gamma;
        p.beta -= eta * g.beta;
        p.apply_mask();
    }
}

inline void gf_step(NeuronParams& p, const TeacherDataset& data, double eta, double eps) {
    const FlowEval ev = neuron_loss_grads(p, data, eps);
    std::vector<NeuronParams> v{p};
    flow_step(v, ev.grads, eta, FlowKind::gf, 0.0);
    p = v[0];
}

inline void ham_gf_step(NeuronParams& p, const TeacherDataset& data, double eta, double alpha, double eps) {
    const FlowEval ev = neuron_loss_grads(p, data, eps);
    std::vector<NeuronParams> v{p};
    flow_step(v, ev.grads, eta, FlowKind::ham, alpha);
    p = v[0];
}

// Conserved quantity of plain gradient flow (balance of outer weight against
// the normalization parameters).
inline double gf_invariant(double a, double gamma, double beta) { return a * a - gamma * gamma - beta * beta; }

// Antiderivative of p/(1 + alpha*|p|) from 0 to x.
inline double ham_integral(double x, double alpha) {
    if (alpha == 0.0) return 0.5 * x * x;
    const double ax = alpha * std::abs(x);
    return (ax - std::log1p(ax)) / (alpha * alpha);
}

// Conserved quantity of the HAM flow.
inline double ham_invariant(double a, double gamma, double beta, double alpha) {
    if (alpha == 0.0)
        throw std::invalid_argument("ham_invariant: alpha must be nonzero (use gf_invariant/2 instead)");
    return ham_integral(a, alpha) - 0.5 * (gamma * gamma + beta * beta);
}

// A sign flip of a is reachable iff the invariant admits a = 0 with nonzero
// normalization parameters: gamma0^2 + beta0^2 > 2 * integral(a0).
inline bool sign_flip_feasible(double a0, double gamma0, double beta0, double alpha) {
    return gamma0 * gamma0 + beta0 * beta0 > 2.0 * ham_integral(a0, alpha);
}

// ---------------------------------------------------------------------------
// Student/teacher setup and experiment driver.
// ---------------------------------------------------------------------------
struct TeacherStudent {
    NeuronParams teacher;
    std::vector<NeuronParams> students;
    TeacherDataset data;
};

// The teacher has `redundant` trailing input features with zero weight; the
// one-neuron student masks exactly those features. The multi-neuron variant
// adds a second student supported only on the redundant features.
inline TeacherStudent make_teacher_student(std::size_t dim, std::size_t m, std::size_t redundant,
                                           bool opposite_sign, Rng& rng, double eps, bool multi_neuron = false) {
    if (redundant >= dim) throw std::invalid_argument("make_teacher_student: redundant must be < dim");
    TeacherStudent ts;
    const std::size_t informative = dim - redundant;

    ts.teacher.w.assign(dim, 0.0);
    ts.teacher.mask.assign(dim, 0);
    for (std::size_t d = 0; d < informative; ++d) {
        ts.teacher.w[d] = rng.next_gaussian();
        ts.teacher.mask[d] = 1;
    }
    ts.teacher.a = 1.0;
    ts.teacher.gamma = 1.0;
    ts.teacher.beta = 0.0;

    ts.data.inputs = gaussian(rng, m, dim, 0.0, 1.0);
    ts.data.targets = flow_predict({ts.teacher}, ts.data.inputs, eps);

    NeuronParams sparse;
    sparse.w.assign(dim, 0.0);
    sparse.mask.assign(dim, 0);
    for (std::size_t d = 0; d < informative; ++d) {
        sparse.w[d] = rng.next_gaussian();
        sparse.mask[d] = 1;
    }
    sparse.a = opposite_sign ? -ts.teacher.a : ts.teacher.a;
    sparse.gamma = 1.0;
    sparse.beta = 0.0;
    ts.students.push_back(std::move(sparse));

    if (multi_neuron) {
        NeuronParams dense;  // supported on the redundant features only
        dense.w.assign(dim, 0.0);
        dense.mask.assign(dim, 0);
        for (std::size_t d = informative; d < dim; ++d) {
            dense.w[d] = rng.next_gaussian();
            dense.mask[d] = 1;
        }
        dense.a = opposite_sign ? -ts.teacher.a : ts.teacher.a;
        dense.gamma = 1.0;
        dense.beta = 0.0;
        ts.students.push_back(std::move(dense));
    }
    return ts;
}

struct FlowExperimentConfig {
    FlowKind kind = FlowKind::gf;
    bool multi_neuron = false;
    std::size_t dim = 10;
    std::size_t samples = 200;
    std::size_t redundant = 8;
    bool opposite_sign = true;
    double eta = 0.01;
    double alpha = 4.0;
    double eps = 1e-8;
    long long steps = 10000;
    bool scaling = false;  // per-neuron sqrt(1-s) scaling of the w gradient
    std::uint64_t seed = 1;
    long long record_every = 1;
};

struct FlowRecord {
    long long step = 0;
    double loss = 0.0;
    std::vector<double> a, gamma, beta;
    std::vector<double> gf_inv, ham_inv;
};

struct FlowTrajectory {
    FlowExperimentConfig config;
    std::vector<FlowRecord> records;
    std::size_t relu_kink_events = 0;
    double teacher_a = 0.0;

    bool sign_flipped(std::size_t neuron = 0) const {
        if (records.empty()) return false;
        const double first = records.front().a[neuron];
        const double last = records.back().a[neuron];
        return first * last < 0.0;
    }

    bool sign_changed_anywhere(std::size_t neuron = 0) const {
        for (std::size_t i = 1; i < records.size(); ++i)
            if (records[i].a[neuron] * records.front().a[neuron] < 0.0) return true;
        return false;
    }

    double final_loss() const { return records.empty() ? 0.0 : records.back().loss; }
};

inline FlowTrajectory run_flow_experiment(const FlowExperimentConfig& cfg) {
    Rng rng(cfg.seed);
    TeacherStudent ts =
        make_teacher_student(cfg.dim, cfg.samples, cfg.redundant, cfg.opposite_sign, rng, cfg.eps,
                             cfg.multi_neuron);
    FlowTrajectory traj;
    traj.config = cfg;
    traj.teacher_a = ts.teacher.a;

    auto record = [&](long long step, double loss) {
        FlowRecord r;
        r.step = step;
        r.loss = loss;
        for (const auto& p : ts.students) {
            r.a.push_back(p.a);
            r.gamma.push_back(p.gamma);
            r.beta.push_back(p.beta);
            r.gf_inv.push_back(gf_invariant(p.a, p.gamma, p.beta));
            r.ham_inv.push_back(cfg.alpha == 0.0 ? 0.0 : ham_invariant(p.a, p.gamma, p.beta, cfg.alpha));
        }
        traj.records.push_back(std::move(r));
    };

    for (long long step = 0; step < cfg.steps; ++step) {
        FlowEval ev = multi_neuron_loss_grads(ts.students, ts.data, cfg.eps);
        traj.relu_kink_events += ev.relu_kinks;
        if (step % cfg.record_every == 0) record(step, ev.loss);
        if (cfg.scaling) scale_w_grads(ev.grads, ts.students);
        flow_step(ts.students, ev.grads, cfg.eta, cfg.kind, cfg.alpha);
    }
    const FlowEval last = multi_neuron_loss_grads(ts.students, ts.data, cfg.eps);
    record(cfg.steps, last.loss);
    return traj;
}

}  // namespace sparselab
