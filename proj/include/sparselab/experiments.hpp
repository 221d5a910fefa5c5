#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sparselab/config.hpp"
#include "sparselab/csv.hpp"
#include "sparselab/svg.hpp"
#include "sparselab/train.hpp"
#include "sparselab/flows.hpp"

namespace sparselab {

// ---------------------------------------------------------------------------
// Gradient-skew measurement: dense and sparse twins share one initialization;
// a random mask is applied to the first layer of the sparse twin; first-layer
// kernel gradients are accumulated over fixed batches at initialization.
// ---------------------------------------------------------------------------
struct GradSkewRow {
    double s = 0.0;
    double ratio_bn = 0.0;
    double ratio_no_bn = 0.0;
    double theory = 0.0;  // (1-s)^(-1/2)
    double ratio_bn_corrected = 0.0;
};

struct GradSkewNeuronRow {
    double s = 0.0;
    std::size_t neuron = 0;
    double s_i = 0.0;
    double mean_abs_sparse = 0.0;
    double mean_abs_dense = 0.0;
    double ratio = 0.0;
};

struct GradSkewResult {
    std::vector<GradSkewRow> rows;
    std::vector<GradSkewNeuronRow> neuron_rows;
};

namespace detail {

struct TwoLayerModel {
    Mlp with_norm;
    Mlp without_norm;
};

// Both variants share the same initial weights.
inline TwoLayerModel make_skew_models(const Matrix& w1, const Matrix& w2, const Mask& mask1, bool layer_norm,
                                      double eps, double momentum) {
    TwoLayerModel m;
    const std::size_t hidden = w1.rows;
    m.with_norm.add_linear(SparseLinear(w1, mask1));
    if (layer_norm)
        m.with_norm.add_layernorm(LayerNorm(hidden, eps));
    else
        m.with_norm.add_batchnorm(BatchNorm(hidden, eps, momentum));
    m.with_norm.add_relu();
    m.with_norm.add_linear(SparseLinear(w2, Mask::dense(w2.rows, w2.cols)));

    m.without_norm.add_linear(SparseLinear(w1, mask1));
    m.without_norm.add_relu();
    m.without_norm.add_linear(SparseLinear(w2, Mask::dense(w2.rows, w2.cols)));
    return m;
}

inline void accumulate_abs(const Matrix& g, Matrix& acc) {
    for (std::size_t i = 0; i < g.size(); ++i) acc.data[i] += std::abs(g.data[i]);
}

}  // namespace detail

// Core measurement shared by the grad-skew and ln-check experiments. For each
// sparsity either a random mask (batch-norm case) or a uniform fan-in mask
// (layer-norm case) is applied.
inline GradSkewResult measure_gradient_skew(const ExperimentConfig& cfg, bool layer_norm_variant = false) {
    if (cfg.model_dims.size() != 3)
        throw ConfigError("grad-skew: model_dims must be input,hidden,output");
    const std::size_t in = cfg.model_dims[0];
    const std::size_t hidden = cfg.model_dims[1];
    const std::size_t out = cfg.model_dims[2];

    Rng init_rng(Rng::derive_seed(cfg.seed, seed_tag::init));
    Rng mask_rng(Rng::derive_seed(cfg.seed, seed_tag::mask));
    Rng data_rng(Rng::derive_seed(cfg.seed, seed_tag::data));

    // Inputs: Gaussian features with uniform labels unless IDX data is
    // available. A missing IDX dataset falls back with a warning.
    std::optional<Dataset> fixed;
    if (cfg.dataset == "idx-files") {
        try {
            IdxDataset idx = load_idx(cfg.images_path, cfg.labels_path);
            Dataset d;
            d.inputs = std::move(idx.images);
            d.labels = std::move(idx.labels);
            fixed = std::move(d);
        } catch (const std::exception& e) {
            std::cerr << "warning: idx dataset unavailable (" << e.what()
                      << "); falling back to synthetic-gaussian\n";
        }
    }

    const double kaiming = std::sqrt(2.0 / static_cast<double>(in));
    const Matrix w1 = gaussian(init_rng, hidden, in, 0.0, kaiming);
    const Matrix w2 = gaussian(init_rng, out, hidden, 0.0, std::sqrt(2.0 / static_cast<double>(hidden)));

    struct PerS {
        Mask mask;
        detail::TwoLayerModel sparse;
        Matrix acc_bn, acc_nobn, acc_bn_corr;
        Preconditioner prec;
    };
    std::vector<PerS> per_s;
    for (double s : cfg.s_values) {
        PerS p;
        if (layer_norm_variant) {
            const std::size_t fan = static_cast<std::size_t>(std::llround((1.0 - s) * static_cast<double>(in)));
            if (fan == 0) throw ConfigError("ln-check: sparsity too high for the input width");
            p.mask = uniform_fanin_mask(hidden, in, fan, mask_rng);
        } else {
            p.mask = s == 0.0 ? Mask::dense(hidden, in) : random_mask(hidden, in, 1.0 - s, mask_rng);
        }
        p.sparse = detail::make_skew_models(w1, w2, p.mask, layer_norm_variant, cfg.bn_eps, cfg.bn_momentum);
        p.acc_bn = Matrix(hidden, in);
        p.acc_nobn = Matrix(hidden, in);
        p.acc_bn_corr = Matrix(hidden, in);
        p.prec = build_preconditioner(p.mask);
        per_s.push_back(std::move(p));
    }

    if (layer_norm_variant)
        for (const auto& p : per_s) require_uniform_fanin(p.mask);

    detail::TwoLayerModel dense = detail::make_skew_models(w1, w2, Mask::dense(hidden, in), layer_norm_variant,
                                                           cfg.bn_eps, cfg.bn_momentum);
    Matrix dense_acc_bn(hidden, in), dense_acc_nobn(hidden, in);

    MlpGrads grads;
    for (long long b = 0; b < cfg.n_batches; ++b) {
        Matrix x;
        std::vector<int> labels(cfg.batch_size);
        if (fixed) {
            std::vector<std::size_t> order(cfg.batch_size);
            for (auto& o : order)
                o = static_cast<std::size_t>(data_rng.next_below(fixed->size()));
            x = Matrix(cfg.batch_size, fixed->inputs.cols);
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                for (std::size_t j = 0; j < fixed->inputs.cols; ++j) x(i, j) = fixed->inputs(order[i], j);
                labels[i] = fixed->labels[order[i]];
            }
        } else {
            x = gaussian(data_rng, cfg.batch_size, in, 0.0, 1.0);
            for (auto& l : labels) l = static_cast<int>(data_rng.next_below(out));
        }
        const BatchTarget target{nullptr, &labels};

        mlp_forward_backward(dense.with_norm, x, LossKind::softmax_cross_entropy, target, grads);
        detail::accumulate_abs(grads.d_weights[0], dense_acc_bn);
        mlp_forward_backward(dense.without_norm, x, LossKind::softmax_cross_entropy, target, grads);
        detail::accumulate_abs(grads.d_weights[0], dense_acc_nobn);

        for (auto& p : per_s) {
            mlp_forward_backward(p.sparse.with_norm, x, LossKind::softmax_cross_entropy, target, grads);
            detail::accumulate_abs(grads.d_weights[0], p.acc_bn);
            detail::accumulate_abs(apply_preconditioner(p.prec, grads.d_weights[0]), p.acc_bn_corr);
            mlp_forward_backward(p.sparse.without_norm, x, LossKind::softmax_cross_entropy, target, grads);
            detail::accumulate_abs(grads.d_weights[0], p.acc_nobn);
        }
    }

    GradSkewResult result;
    for (std::size_t si = 0; si < per_s.size(); ++si) {
        const auto& p = per_s[si];
        const double s = cfg.s_values[si];
        double sp_bn = 0.0, sp_nobn = 0.0, sp_corr = 0.0, dn_bn = 0.0, dn_nobn = 0.0;
        std::size_t active = 0;
        for (std::size_t i = 0; i < p.mask.size(); ++i) {
            if (!p.mask.on[i]) continue;
            ++active;
            sp_bn += p.acc_bn.data[i];
            sp_nobn += p.acc_nobn.data[i];
            sp_corr += p.acc_bn_corr.data[i];
            dn_bn += dense_acc_bn.data[i];
            dn_nobn += dense_acc_nobn.data[i];
        }
        GradSkewRow row;
        row.s = s;
        row.ratio_bn = sp_bn / dn_bn;
        row.ratio_no_bn = sp_nobn / dn_nobn;
        row.ratio_bn_corrected = sp_corr / dn_bn;
        row.theory = 1.0 / std::sqrt(1.0 - s);
        result.rows.push_back(row);

        const auto s_i = neuron_sparsities(p.mask);
        for (std::size_t r = 0; r < p.mask.rows; ++r) {
            GradSkewNeuronRow nr;
            nr.s = s;
            nr.neuron = r;
            nr.s_i = s_i[r];
            double nsp = 0.0, ndn = 0.0;
            std::size_t n_active = 0;
            for (std::size_t j = 0; j < p.mask.cols; ++j) {
                if (!p.mask(r, j)) continue;
                ++n_active;
                nsp += p.acc_bn(r, j);
                ndn += dense_acc_bn(r, j);
            }
            if (n_active == 0) continue;
            nr.mean_abs_sparse = nsp / static_cast<double>(n_active * cfg.n_batches);
            nr.mean_abs_dense = ndn / static_cast<double>(n_active * cfg.n_batches);
            nr.ratio = ndn > 0.0 ? nsp / ndn : 0.0;
            result.neuron_rows.push_back(nr);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Experiment entry points: run, then emit CSV artifacts under cfg.out_dir.
// ---------------------------------------------------------------------------
namespace detail {

inline void ensure_out_dir(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
}

inline std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
    return (std::filesystem::path(cfg.out_dir) / name).string();
}

}  // namespace detail

inline void run_grad_skew(const ExperimentConfig& cfg) {
    detail::ensure_out_dir(cfg);
    const GradSkewResult res = measure_gradient_skew(cfg, false);
    CsvWriter csv(detail::out_path(cfg, "grad_skew.csv"));
    csv.header({"s", "ratio_bn", "ratio_no_bn", "theory", "ratio_bn_corrected"});
    for (const auto& r : res.rows)
        csv.start_row().add(r.s).add(r.ratio_bn).add(r.ratio_no_bn).add(r.theory).add(r.ratio_bn_corrected).done();
    CsvWriter neurons(detail::out_path(cfg, "grad_skew_neurons.csv"));
    neurons.header({"s", "neuron", "s_i", "mean_abs_sparse", "mean_abs_dense", "ratio"});
    for (const auto& r : res.neuron_rows)
        neurons.start_row().add(r.s).add(r.neuron).add(r.s_i).add(r.mean_abs_sparse).add(r.mean_abs_dense)
            .add(r.ratio).done();
    if (cfg.emit_svg) {
        std::vector<double> xs;
        SvgSeries bn{"with_bn", {}}, nobn{"without_bn", {}}, theory{"theory", {}}, corr{"corrected", {}};
        for (const auto& r : res.rows) {
            xs.push_back(r.s);
            bn.y.push_back(r.ratio_bn);
            nobn.y.push_back(r.ratio_no_bn);
            theory.y.push_back(r.theory);
            corr.y.push_back(r.ratio_bn_corrected);
        }
        write_svg_chart(detail::out_path(cfg, "grad_skew.svg"), "active-entry gradient ratio vs sparsity", xs,
                        {bn, nobn, theory, corr});
    }
}

inline void run_ln_check(const ExperimentConfig& cfg) {
    detail::ensure_out_dir(cfg);
    const GradSkewResult res = measure_gradient_skew(cfg, true);
    CsvWriter csv(detail::out_path(cfg, "ln_check.csv"));
    csv.header({"s", "ratio", "theory"});
    for (const auto& r : res.rows) csv.start_row().add(r.s).add(r.ratio_bn).add(r.theory).done();
    if (cfg.emit_svg) {
        std::vector<double> xs;
        SvgSeries ratio{"with_ln", {}}, theory{"theory", {}};
        for (const auto& r : res.rows) {
            xs.push_back(r.s);
            ratio.y.push_back(r.ratio_bn);
            theory.y.push_back(r.theory);
        }
        write_svg_chart(detail::out_path(cfg, "ln_check.svg"), "layer-norm gradient ratio vs sparsity", xs,
                        {ratio, theory});
    }
}

inline void write_train_csv(const ExperimentConfig& cfg, const TrainResult& result) {
    CsvWriter csv(detail::out_path(cfg, "train_log.csv"));
    std::vector<std::string> cols = {"epoch", "train_loss", "train_acc", "test_acc", "lr", "r_m"};
    const std::size_t n_layers = result.rows.empty() ? 0 : result.rows.front().mean_s.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        cols.push_back("layer" + std::to_string(l) + "_mean_s");
        cols.push_back("layer" + std::to_string(l) + "_min_s");
        cols.push_back("layer" + std::to_string(l) + "_max_s");
    }
    csv.header(cols);
    for (const auto& r : result.rows) {
        auto row = csv.start_row();
        row.add(r.epoch).add(r.train_loss).add(r.train_acc).add(r.test_acc).add(r.lr).add(r.r_m);
        for (std::size_t l = 0; l < n_layers; ++l) row.add(r.mean_s[l]).add(r.min_s[l]).add(r.max_s[l]);
        row.done();
    }

    CsvWriter events(detail::out_path(cfg, "mask_events.csv"));
    events.header({"step", "layer", "dropped", "grown", "min_s", "max_s", "mean_s"});
    for (const auto& e : result.events)
        events.start_row().add(e.step).add(e.layer).add(e.dropped).add(e.grown).add(e.min_s()).add(e.max_s())
            .add(e.mean_s()).done();
}

inline TrainResult run_dst_train(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    detail::ensure_out_dir(cfg);
    TrainResult result = run_training(cfg, log);
    write_train_csv(cfg, result);
    if (cfg.emit_svg) {
        std::vector<double> xs;
        SvgSeries loss{"train_loss", {}}, acc{"test_acc", {}}, rm{"r_m", {}};
        for (const auto& r : result.rows) {
            xs.push_back(static_cast<double>(r.epoch));
            loss.y.push_back(r.train_loss);
            acc.y.push_back(r.test_acc);
            rm.y.push_back(r.r_m);
        }
        write_svg_chart(detail::out_path(cfg, "train_log.svg"), "training trajectory", xs, {loss, acc, rm});
    }
    return result;
}

inline void write_flow_csv(const std::string& path, const FlowTrajectory& traj) {
    CsvWriter csv(path);
    std::vector<std::string> cols = {"step", "loss"};
    const std::size_t n = traj.records.empty() ? 0 : traj.records.front().a.size();
    for (std::size_t k = 0; k < n; ++k) {
        const std::string suffix = n == 1 ? "" : "_" + std::to_string(k);
        cols.push_back("a" + suffix);
        cols.push_back("gamma" + suffix);
        cols.push_back("beta" + suffix);
        cols.push_back("gf_invariant" + suffix);
        cols.push_back("ham_invariant" + suffix);
    }
    csv.header(cols);
    for (const auto& r : traj.records) {
        auto row = csv.start_row();
        row.add(r.step).add(r.loss);
        for (std::size_t k = 0; k < n; ++k)
            row.add(r.a[k]).add(r.gamma[k]).add(r.beta[k]).add(r.gf_inv[k]).add(r.ham_inv[k]);
        row.done();
    }
}

inline void run_ham_sim(const ExperimentConfig& cfg) {
    detail::ensure_out_dir(cfg);
    std::vector<FlowKind> kinds;
    if (cfg.flow == "gf" || cfg.flow == "both") kinds.push_back(FlowKind::gf);
    if (cfg.flow == "ham" || cfg.flow == "both") kinds.push_back(FlowKind::ham);
    std::vector<bool> scalings;
    if (cfg.flow_scaling == "off" || cfg.flow_scaling == "both") scalings.push_back(false);
    if (cfg.flow_scaling == "on" || cfg.flow_scaling == "both") scalings.push_back(true);

    CsvWriter summary(detail::out_path(cfg, "ham_sim_summary.csv"));
    summary.header({"flow", "scaling", "variant", "final_loss", "sign_flip", "final_a0", "relu_kink_events"});
    for (FlowKind kind : kinds) {
        for (bool scaling : scalings) {
            FlowExperimentConfig fc;
            fc.kind = kind;
            fc.multi_neuron = cfg.flow_variant == "multi-neuron";
            fc.dim = cfg.flow_dim;
            fc.samples = cfg.flow_samples;
            fc.redundant = cfg.flow_redundant;
            fc.opposite_sign = cfg.opposite_sign;
            fc.eta = cfg.eta;
            fc.alpha = cfg.alpha;
            fc.eps = cfg.flow_eps;
            fc.steps = cfg.flow_steps;
            fc.scaling = scaling;
            fc.seed = cfg.seed;
            fc.record_every = cfg.record_every;
            const FlowTrajectory traj = run_flow_experiment(fc);
            const std::string kind_name = kind == FlowKind::gf ? "gf" : "ham";
            const std::string scale_name = scaling ? "on" : "off";
            write_flow_csv(detail::out_path(cfg, "flow_" + kind_name + "_scale_" + scale_name + ".csv"), traj);
            summary.start_row()
                .add(kind_name)
                .add(scale_name)
                .add(cfg.flow_variant)
                .add(traj.final_loss())
                .add(std::string(traj.sign_flipped(0) ? "true" : "false"))
                .add(traj.records.back().a[0])
                .add(traj.relu_kink_events)
                .done();
            if (cfg.emit_svg) {
                std::vector<double> xs;
                SvgSeries loss{"loss", {}}, a0{"a", {}};
                for (const auto& r : traj.records) {
                    xs.push_back(static_cast<double>(r.step));
                    loss.y.push_back(r.loss);
                    a0.y.push_back(r.a[0]);
                }
                write_svg_chart(detail::out_path(cfg, "flow_" + kind_name + "_scale_" + scale_name + ".svg"),
                                "flow trajectory (" + kind_name + ", scaling " + scale_name + ")", xs,
                                {loss, a0});
            }
        }
    }
}

struct ItopReport {
    TrainResult original;
    TrainResult corrected;
    long long first_divergence_step = -1;
};

// Paired RigL runs differing only in the gradient source used for regrowth;
// reports the mask-exploration rates and where the trajectories split.
inline ItopReport run_itop_report(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    detail::ensure_out_dir(cfg);
    ExperimentConfig a = cfg;
    a.regrow_source = "original";
    ExperimentConfig b = cfg;
    b.regrow_source = "corrected";
    ItopReport report;
    report.original = run_training(a, log);
    report.corrected = run_training(b, log);

    const auto& fa = report.original.mask_fingerprints;
    const auto& fb = report.corrected.mask_fingerprints;
    for (std::size_t i = 0; i < fa.size() && i < fb.size(); ++i) {
        if (fa[i].second != fb[i].second) {
            report.first_divergence_step = fa[i].first;
            break;
        }
    }

    CsvWriter csv(detail::out_path(cfg, "itop_report.csv"));
    csv.header({"epoch", "r_m_original", "r_m_corrected"});
    for (std::size_t e = 0; e < report.original.rows.size(); ++e)
        csv.start_row()
            .add(report.original.rows[e].epoch)
            .add(report.original.rows[e].r_m)
            .add(report.corrected.rows[e].r_m)
            .done();
    CsvWriter div(detail::out_path(cfg, "itop_divergence.csv"));
    div.header({"first_divergence_step", "r_m_final_original", "r_m_final_corrected"});
    div.start_row()
        .add(report.first_divergence_step)
        .add(report.original.final_r_m)
        .add(report.corrected.final_r_m)
        .done();
    return report;
}

}  // namespace sparselab
