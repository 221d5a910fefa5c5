#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/config.hpp"
#include "sparselab/datasets.hpp"
#include "sparselab/dst.hpp"
#include "sparselab/idx.hpp"
#include "sparselab/lr_schedule.hpp"
#include "sparselab/model.hpp"
#include "sparselab/optim.hpp"
#include "sparselab/preconditioner.hpp"

namespace sparselab {

// Seed tags for decoupled random streams.
namespace seed_tag {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t mask = 3;
inline constexpr std::uint64_t dst = 4;
inline constexpr std::uint64_t shuffle = 5;
}  // namespace seed_tag

inline DstMethod parse_dst_method(const std::string& s) {
    if (s == "set") return DstMethod::set;
    if (s == "rigl") return DstMethod::rigl;
    if (s == "static") return DstMethod::static_mask;
    throw ConfigError("config: unknown dst method '" + s + "'");
}

inline DstConfig dst_config_from(const ExperimentConfig& cfg) {
    DstConfig d;
    d.method = parse_dst_method(cfg.dst_method);
    d.drop_fraction = cfg.drop_fraction;
    d.update_every = cfg.update_every;
    d.stop_after = cfg.stop_after;
    d.regrow_source = cfg.regrow_source == "corrected" ? RegrowSource::corrected : RegrowSource::original;
    d.drop_decay = cfg.drop_fraction_decay == "cosine" ? DropDecay::cosine : DropDecay::constant;
    return d;
}

inline LrSchedule schedule_from(const ExperimentConfig& cfg) {
    LrSchedule s = cfg.schedule == "imagenet-style" ? LrSchedule::imagenet(cfg.eta_base, cfg.warmup_epochs,
                                                                           cfg.epochs)
                                                    : LrSchedule::cifar(cfg.eta_base, cfg.warmup_epochs,
                                                                        cfg.epochs);
    s.eta_init = cfg.schedule == "imagenet-style" ? cfg.eta_init : 0.0;
    s.eta_end = cfg.eta_end;
    s.batch_scale_ref = cfg.batch_scale_ref;
    return s;
}

inline OptimizerConfig optimizer_config_from(const ExperimentConfig& cfg) {
    OptimizerConfig oc;
    oc.sgd.momentum = cfg.momentum;
    oc.sgd.weight_decay = cfg.weight_decay;
    oc.use_sparseopt = cfg.optimizer == "sparseopt" || cfg.optimizer == "sparseopt+ham";
    oc.use_ham = cfg.optimizer == "sgd+ham" || cfg.optimizer == "sparseopt+ham";
    oc.ham_alpha = cfg.ham_alpha;
    return oc;
}

// Builds the MLP stack: linear -> [norm] -> relu per hidden layer, plain
// linear readout. Masks follow the configured per-layer density allocation;
// weights are Gaussian with the configured per-neuron std, bias-free.
inline Mlp build_mlp(const ExperimentConfig& cfg, Rng& init_rng, Rng& mask_rng) {
    const auto& dims = cfg.model_dims;
    std::vector<std::pair<std::size_t, std::size_t>> layer_dims;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) layer_dims.push_back({dims[l], dims[l + 1]});

    std::vector<double> densities(layer_dims.size(), 1.0 - cfg.sparsity);
    if (cfg.sparsity_distribution == "erk") densities = erk_densities(layer_dims, cfg.sparsity);

    const InitScheme scheme =
        cfg.init_scheme == "sparse-aware" ? InitScheme::sparse_aware : InitScheme::dense_kaiming;

    Mlp model;
    for (std::size_t l = 0; l < layer_dims.size(); ++l) {
        const auto [in, out] = layer_dims[l];
        Mask mask = densities[l] >= 1.0 ? Mask::dense(out, in) : random_mask(out, in, densities[l], mask_rng);
        const std::vector<double> stds = sparse_init_scale(mask, scheme);
        Matrix w(out, in);
        for (std::size_t i = 0; i < out; ++i)
            for (std::size_t j = 0; j < in; ++j) w(i, j) = stds[i] * init_rng.next_gaussian();
        model.add_linear(SparseLinear(std::move(w), std::move(mask)));
        const bool hidden = l + 1 < layer_dims.size();
        if (hidden) {
            if (cfg.normalization == "batchnorm")
                model.add_batchnorm(BatchNorm(out, cfg.bn_eps, cfg.bn_momentum));
            else if (cfg.normalization == "layernorm")
                model.add_layernorm(LayerNorm(out, cfg.bn_eps));
            model.add_relu();
        }
    }
    return model;
}

inline std::vector<Preconditioner> build_preconditioners(const Mlp& model) {
    std::vector<Preconditioner> out;
    out.reserve(model.linears.size());
    for (const auto& lin : model.linears) out.push_back(build_preconditioner(lin.mask, lin.mask_version));
    return out;
}

struct EpochRow {
    long long epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
    double r_m = 0.0;
    std::vector<double> mean_s, min_s, max_s;  // per linear layer
    double wall_time_s = 0.0;                  // not serialized: outputs must be byte-stable
};

struct TrainResult {
    std::vector<EpochRow> rows;
    std::vector<MaskUpdateEvent> events;
    std::vector<std::pair<long long, std::uint64_t>> mask_fingerprints;  // (step, hash) at each update
    std::vector<std::size_t> initial_active_counts;
    std::vector<std::size_t> final_active_counts;
    double initial_density = 0.0;
    double final_r_m = 0.0;
};

namespace detail {

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t masks_fingerprint(const Mlp& model) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& lin : model.linears) h = fnv1a(lin.mask.on, h);
    return h;
}

}  // namespace detail

struct TrainData {
    Dataset train;
    Dataset test;
};

inline TrainData load_train_data(const ExperimentConfig& cfg) {
    TrainData td;
    Rng data_rng(Rng::derive_seed(cfg.seed, seed_tag::data));
    if (cfg.dataset == "idx-files") {
        IdxDataset idx = load_idx(cfg.images_path, cfg.labels_path);
        const std::size_t n = idx.images.rows;
        const std::size_t n_test = std::min(cfg.n_test, n / 5);
        const std::size_t n_train = std::min(cfg.n_train, n - n_test);
        td.train.inputs = Matrix(n_train, idx.images.cols);
        td.train.labels.assign(idx.labels.begin(), idx.labels.begin() + static_cast<std::ptrdiff_t>(n_train));
        for (std::size_t i = 0; i < n_train; ++i)
            for (std::size_t j = 0; j < idx.images.cols; ++j) td.train.inputs(i, j) = idx.images(i, j);
        td.test.inputs = Matrix(n_test, idx.images.cols);
        td.test.labels.assign(idx.labels.end() - static_cast<std::ptrdiff_t>(n_test), idx.labels.end());
        for (std::size_t i = 0; i < n_test; ++i)
            for (std::size_t j = 0; j < idx.images.cols; ++j)
                td.test.inputs(i, j) = idx.images(n - n_test + i, j);
    } else if (cfg.dataset == "synthetic-classification") {
        td.train = synth_classification(cfg.n_train, cfg.model_dims.front(), cfg.classes, cfg.class_std, data_rng);
        td.test = synth_classification(cfg.n_test, cfg.model_dims.front(), cfg.classes, cfg.class_std, data_rng);
    } else {
        td.train = synth_gaussian(cfg.n_train, cfg.model_dims.front(), cfg.model_dims.back(), data_rng);
        td.test = synth_gaussian(cfg.n_test, cfg.model_dims.front(), cfg.model_dims.back(), data_rng);
    }
    return td;
}

// Full training loop: forward, loss, backward, optional gradient
// renormalization, optimizer step, scheduled mask updates, ITOP tracking and
// per-epoch evaluation. Deterministic given the config.
inline TrainResult run_training(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    const TrainData data = load_train_data(cfg);
    Rng init_rng(Rng::derive_seed(cfg.seed, seed_tag::init));
    Rng mask_rng(Rng::derive_seed(cfg.seed, seed_tag::mask));
    Rng dst_rng(Rng::derive_seed(cfg.seed, seed_tag::dst));
    Rng shuffle_rng(Rng::derive_seed(cfg.seed, seed_tag::shuffle));

    Mlp model = build_mlp(cfg, init_rng, mask_rng);
    OptState state = OptState::for_model(model);
    std::vector<Preconditioner> precs = build_preconditioners(model);
    const OptimizerConfig opt_cfg = optimizer_config_from(cfg);
    const DstConfig dst_cfg = dst_config_from(cfg);
    const LrSchedule schedule = schedule_from(cfg);

    const std::size_t steps_per_epoch = data.train.size() / cfg.batch_size;
    if (steps_per_epoch == 0) throw ConfigError("config: batch_size exceeds the training set size");
    const long long total_steps = cfg.epochs * static_cast<long long>(steps_per_epoch);
    const long long stop_step = static_cast<long long>(cfg.stop_after * static_cast<double>(total_steps));
    const bool rigl = dst_cfg.method == DstMethod::rigl;

    TrainResult result;
    for (const auto& lin : model.linears) result.initial_active_counts.push_back(lin.mask.active_count());

    ItopTracker itop;
    {
        std::vector<const Mask*> masks;
        for (const auto& lin : model.linears) masks.push_back(&lin.mask);
        itop.init(masks);
    }
    result.initial_density = itop.rate();

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0u);

    long long global_step = 0;
    MlpGrads grads;
    for (long long epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto epoch_t0 = std::chrono::steady_clock::now();
        // Per-epoch reshuffle.
        for (std::size_t i = order.size(); i-- > 1;) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(i + 1));
            std::swap(order[i], order[j]);
        }
        model.set_mode(NormMode::train);
        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const double epoch_fraction =
                static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps_per_epoch);
            last_lr = lr_at(schedule, epoch_fraction, cfg.batch_size);

            std::vector<int> labels;
            const Matrix x = batch_of(data.train, order, s * cfg.batch_size, cfg.batch_size, labels);

            const bool update_step = dst_cfg.method != DstMethod::static_mask &&
                                     (global_step + 1) % dst_cfg.update_every == 0 &&
                                     (global_step + 1) <= stop_step;
            const double loss = mlp_forward_backward(model, x, LossKind::softmax_cross_entropy,
                                                     BatchTarget{nullptr, &labels}, grads,
                                                     update_step && rigl);
            if (!std::isfinite(loss))
                throw std::runtime_error("run_training: non-finite loss at step " + std::to_string(global_step));
            loss_sum += loss;

            if (cfg.renormalize_grads) grad_renormalize(grads);

            OptimizerConfig step_cfg = opt_cfg;
            step_cfg.sgd.eta = last_lr;
            optimizer_step(model, grads, &precs, state, step_cfg);
            ++global_step;

            if (update_step) {
                auto events = mask_update(model, grads, dst_cfg, global_step, stop_step, dst_rng, &state);
                if (!events.empty()) {
                    for (auto& e : events) result.events.push_back(std::move(e));
                    precs = build_preconditioners(model);
                    std::vector<const Mask*> masks;
                    for (const auto& lin : model.linears) masks.push_back(&lin.mask);
                    itop.update(masks);
                }
                result.mask_fingerprints.push_back({global_step, detail::masks_fingerprint(model)});
            }
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
        row.lr = last_lr;
        row.r_m = itop.rate();
        for (const auto& lin : model.linears) {
            const auto s_i = neuron_sparsities(lin.mask);
            row.mean_s.push_back(std::accumulate(s_i.begin(), s_i.end(), 0.0) / static_cast<double>(s_i.size()));
            row.min_s.push_back(*std::min_element(s_i.begin(), s_i.end()));
            row.max_s.push_back(*std::max_element(s_i.begin(), s_i.end()));
        }

        // Evaluation with running statistics.
        model.set_mode(NormMode::eval);
        {
            const Matrix train_logits = mlp_forward(model, data.train.inputs);
            row.train_acc = accuracy(train_logits, data.train.labels);
            const Matrix test_logits = mlp_forward(model, data.test.inputs);
            row.test_acc = accuracy(test_logits, data.test.labels);
        }
        model.set_mode(NormMode::train);

        row.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_t0).count();
        if (log)
            (*log) << "epoch " << epoch << " train_loss " << row.train_loss << " train_acc " << row.train_acc
                   << " test_acc " << row.test_acc << " lr " << row.lr << " R_m " << row.r_m << " ("
                   << row.wall_time_s << "s)\n";
        result.rows.push_back(std::move(row));
    }

    for (const auto& lin : model.linears) result.final_active_counts.push_back(lin.mask.active_count());
    result.final_r_m = itop.rate();
    return result;
}

}  // namespace sparselab
