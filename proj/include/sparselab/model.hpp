#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "sparselab/layers.hpp"
#include "sparselab/loss.hpp"
#include "sparselab/matrix.hpp"

namespace sparselab {

enum class LayerKind { sparse_linear, batchnorm, layernorm, relu };

// An ordered stack of layers. Parameterized layers live in per-kind pools;
// `order` lists the stack with (kind, pool index) pairs, which also serve as
// the parameter identity keys gradients are reported under.
struct Mlp {
    struct Slot {
        LayerKind kind;
        std::size_t index;  // into the pool for that kind; unused for relu
    };

    std::vector<Slot> order;
    std::vector<SparseLinear> linears;
    std::vector<BatchNorm> batchnorms;
    std::vector<LayerNorm> layernorms;

    void add_linear(SparseLinear layer) {
        order.push_back({LayerKind::sparse_linear, linears.size()});
        linears.push_back(std::move(layer));
    }
    void add_batchnorm(BatchNorm bn) {
        order.push_back({LayerKind::batchnorm, batchnorms.size()});
        batchnorms.push_back(std::move(bn));
    }
    void add_layernorm(LayerNorm ln) {
        order.push_back({LayerKind::layernorm, layernorms.size()});
        layernorms.push_back(std::move(ln));
    }
    void add_relu() { order.push_back({LayerKind::relu, 0}); }

    void set_mode(NormMode mode) {
        for (auto& bn : batchnorms) bn.mode = mode;
    }
};

struct VecGrads {
    std::vector<double> d_gamma;
    std::vector<double> d_beta;
};

// Gradients keyed by pool index, congruent with the Mlp that produced them.
struct MlpGrads {
    std::vector<Matrix> d_weights;                  // per linear, masked
    std::vector<Matrix> d_weights_dense;            // per linear, only when requested
    std::vector<std::vector<double>> d_bias;        // per linear (empty vector if no bias)
    std::vector<VecGrads> bn_grads;                 // per batchnorm
    std::vector<VecGrads> ln_grads;                 // per layernorm
    bool has_dense = false;
};

enum class LossKind { mse, softmax_cross_entropy };

// Either a target matrix (mse) or integer labels (cross-entropy).
struct BatchTarget {
    const Matrix* targets = nullptr;
    const std::vector<int>* labels = nullptr;
};

inline Matrix mlp_forward(Mlp& model, const Matrix& x) {
    Matrix h = x;
    for (const auto& slot : model.order) {
        switch (slot.kind) {
            case LayerKind::sparse_linear:
                h = linear_forward(model.linears[slot.index], h);
                break;
            case LayerKind::batchnorm:
                h = batchnorm_forward(model.batchnorms[slot.index], h).first;
                break;
            case LayerKind::layernorm:
                h = layernorm_forward(model.layernorms[slot.index], h).first;
                break;
            case LayerKind::relu:
                h = relu_forward(h);
                break;
        }
    }
    return h;
}

// Full forward/backward pass: returns the loss and fills gradients for every
// parameter. Set want_dense_grads to additionally record the unmasked weight
// gradients of each linear layer (used for gradient-based regrowth).
inline double mlp_forward_backward(Mlp& model, const Matrix& x, LossKind loss_kind, const BatchTarget& target,
                                   MlpGrads& grads, bool want_dense_grads = false) {
    const std::size_t n_layers = model.order.size();
    grads.d_weights.assign(model.linears.size(), Matrix());
    grads.d_weights_dense.assign(want_dense_grads ? model.linears.size() : 0, Matrix());
    grads.d_bias.assign(model.linears.size(), {});
    grads.bn_grads.assign(model.batchnorms.size(), {});
    grads.ln_grads.assign(model.layernorms.size(), {});
    grads.has_dense = want_dense_grads;

    // Forward, taping inputs and normalization caches.
    std::vector<Matrix> inputs(n_layers);
    std::vector<BnCache> bn_caches(model.batchnorms.size());
    std::vector<LnCache> ln_caches(model.layernorms.size());
    Matrix h = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& slot = model.order[l];
        inputs[l] = h;
        switch (slot.kind) {
            case LayerKind::sparse_linear:
                h = linear_forward(model.linears[slot.index], h);
                break;
            case LayerKind::batchnorm: {
                auto [y, cache] = batchnorm_forward(model.batchnorms[slot.index], h);
                bn_caches[slot.index] = std::move(cache);
                h = std::move(y);
                break;
            }
            case LayerKind::layernorm: {
                auto [y, cache] = layernorm_forward(model.layernorms[slot.index], h);
                ln_caches[slot.index] = std::move(cache);
                h = std::move(y);
                break;
            }
            case LayerKind::relu:
                h = relu_forward(h);
                break;
        }
    }

    LossResult loss;
    if (loss_kind == LossKind::mse) {
        if (!target.targets) throw std::invalid_argument("mlp_forward_backward: mse needs a target matrix");
        loss = mse_loss(h, *target.targets);
    } else {
        if (!target.labels) throw std::invalid_argument("mlp_forward_backward: cross-entropy needs labels");
        loss = softmax_cross_entropy(h, *target.labels);
    }

    // Backward in reverse layer order.
    Matrix d = std::move(loss.grad);
    for (std::size_t l = n_layers; l-- > 0;) {
        const auto& slot = model.order[l];
        switch (slot.kind) {
            case LayerKind::sparse_linear: {
                Matrix* dense = want_dense_grads ? &grads.d_weights_dense[slot.index] : nullptr;
                LinearGrads lg = linear_backward(model.linears[slot.index], inputs[l], d, dense);
                grads.d_weights[slot.index] = std::move(lg.d_weights);
                grads.d_bias[slot.index] = std::move(lg.d_bias);
                d = std::move(lg.d_input);
                break;
            }
            case LayerKind::batchnorm: {
                NormGrads ng = batchnorm_backward(d, bn_caches[slot.index], model.batchnorms[slot.index].gamma);
                grads.bn_grads[slot.index] = {std::move(ng.d_gamma), std::move(ng.d_beta)};
                d = std::move(ng.d_input);
                break;
            }
            case LayerKind::layernorm: {
                NormGrads ng = layernorm_backward(d, ln_caches[slot.index], model.layernorms[slot.index].gamma);
                grads.ln_grads[slot.index] = {std::move(ng.d_gamma), std::move(ng.d_beta)};
                d = std::move(ng.d_input);
                break;
            }
            case LayerKind::relu:
                d = relu_backward(d, inputs[l]);
                break;
        }
    }
    return loss.value;
}

inline double accuracy(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows) throw std::invalid_argument("accuracy: one label per row required");
    std::size_t hits = 0;
    for (std::size_t b = 0; b < logits.rows; ++b) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols; ++j)
            if (logits(b, j) > logits(b, best)) best = j;
        if (static_cast<int>(best) == labels[b]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows);
}

}  // namespace sparselab
