#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparselab/mask.hpp"
#include "sparselab/matrix.hpp"

namespace sparselab {

// ---------------------------------------------------------------------------
// Masked linear layer. Weights are out_neurons x in_features; the mask has the
// same shape and masked weight entries are held at zero between updates.
// ---------------------------------------------------------------------------
struct SparseLinear {
    Matrix weights;            // out x in
    Mask mask;                 // out x in
    std::vector<double> bias;  // empty = no bias
    std::uint64_t mask_version = 0;

    SparseLinear() = default;
    SparseLinear(Matrix w, Mask m, std::vector<double> b = {})
        : weights(std::move(w)), mask(std::move(m)), bias(std::move(b)) {
        if (weights.rows != mask.rows || weights.cols != mask.cols)
            throw std::invalid_argument("SparseLinear: weights and mask shapes differ");
        if (!bias.empty() && bias.size() != weights.rows)
            throw std::invalid_argument("SparseLinear: bias size must equal out_neurons");
        apply_mask();
    }

    std::size_t in_features() const { return weights.cols; }
    std::size_t out_neurons() const { return weights.rows; }

    void apply_mask() {
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (!mask.on[i]) weights.data[i] = 0.0;
    }

    void set_mask(Mask m) {
        if (m.rows != mask.rows || m.cols != mask.cols)
            throw std::invalid_argument("SparseLinear::set_mask: shape mismatch");
        mask = std::move(m);
        ++mask_version;
        apply_mask();
    }

    Matrix effective_weights() const {
        Matrix eff = weights;
        for (std::size_t i = 0; i < eff.size(); ++i)
            if (!mask.on[i]) eff.data[i] = 0.0;
        return eff;
    }
};

// x[b,i] = sum over active j of w[i,j] * h[b,j] (+ bias_i)
inline Matrix linear_forward(const SparseLinear& layer, const Matrix& h) {
    if (h.cols != layer.in_features())
        throw std::invalid_argument("linear_forward: input has " + std::to_string(h.cols) +
                                    " features, layer expects " + std::to_string(layer.in_features()));
    const Matrix eff_t = layer.effective_weights().transposed();  // in x out
    Matrix out = matmul(h, eff_t);                                // m x out
    if (!layer.bias.empty())
        for (std::size_t b = 0; b < out.rows; ++b)
            for (std::size_t i = 0; i < out.cols; ++i) out(b, i) += layer.bias[i];
    return out;
}

struct LinearGrads {
    Matrix d_weights;            // masked: zero on inactive entries
    Matrix d_input;              // m x in
    std::vector<double> d_bias;  // empty if the layer has no bias
};

// Standard chain rule around the masked product. When dense_dw is non-null it
// receives the unmasked weight gradient (the mask lifted on this layer only),
// which is what gradient-based regrowth scores.
inline LinearGrads linear_backward(const SparseLinear& layer, const Matrix& h, const Matrix& d_out,
                                   Matrix* dense_dw = nullptr) {
    if (h.cols != layer.in_features() || d_out.cols != layer.out_neurons() || h.rows != d_out.rows)
        throw std::invalid_argument("linear_backward: shapes not congruent with forward");
    LinearGrads g;
    Matrix dw = matmul(d_out.transposed(), h);  // out x in
    if (dense_dw) *dense_dw = dw;
    for (std::size_t i = 0; i < dw.size(); ++i)
        if (!layer.mask.on[i]) dw.data[i] = 0.0;
    g.d_weights = std::move(dw);
    g.d_input = matmul(d_out, layer.effective_weights());  // m x in
    if (!layer.bias.empty()) {
        g.d_bias.assign(layer.out_neurons(), 0.0);
        for (std::size_t b = 0; b < d_out.rows; ++b)
            for (std::size_t i = 0; i < d_out.cols; ++i) g.d_bias[i] += d_out(b, i);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over the batch axis (per column).
// ---------------------------------------------------------------------------
enum class NormMode { train, eval };

struct BatchNorm {
    std::vector<double> gamma;
    std::vector<double> beta;
    double eps = 1e-5;
    double momentum = 0.1;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    NormMode mode = NormMode::train;

    explicit BatchNorm(std::size_t n, double eps_ = 1e-5, double momentum_ = 0.1)
        : gamma(n, 1.0), beta(n, 0.0), eps(eps_), momentum(momentum_), running_mean(n, 0.0), running_var(n, 1.0) {
        if (!(eps > 0.0)) throw std::invalid_argument("BatchNorm: eps must be positive");
    }

    std::size_t features() const { return gamma.size(); }
};

struct BnCache {
    Matrix input;
    std::vector<double> mean;
    std::vector<double> std;  // sqrt(var + eps)
    Matrix xhat;
    bool train = true;
};

inline std::pair<Matrix, BnCache> batchnorm_forward(BatchNorm& bn, const Matrix& x) {
    const std::size_t n = bn.features();
    if (x.cols != n) throw std::invalid_argument("batchnorm_forward: feature count mismatch");
    if (!(bn.eps > 0.0)) throw std::invalid_argument("batchnorm_forward: eps must be positive");
    const std::size_t m = x.rows;
    BnCache cache;
    cache.input = x;
    cache.mean.assign(n, 0.0);
    cache.std.assign(n, 0.0);
    cache.train = (bn.mode == NormMode::train);

    if (bn.mode == NormMode::train) {
        if (m < 2) throw std::invalid_argument("batchnorm_forward: train mode needs a batch of at least 2");
        std::vector<double> var(n, 0.0);
        for (std::size_t b = 0; b < m; ++b)
            for (std::size_t i = 0; i < n; ++i) cache.mean[i] += x(b, i);
        for (std::size_t i = 0; i < n; ++i) cache.mean[i] /= static_cast<double>(m);
        for (std::size_t b = 0; b < m; ++b)
            for (std::size_t i = 0; i < n; ++i) {
                const double d = x(b, i) - cache.mean[i];
                var[i] += d * d;
            }
        for (std::size_t i = 0; i < n; ++i) var[i] /= static_cast<double>(m);  // biased
        for (std::size_t i = 0; i < n; ++i) cache.std[i] = std::sqrt(var[i] + bn.eps);
        // Running stats keep the unbiased variance for eval.
        const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            bn.running_mean[i] = (1.0 - bn.momentum) * bn.running_mean[i] + bn.momentum * cache.mean[i];
            bn.running_var[i] = (1.0 - bn.momentum) * bn.running_var[i] + bn.momentum * var[i] * unbias;
        }
    } else {
        cache.mean = bn.running_mean;
        for (std::size_t i = 0; i < n; ++i) cache.std[i] = std::sqrt(bn.running_var[i] + bn.eps);
    }

    cache.xhat = Matrix(m, n);
    Matrix y(m, n);
    for (std::size_t b = 0; b < m; ++b)
        for (std::size_t i = 0; i < n; ++i) {
            const double xh = (x(b, i) - cache.mean[i]) / cache.std[i];
            cache.xhat(b, i) = xh;
            y(b, i) = bn.gamma[i] * xh + bn.beta[i];
        }
    return {std::move(y), std::move(cache)};
}

struct NormGrads {
    Matrix d_input;
    std::vector<double> d_gamma;
    std::vector<double> d_beta;
};

// Train mode: dL/dx = (1/std) * (g - mean_b(g) - xhat * mean_b(g*xhat)) with
// g = gamma * dL/dy, per column. Eval mode reduces to the fixed affine map.
inline NormGrads batchnorm_backward(const Matrix& d_y, const BnCache& cache, const std::vector<double>& gamma) {
    const std::size_t m = d_y.rows;
    const std::size_t n = d_y.cols;
    if (!cache.xhat.same_shape(d_y) || gamma.size() != n)
        throw std::invalid_argument("batchnorm_backward: shapes not congruent");
    NormGrads out;
    out.d_gamma.assign(n, 0.0);
    out.d_beta.assign(n, 0.0);
    for (std::size_t b = 0; b < m; ++b)
        for (std::size_t i = 0; i < n; ++i) {
            out.d_gamma[i] += d_y(b, i) * cache.xhat(b, i);
            out.d_beta[i] += d_y(b, i);
        }
    out.d_input = Matrix(m, n);
    if (!cache.train) {
        for (std::size_t b = 0; b < m; ++b)
            for (std::size_t i = 0; i < n; ++i) out.d_input(b, i) = d_y(b, i) * gamma[i] / cache.std[i];
        return out;
    }
    std::vector<double> mean_g(n, 0.0), mean_gx(n, 0.0);
    for (std::size_t b = 0; b < m; ++b)
        for (std::size_t i = 0; i < n; ++i) {
            const double g = gamma[i] * d_y(b, i);
            mean_g[i] += g;
            mean_gx[i] += g * cache.xhat(b, i);
        }
    for (std::size_t i = 0; i < n; ++i) {
        mean_g[i] /= static_cast<double>(m);
        mean_gx[i] /= static_cast<double>(m);
    }
    for (std::size_t b = 0; b < m; ++b)
        for (std::size_t i = 0; i < n; ++i) {
            const double g = gamma[i] * d_y(b, i);
            out.d_input(b, i) = (g - mean_g[i] - cache.xhat(b, i) * mean_gx[i]) / cache.std[i];
        }
    return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the feature axis (per row). Same arithmetic as
// BatchNorm with the roles of batch and feature swapped.
// ---------------------------------------------------------------------------
struct LayerNorm {
    std::vector<double> gamma;
    std::vector<double> beta;
    double eps = 1e-5;

    explicit LayerNorm(std::size_t n, double eps_ = 1e-5) : gamma(n, 1.0), beta(n, 0.0), eps(eps_) {
        if (!(eps > 0.0)) throw std::invalid_argument("LayerNorm: eps must be positive");
    }

    std::size_t features() const { return gamma.size(); }
};

struct LnCache {
    Matrix input;
    std::vector<double> mean;  // per row
    std::vector<double> std;   // per row, sqrt(var + eps)
    Matrix xhat;
};

inline std::pair<Matrix, LnCache> layernorm_forward(const LayerNorm& ln, const Matrix& x) {
    const std::size_t n = ln.features();
    if (x.cols != n) throw std::invalid_argument("layernorm_forward: feature count mismatch");
    if (n < 2) throw std::invalid_argument("layernorm_forward: needs at least 2 features");
    const std::size_t m = x.rows;
    LnCache cache;
    cache.input = x;
    cache.mean.assign(m, 0.0);
    cache.std.assign(m, 0.0);
    cache.xhat = Matrix(m, n);
    Matrix y(m, n);
    for (std::size_t b = 0; b < m; ++b) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += x(b, i);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x(b, i) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        cache.mean[b] = mu;
        cache.std[b] = std::sqrt(var + ln.eps);
        for (std::size_t i = 0; i < n; ++i) {
            const double xh = (x(b, i) - mu) / cache.std[b];
            cache.xhat(b, i) = xh;
            y(b, i) = ln.gamma[i] * xh + ln.beta[i];
        }
    }
    return {std::move(y), std::move(cache)};
}

inline NormGrads layernorm_backward(const Matrix& d_y, const LnCache& cache, const std::vector<double>& gamma) {
    const std::size_t m = d_y.rows;
    const std::size_t n = d_y.cols;
    if (!cache.xhat.same_shape(d_y) || gamma.size() != n)
        throw std::invalid_argument("layernorm_backward: shapes not congruent");
    NormGrads out;
    out.d_gamma.assign(n, 0.0);
    out.d_beta.assign(n, 0.0);
    out.d_input = Matrix(m, n);
    for (std::size_t b = 0; b < m; ++b)
        for (std::size_t i = 0; i < n; ++i) {
            out.d_gamma[i] += d_y(b, i) * cache.xhat(b, i);
            out.d_beta[i] += d_y(b, i);
        }
    for (std::size_t b = 0; b < m; ++b) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = gamma[i] * d_y(b, i);
            mean_g += g;
            mean_gx += g * cache.xhat(b, i);
        }
        mean_g /= static_cast<double>(n);
        mean_gx /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double g = gamma[i] * d_y(b, i);
            out.d_input(b, i) = (g - mean_g - cache.xhat(b, i) * mean_gx) / cache.std[b];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// ReLU. The subgradient at exactly zero is taken as zero.
// ---------------------------------------------------------------------------
inline Matrix relu_forward(const Matrix& x) {
    Matrix y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

inline Matrix relu_backward(const Matrix& d_y, const Matrix& x) {
    check_same_shape(d_y, x, "relu_backward");
    Matrix d_x = d_y;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x.data[i] > 0.0)) d_x.data[i] = 0.0;
    return d_x;
}

}  // namespace sparselab
