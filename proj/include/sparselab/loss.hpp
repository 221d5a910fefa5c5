#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sparselab/matrix.hpp"

namespace sparselab {

struct LossResult {
    double value = 0.0;
    Matrix grad;  // d value / d prediction
};

// L = (1/2m) * sum((target - pred)^2), m = number of samples (rows).
// dL/dpred = -(target - pred) / m.
inline LossResult mse_loss(const Matrix& pred, const Matrix& target) {
    check_same_shape(pred, target, "mse_loss");
    const double m = static_cast<double>(pred.rows);
    LossResult r;
    r.grad = Matrix(pred.rows, pred.cols);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = target.data[i] - pred.data[i];
        r.value += e * e;
        r.grad.data[i] = -e / m;
    }
    r.value /= 2.0 * m;
    return r;
}

// Mean softmax cross-entropy over rows, stabilized by max subtraction.
// dL/dlogits = (softmax - onehot) / m.
inline LossResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows)
        throw std::invalid_argument("softmax_cross_entropy: one label per row required");
    const std::size_t m = logits.rows;
    const std::size_t c = logits.cols;
    LossResult r;
    r.grad = Matrix(m, c);
    for (std::size_t b = 0; b < m; ++b) {
        const int label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= c)
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        double mx = logits(b, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(b, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits(b, j) - mx);
        const double log_denom = std::log(denom);
        r.value += -(logits(b, label) - mx - log_denom);
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(logits(b, j) - mx) / denom;
            r.grad(b, j) = (p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) / static_cast<double>(m);
        }
    }
    r.value /= static_cast<double>(m);
    return r;
}

}  // namespace sparselab
