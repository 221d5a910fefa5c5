#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/mask.hpp"
#include "sparselab/matrix.hpp"

namespace sparselab {

// Diagonal gradient preconditioner for one sparse layer: row i of a weight
// gradient is scaled by sqrt(1 - s_i), and the whole matrix by
// 1/sqrt(1 - s_avg) to keep the overall magnitude comparable. With a dense
// mask it is exactly the identity.
struct Preconditioner {
    std::vector<double> factors;  // sqrt(1 - s_i) per output neuron
    double s_avg = 0.0;
    double global_scale = 1.0;  // 1/sqrt(1 - s_avg)
    std::uint64_t mask_version = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    bool is_identity() const {
        if (global_scale != 1.0) return false;
        for (double f : factors)
            if (f != 1.0) return false;
        return true;
    }
};

inline Preconditioner build_preconditioner(const Mask& mask, std::uint64_t mask_version = 0) {
    const std::vector<double> s = neuron_sparsities(mask);
    Preconditioner p;
    p.rows = mask.rows;
    p.cols = mask.cols;
    p.mask_version = mask_version;
    p.factors.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] >= 1.0)
            throw std::runtime_error("build_preconditioner: neuron " + std::to_string(i) +
                                     " is fully masked (s_i = 1); repair the mask first");
        p.factors[i] = std::sqrt(1.0 - s[i]);
    }
    p.s_avg = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    p.global_scale = 1.0 / std::sqrt(1.0 - p.s_avg);
    return p;
}

inline Matrix apply_preconditioner(const Preconditioner& p, const Matrix& grad) {
    if (grad.rows != p.rows || grad.cols != p.cols)
        throw std::invalid_argument("apply_preconditioner: gradient shape does not match preconditioner");
    Matrix out = grad;
    for (std::size_t i = 0; i < out.rows; ++i) {
        const double f = p.factors[i];
        for (std::size_t j = 0; j < out.cols; ++j) out(i, j) *= f;
    }
    for (double& v : out.data) v *= p.global_scale;
    return out;
}

}  // namespace sparselab
