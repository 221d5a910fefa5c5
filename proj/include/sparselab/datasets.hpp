#pragma once

#include <stdexcept>
#include <vector>

#include "sparselab/matrix.hpp"
#include "sparselab/rng.hpp"

namespace sparselab {

struct Dataset {
    Matrix inputs;
    std::vector<int> labels;

    std::size_t size() const { return inputs.rows; }
};

// Gaussian inputs with uniform random labels; desk stand-in for image data in
// gradient-statistics experiments.
inline Dataset synth_gaussian(std::size_t n, std::size_t dim, std::size_t classes, Rng& rng) {
    Dataset d;
    d.inputs = gaussian(rng, n, dim, 0.0, 1.0);
    d.labels.resize(n);
    for (auto& l : d.labels) l = static_cast<int>(rng.next_below(classes));
    return d;
}

// Balanced Gaussian class clusters with means one unit apart on the
// coordinate axes: class c is centered at (1 + c/dim) * e_{c mod dim}.
inline Dataset synth_classification(std::size_t n, std::size_t dim, std::size_t classes, double cluster_std,
                                    Rng& rng) {
    if (classes == 0 || dim == 0) throw std::invalid_argument("synth_classification: empty dims or classes");
    Dataset d;
    d.inputs = Matrix(n, dim);
    d.labels.resize(n);
    // Balanced label sequence, then a Fisher-Yates shuffle.
    for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % classes);
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(d.labels[i], d.labels[j]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = static_cast<std::size_t>(d.labels[i]);
        const std::size_t axis = c % dim;
        const double offset = 1.0 + static_cast<double>(c / dim);
        for (std::size_t j = 0; j < dim; ++j)
            d.inputs(i, j) = (j == axis ? offset : 0.0) + cluster_std * rng.next_gaussian();
    }
    return d;
}

inline Matrix batch_of(const Dataset& d, const std::vector<std::size_t>& order, std::size_t start,
                       std::size_t count, std::vector<int>& labels_out) {
    Matrix x(count, d.inputs.cols);
    labels_out.resize(count);
    for (std::size_t b = 0; b < count; ++b) {
        const std::size_t src = order[start + b];
        for (std::size_t j = 0; j < d.inputs.cols; ++j) x(b, j) = d.inputs(src, j);
        labels_out[b] = d.labels[src];
    }
    return x;
}

}  // namespace sparselab
