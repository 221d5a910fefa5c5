#include <gtest/gtest.h>

#include <cmath>

#include "sparselab/lr_schedule.hpp"
#include "sparselab/model.hpp"
#include "sparselab/optim.hpp"
#include "sparselab/rng.hpp"

using namespace sparselab;

namespace {

Mlp one_param_model(double w0) {
    Mlp m;
    Matrix w(1, 1);
    w(0, 0) = w0;
    m.add_linear(SparseLinear(std::move(w), Mask::dense(1, 1)));
    return m;
}

MlpGrads grads_for(const Mlp& model, double g) {
    MlpGrads grads;
    grads.d_weights.assign(model.linears.size(), Matrix());
    grads.d_bias.assign(model.linears.size(), {});
    for (std::size_t l = 0; l < model.linears.size(); ++l) {
        grads.d_weights[l] = Matrix(model.linears[l].weights.rows, model.linears[l].weights.cols, g);
        for (std::size_t i = 0; i < grads.d_weights[l].size(); ++i)
            if (!model.linears[l].mask.on[i]) grads.d_weights[l].data[i] = 0.0;
    }
    grads.bn_grads.assign(model.batchnorms.size(), {});
    grads.ln_grads.assign(model.layernorms.size(), {});
    return grads;
}

Mlp random_model(Rng& rng, double density) {
    Mlp m;
    const Mask mask = density >= 1.0 ? Mask::dense(6, 8) : random_mask(6, 8, density, rng);
    m.add_linear(SparseLinear(gaussian(rng, 6, 8), mask));
    m.add_batchnorm(BatchNorm(6));
    m.add_relu();
    m.add_linear(SparseLinear(gaussian(rng, 4, 6), Mask::dense(4, 6)));
    return m;
}

MlpGrads random_grads(const Mlp& model, Rng& rng) {
    MlpGrads grads;
    for (const auto& lin : model.linears) {
        Matrix g = gaussian(rng, lin.weights.rows, lin.weights.cols);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!lin.mask.on[i]) g.data[i] = 0.0;
        grads.d_weights.push_back(std::move(g));
        grads.d_bias.push_back({});
    }
    for (const auto& bn : model.batchnorms) {
        const Matrix g = gaussian(rng, 2, bn.features());
        grads.bn_grads.push_back({std::vector<double>(g.data.begin(), g.data.begin() + bn.features()),
                                  std::vector<double>(g.data.begin() + bn.features(), g.data.end())});
    }
    grads.ln_grads.assign(model.layernorms.size(), {});
    return grads;
}

}  // namespace

TEST(SgdStep, PlainUpdate) {
    Mlp m = one_param_model(1.0);
    OptState st = OptState::for_model(m);
    sgd_step(m, grads_for(m, 0.5), st, {0.1, 0.0, 0.0});
    EXPECT_DOUBLE_EQ(m.linears[0].weights(0, 0), 0.95);
}

TEST(SgdStep, ZeroGradLeavesParamsAlone) {
    Mlp m = one_param_model(1.0);
    OptState st = OptState::for_model(m);
    sgd_step(m, grads_for(m, 0.0), st, {0.1, 0.0, 0.0});
    EXPECT_DOUBLE_EQ(m.linears[0].weights(0, 0), 1.0);
}

TEST(SgdStep, MomentumMatchesHandUnroll) {
    Mlp m = one_param_model(2.0);
    OptState st = OptState::for_model(m);
    const double eta = 0.1, mom = 0.9, g1 = 0.5, g2 = -0.25;
    sgd_step(m, grads_for(m, g1), st, {eta, mom, 0.0});
    sgd_step(m, grads_for(m, g2), st, {eta, mom, 0.0});
    // v1 = g1; w1 = 2 - eta*v1; v2 = mom*v1 + g2; w2 = w1 - eta*v2.
    const double v1 = g1;
    const double w1 = 2.0 - eta * v1;
    const double v2 = mom * v1 + g2;
    const double w2 = w1 - eta * v2;
    EXPECT_NEAR(m.linears[0].weights(0, 0), w2, 1e-12);
    EXPECT_EQ(st.t, 2);
}

TEST(SgdStep, WeightDecayAddsToGradient) {
    Mlp m = one_param_model(1.0);
    OptState st = OptState::for_model(m);
    sgd_step(m, grads_for(m, 0.0), st, {0.1, 0.0, 0.01});
    EXPECT_NEAR(m.linears[0].weights(0, 0), 1.0 - 0.1 * 0.01, 1e-15);
}

TEST(SparseoptStep, DenseMasksBitIdenticalToSgd) {
    Rng rng_a(1), rng_b(1), data_a(2), data_b(2);
    Mlp a = random_model(rng_a, 1.0);
    Mlp b = random_model(rng_b, 1.0);
    OptState sa = OptState::for_model(a), sb = OptState::for_model(b);
    std::vector<Preconditioner> all = {build_preconditioner(a.linears[0].mask, 0),
                                       build_preconditioner(a.linears[1].mask, 0)};
    for (int step = 0; step < 50; ++step) {
        const MlpGrads ga = random_grads(a, data_a);
        const MlpGrads gb = random_grads(b, data_b);
        sgd_step(a, ga, sa, {0.05, 0.9, 1e-4});
        sparseopt_step(b, gb, all, sb, {0.05, 0.9, 1e-4});
    }
    for (std::size_t l = 0; l < a.linears.size(); ++l)
        for (std::size_t i = 0; i < a.linears[l].weights.size(); ++i)
            EXPECT_EQ(a.linears[l].weights.data[i], b.linears[l].weights.data[i]);
    for (std::size_t i = 0; i < a.batchnorms[0].gamma.size(); ++i) {
        EXPECT_EQ(a.batchnorms[0].gamma[i], b.batchnorms[0].gamma[i]);
        EXPECT_EQ(a.batchnorms[0].beta[i], b.batchnorms[0].beta[i]);
    }
}

TEST(SparseoptStep, MixedSparsityRowDeltas) {
    // s = [0, 0.75]: unit grads, eta = 0.1, momentum 0 -> per-row deltas
    // [-0.126491, -0.063246].
    Mlp m;
    Mask mask(2, 4);
    for (std::size_t j = 0; j < 4; ++j) mask(0, j) = 1;
    mask(1, 0) = 1;
    m.add_linear(SparseLinear(Matrix(2, 4, 0.0), mask));
    OptState st = OptState::for_model(m);
    const std::vector<Preconditioner> precs = {build_preconditioner(m.linears[0].mask, 0)};
    sparseopt_step(m, grads_for(m, 1.0), precs, st, {0.1, 0.0, 0.0});
    EXPECT_NEAR(m.linears[0].weights(0, 0), -0.126491, 1e-6);
    EXPECT_NEAR(m.linears[0].weights(1, 0), -0.063246, 1e-6);
    EXPECT_EQ(m.linears[0].weights(1, 1), 0.0);
}

TEST(SparseoptStep, UniformSparsityMatchesSgd) {
    Rng rng_a(3), rng_b(3), data_a(4), data_b(4);
    auto make = [](Rng& rng) {
        Mlp m;
        Mask mask(4, 8);
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t j = 0; j < 4; ++j) mask(r, j) = 1;
        m.add_linear(SparseLinear(gaussian(rng, 4, 8), mask));
        return m;
    };
    Mlp a = make(rng_a), b = make(rng_b);
    OptState sa = OptState::for_model(a), sb = OptState::for_model(b);
    const std::vector<Preconditioner> precs = {build_preconditioner(b.linears[0].mask, 0)};
    for (int step = 0; step < 10; ++step) {
        sgd_step(a, random_grads(a, data_a), sa, {0.1, 0.9, 0.0});
        sparseopt_step(b, random_grads(b, data_b), precs, sb, {0.1, 0.9, 0.0});
    }
    for (std::size_t i = 0; i < a.linears[0].weights.size(); ++i)
        EXPECT_NEAR(a.linears[0].weights.data[i], b.linears[0].weights.data[i], 1e-12);
}

TEST(SparseoptStep, StalePreconditionerThrows) {
    Rng rng(5);
    Mlp m = random_model(rng, 0.5);
    OptState st = OptState::for_model(m);
    std::vector<Preconditioner> precs = {build_preconditioner(m.linears[0].mask, m.linears[0].mask_version),
                                         build_preconditioner(m.linears[1].mask, m.linears[1].mask_version)};
    m.linears[0].set_mask(m.linears[0].mask);  // bump version
    EXPECT_THROW(sparseopt_step(m, random_grads(m, rng), precs, st, {0.1, 0.0, 0.0}), std::runtime_error);
}

TEST(SparseoptStep, MaskedEntriesStayZeroThroughStepSequence) {
    Rng rng(6), data(7);
    Mlp m = random_model(rng, 0.4);
    OptState st = OptState::for_model(m);
    const std::vector<Preconditioner> precs = {build_preconditioner(m.linears[0].mask, 0),
                                               build_preconditioner(m.linears[1].mask, 0)};
    for (int step = 0; step < 25; ++step)
        sparseopt_step(m, random_grads(m, data), precs, st, {0.1, 0.9, 1e-3});
    for (std::size_t i = 0; i < m.linears[0].weights.size(); ++i) {
        if (!m.linears[0].mask.on[i]) {
            EXPECT_EQ(m.linears[0].weights.data[i], 0.0);
            EXPECT_EQ(st.v_weights[0].data[i], 0.0);
        }
    }
}

TEST(HamStep, AlphaZeroIsPlainGd) {
    Mlp a = one_param_model(1.0), b = one_param_model(1.0);
    OptState st = OptState::for_model(b);
    ham_step(a, grads_for(a, 0.5), 0.1, 0.0);
    sgd_step(b, grads_for(b, 0.5), st, {0.1, 0.0, 0.0});
    EXPECT_EQ(a.linears[0].weights(0, 0), b.linears[0].weights(0, 0));
}

TEST(HamStep, MetricExample) {
    Mlp m = one_param_model(1.0);
    ham_step(m, grads_for(m, 1.0), 0.1, 4.0);
    EXPECT_DOUBLE_EQ(m.linears[0].weights(0, 0), 0.5);  // 1 - 0.1*(1+4)*1
}

TEST(HamStep, NormalizationParamsIgnoreAlpha) {
    Rng rng(8);
    Mlp m = random_model(rng, 1.0);
    m.batchnorms[0].gamma.assign(6, 2.0);
    MlpGrads grads = grads_for(m, 0.0);
    grads.bn_grads[0].d_gamma.assign(6, 1.0);
    grads.bn_grads[0].d_beta.assign(6, 0.5);
    ham_step(m, grads, 0.1, 4.0);
    for (double g : m.batchnorms[0].gamma) EXPECT_DOUBLE_EQ(g, 2.0 - 0.1 * 1.0);  // no (1+alpha|gamma|)
    for (double b : m.batchnorms[0].beta) EXPECT_DOUBLE_EQ(b, -0.05);
}

TEST(GradRenormalize, ScalesWhenNormAboveOne) {
    Mlp m = one_param_model(0.0);
    MlpGrads g = grads_for(m, 2.0);
    const double norm = grad_renormalize(g);
    EXPECT_DOUBLE_EQ(norm, 2.0);
    EXPECT_DOUBLE_EQ(g.d_weights[0](0, 0), 1.0);
}

TEST(GradRenormalize, LeavesSmallGradientsAlone) {
    Mlp m = one_param_model(0.0);
    MlpGrads g = grads_for(m, 0.5);
    const double norm = grad_renormalize(g);
    EXPECT_DOUBLE_EQ(norm, 0.5);
    EXPECT_DOUBLE_EQ(g.d_weights[0](0, 0), 0.5);
}

TEST(GradRenormalize, PostNormIsClampedMin) {
    Rng rng(9);
    Mlp m = random_model(rng, 0.7);
    for (const double scale : {5.0, 0.3}) {
        MlpGrads g = random_grads(m, rng);
        for (auto& w : g.d_weights)
            for (double& v : w.data) v *= scale;
        double before = 0.0;
        for (const auto& w : g.d_weights)
            for (double v : w.data) before += v * v;
        for (const auto& n : g.bn_grads) {
            for (double v : n.d_gamma) before += v * v;
            for (double v : n.d_beta) before += v * v;
        }
        before = std::sqrt(before);
        grad_renormalize(g);
        double after = 0.0;
        for (const auto& w : g.d_weights)
            for (double v : w.data) after += v * v;
        for (const auto& n : g.bn_grads) {
            for (double v : n.d_gamma) after += v * v;
            for (double v : n.d_beta) after += v * v;
        }
        after = std::sqrt(after);
        EXPECT_NEAR(after, std::min(before, 1.0), 1e-12);
    }
}

TEST(GradRenormalize, IdempotentBelowOne) {
    Mlp m = one_param_model(0.0);
    MlpGrads g = grads_for(m, 0.5);
    grad_renormalize(g);
    const double v1 = g.d_weights[0](0, 0);
    grad_renormalize(g);
    EXPECT_EQ(g.d_weights[0](0, 0), v1);
}

TEST(LrSchedule, ImagenetStyleBoundaries) {
    const LrSchedule s = LrSchedule::imagenet(0.1, 5, 90);
    EXPECT_DOUBLE_EQ(lr_at(s, 0.0, 256), 1e-5);
    EXPECT_DOUBLE_EQ(lr_at(s, 5.0, 256), 0.1);
    EXPECT_NEAR(lr_at(s, 90.0, 256), s.eta_end, 1e-15);
}

TEST(LrSchedule, ImagenetPeakScalesWithBatch) {
    const LrSchedule s = LrSchedule::imagenet(0.1, 5, 90);
    EXPECT_DOUBLE_EQ(lr_at(s, 5.0, 128), 0.1 * 128.0 / 256.0);
    EXPECT_DOUBLE_EQ(lr_at(s, 5.0, 512), 0.1 * 512.0 / 256.0);
}

TEST(LrSchedule, CifarStyleBoundaries) {
    const LrSchedule s = LrSchedule::cifar(0.1, 5, 100);
    EXPECT_DOUBLE_EQ(lr_at(s, 0.0, 256), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(s, 5.0, 256), 0.1);
    EXPECT_NEAR(lr_at(s, 100.0, 256), 1e-6, 1e-15);
}

TEST(LrSchedule, ContinuousAtWarmupBoundary) {
    for (const auto& s : {LrSchedule::imagenet(0.1, 5, 90), LrSchedule::cifar(0.1, 5, 100)}) {
        const double left = lr_at(s, 5.0 - 1e-9, 256);
        const double right = lr_at(s, 5.0 + 1e-9, 256);
        EXPECT_NEAR(left, right, 1e-9);  // both converge to the peak
        EXPECT_NEAR(lr_at(s, 5.0, 256), 0.1, 1e-12);
    }
}

TEST(LrSchedule, MidCosineValue) {
    const LrSchedule s = LrSchedule::cifar(0.1, 5, 105);
    // Halfway through the cosine phase: eta_end + (peak - eta_end)/2.
    EXPECT_NEAR(lr_at(s, 55.0, 256), 1e-6 + 0.5 * (0.1 - 1e-6), 1e-12);
}

TEST(LrSchedule, InvalidConfigurationThrows) {
    LrSchedule s = LrSchedule::cifar(0.1, 5, 100);
    s.warmup_epochs = 100;
    EXPECT_THROW(lr_at(s, 1.0, 256), std::invalid_argument);
    LrSchedule neg = LrSchedule::cifar(-0.1, 5, 100);
    EXPECT_THROW(lr_at(neg, 1.0, 256), std::invalid_argument);
    const LrSchedule ok = LrSchedule::cifar(0.1, 5, 100);
    EXPECT_THROW(lr_at(ok, 101.0, 256), std::invalid_argument);
}
