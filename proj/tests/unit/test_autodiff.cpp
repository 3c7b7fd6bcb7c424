#include <qinco/autodiff/optim.hpp>
#include <qinco/autodiff/tape.hpp>
#include <qinco/util/random.hpp>

#include "../support/fd_check.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace qinco;
using namespace qinco::ad;
using qinco::test_support::max_fd_error;
using qinco::test_support::rel_err;

namespace {

void fill_normal(Parameter<double>& p, Rng& rng, double scale = 1.0) {
    for (auto& v : p.value()) {
        v = scale * rng.normal();
    }
}

Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix<double> m(r, c);
    for (auto& v : m.data) {
        v = rng.normal();
    }
    return m;
}

} // namespace

TEST(Tape, IdentityLinearZeroLoss) {
    Parameter<double> w("w", 3, 3);
    for (std::size_t i = 0; i < 3; ++i) w.value()[i * 3 + i] = 1.0;
    Tape<double> t;
    Matrix<double> x(2, 3, {1, 2, 3, -1, 0.5, 4});
    const auto in = t.input(x);
    const auto y = t.input(x);
    const auto loss = t.squared_error(t.linear(in, w), y, 1.0);
    EXPECT_EQ(t.scalar(loss), 0.0);
    t.backward(loss);
    t.flush_gradients();
    for (double g : w.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Tape, LinearFiniteDifference) {
    Rng rng(1);
    Parameter<double> w("w", 5, 4), b("b", 1, 4);
    fill_normal(w, rng);
    fill_normal(b, rng);
    const auto x = random_matrix(6, 5, rng), y = random_matrix(6, 4, rng);
    const double err = max_fd_error({&w, &b}, [&](Tape<double>& t, bool bw) {
        const auto out = t.linear(t.input(x), w, &b);
        const auto l = t.squared_error(out, t.input(y), 0.5);
        if (bw) t.backward(l);
        return t.scalar(l);
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Tape, ComposedPrimitivesFiniteDifference) {
    Rng rng(2);
    Parameter<double> table("table", 7, 3), w1("w1", 6, 5), b1("b1", 1, 5), w2("w2", 5, 3);
    for (auto* p : {&table, &w1, &b1, &w2}) fill_normal(*p, rng, 0.7);
    const std::vector<code_t> idx = {3, 0, 3, 6};
    const auto other = random_matrix(4, 3, rng), target = random_matrix(4, 3, rng);
    const double err = max_fd_error({&table, &w1, &b1, &w2}, [&](Tape<double>& t, bool bw) {
        const auto g = t.gather_rows(table, idx);
        const auto cat = t.concat(g, t.input(other));
        const auto h = t.relu(t.linear(cat, w1, &b1));
        const auto out = t.add(g, t.linear(h, w2));
        const auto l = t.squared_error(out, t.input(target), 0.25);
        if (bw) t.backward(l);
        return t.scalar(l);
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Tape, GatherTouchesSelectedRowsOnly) {
    Parameter<double> table("t", 4, 2);
    table.value() = {1, 2, 3, 4, 5, 6, 7, 8};
    Tape<double> t;
    const std::vector<code_t> idx = {2, 2};
    const auto l = t.squared_error(t.gather_rows(table, idx), t.input(Matrix<double>(2, 2)), 1.0);
    t.backward(l);
    t.flush_gradients();
    EXPECT_EQ(table.grad(), (std::vector<double>{0, 0, 0, 0, 20, 24, 0, 0}));
}

TEST(Tape, ReluBlocksNegativeUnits) {
    Parameter<double> w("w", 1, 2);
    w.value() = {1.0, -1.0};
    Tape<double> t;
    const auto h = t.relu(t.linear(t.input(Matrix<double>(1, 1, {2.0})), w));
    const auto l = t.squared_error(h, t.input(Matrix<double>(1, 2)), 1.0);
    t.backward(l);
    t.flush_gradients();
    EXPECT_EQ(w.grad()[0], 8.0);
    EXPECT_EQ(w.grad()[1], 0.0);
}

TEST(Tape, DetachStopsGradient) {
    Parameter<double> w("w", 1, 1);
    w.value() = {3.0};
    Tape<double> t;
    const auto y = t.linear(t.input(Matrix<double>(1, 1, {1.0})), w);
    const auto l = t.squared_error(y, t.detach(y), 1.0);
    t.backward(l);
    t.flush_gradients();
    EXPECT_EQ(w.grad()[0], 0.0);
}

TEST(Tape, ShapeMismatchThrows) {
    Parameter<double> w("w", 3, 2);
    Tape<double> t;
    const auto x = t.input(Matrix<double>(2, 4));
    EXPECT_THROW(t.linear(x, w), ConfigError);
    EXPECT_THROW(t.add(x, t.input(Matrix<double>(2, 3))), ConfigError);
    EXPECT_THROW(t.concat(x, t.input(Matrix<double>(3, 1))), ConfigError);
}

TEST(Tape, DeterministicGradients) {
    auto run = [] {
        Rng rng(5);
        Parameter<float> w("w", 16, 8);
        for (auto& v : w.value()) v = static_cast<float>(rng.normal());
        Matrix<float> x(32, 16), y(32, 8);
        for (auto& v : x.data) v = static_cast<float>(rng.normal());
        Tape<float> t;
        const auto l = t.squared_error(t.relu(t.linear(t.input(x), w)), t.input(y), 1.0F);
        t.backward(l);
        t.flush_gradients();
        return std::make_pair(t.scalar(l), w.grad());
    };
    EXPECT_EQ(run(), run());
}

TEST(AdamW, ZeroGradNoDecayIsNoop) {
    Parameter<double> p("p", 1, 3);
    p.value() = {1, -2, 3};
    AdamW<double> opt({&p}, {0.9, 0.999, 1e-8, 0.0});
    opt.step(0.1);
    EXPECT_EQ(p.value(), (std::vector<double>{1, -2, 3}));
}

TEST(AdamW, FirstStepMovesByLr) {
    Parameter<double> p("p", 1, 1);
    p.value() = {1.0};
    p.grad() = {1.0};
    AdamW<double> opt({&p}, {0.9, 0.999, 1e-8, 0.0});
    opt.step(0.1);
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    EXPECT_NEAR(p.value()[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-12);
}

TEST(AdamW, PureDecay) {
    Parameter<double> p("p", 1, 2);
    p.value() = {1.0, -4.0};
    AdamW<double> opt({&p}, {0.9, 0.999, 1e-8, 0.1});
    opt.step(0.1);
    EXPECT_NEAR(p.value()[0], 0.99, 1e-15);
    EXPECT_NEAR(p.value()[1], -3.96, 1e-15);
}

TEST(AdamW, MatchesClosedFormOverSteps) {
    Parameter<double> p("p", 1, 1);
    p.value() = {0.5};
    AdamW<double> opt({&p}, {0.9, 0.999, 1e-8, 0.1});
    double w = 0.5, m = 0, v = 0;
    const double grads[] = {0.3, -0.1, 0.7, 0.2};
    for (int t = 1; t <= 4; ++t) {
        const double g = grads[t - 1], lr = 0.01 * t;
        p.grad() = {g};
        opt.step(lr);
        w -= lr * 0.1 * w;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(p.value()[0], w, 1e-12);
    }
}

TEST(Schedule, CosineEndpoints) {
    LrSchedule s{8e-4, 1e-3, 1000, 0};
    EXPECT_DOUBLE_EQ(cosine_lr(s, 0), 8e-4);
    EXPECT_NEAR(cosine_lr(s, 1000), 8e-7, 1e-18);
    EXPECT_NEAR(cosine_lr(s, 500), (8e-4 + 8e-7) / 2, 1e-15);
    EXPECT_NEAR(cosine_lr(s, 5000), 8e-7, 1e-18);
    for (std::size_t t = 1; t <= 1000; ++t) {
        EXPECT_LE(cosine_lr(s, t), cosine_lr(s, t - 1));
    }
}

TEST(Schedule, Warmup) {
    LrSchedule s{1.0, 0.5, 110, 10};
    EXPECT_DOUBLE_EQ(cosine_lr(s, 0), 0.1);
    EXPECT_DOUBLE_EQ(cosine_lr(s, 9), 1.0);
    EXPECT_DOUBLE_EQ(cosine_lr(s, 10), 1.0);
    EXPECT_DOUBLE_EQ(cosine_lr(s, 60), 0.75);
    EXPECT_DOUBLE_EQ(cosine_lr(s, 110), 0.5);
    EXPECT_THROW(cosine_lr(LrSchedule{1.0, 0.0, 10, 0}, 1), ConfigError);
}

TEST(Clip, BelowThresholdUnchanged) {
    Parameter<double> a("a", 1, 2);
    a.grad() = {0.03, 0.04};
    EXPECT_NEAR(clip_grad_norm<double>({&a}, 0.1), 0.05, 1e-15);
    EXPECT_EQ(a.grad(), (std::vector<double>{0.03, 0.04}));
}

TEST(Clip, ScalesToMaxNorm) {
    Parameter<float> a("a", 1, 2), b("b", 2, 1);
    a.grad() = {0.6F, 0.0F};
    b.grad() = {0.0F, 0.8F};
    EXPECT_NEAR(clip_grad_norm<float>({&a, &b}, 0.1), 1.0, 1e-6);
    const double n = std::hypot(a.grad()[0], b.grad()[1]);
    EXPECT_NEAR(n, 0.1, 1e-6);
    EXPECT_LE(n, 0.1 + 1e-9);
}

TEST(Clip, PostNormNeverExceedsMax) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        Parameter<float> a("a", 10, 10);
        const double scale = std::exp(rng.uniform(-4.0, 4.0));
        for (auto& g : a.grad()) g = static_cast<float>(scale * rng.normal());
        clip_grad_norm<float>({&a}, 0.1);
        double sq = 0;
        for (float g : a.grad()) sq += static_cast<double>(g) * g;
        EXPECT_LE(std::sqrt(sq), 0.1 + 1e-9);
    }
}

TEST(Clip, ZeroGrads) {
    Parameter<double> a("a", 2, 2);
    EXPECT_EQ(clip_grad_norm<double>({&a}, 0.1), 0.0);
    for (double g : a.grad()) EXPECT_EQ(g, 0.0);
}
