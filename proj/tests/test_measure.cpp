#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cdiff/measure.hpp"
#include "oracles.hpp"

using namespace cdiff;

namespace {
constexpr double kHalfSqrt2 = 0.70710678118654757;

std::vector<LinearMask> random_masks(std::mt19937_64& rng, int count) {
    std::vector<LinearMask> out;
    std::uniform_int_distribution<std::size_t> len(3, 40);
    for (int i = 0; i < count; ++i) {
        const std::size_t n = len(rng);
        std::uniform_int_distribution<std::size_t> c(1, (n - 1) / 2);
        switch (i % 3) {
            case 0: out.push_back(LinearMask::left(c(rng), n)); break;
            case 1: out.push_back(LinearMask::right(c(rng), n)); break;
            default: out.push_back(LinearMask::infill(c(rng), c(rng), n)); break;
        }
    }
    return out;
}
}  // namespace

TEST(LinearMask, ApplyExamples) {
    const Vec x{1, 2, 3, 4};
    EXPECT_EQ(LinearMask::left(2, 4).apply(x), (Vec{1, 2}));
    EXPECT_EQ(LinearMask::right(1, 4).apply(x), (Vec{4}));
    EXPECT_EQ(LinearMask::infill(1, 1, 4).apply(x), (Vec{1, 4}));
}

TEST(LinearMask, RejectsBadShapes) {
    EXPECT_THROW(LinearMask::left(0, 4), ContractError);
    EXPECT_THROW(LinearMask::left(4, 4), ContractError);
    EXPECT_THROW(LinearMask::infill(2, 2, 4), ContractError);
    EXPECT_THROW(LinearMask::infill(0, 2, 4), ContractError);
    EXPECT_THROW(LinearMask::left(2, 4).apply(Vec{1, 2, 3}), ContractError);
}

TEST(LinearMask, AdjointIdentity) {
    std::mt19937_64 rng(1);
    for (const auto& m : random_masks(rng, 30)) {
        const Vec x = oracle::randn(m.size(), rng), u = oracle::randn(m.rows(), rng);
        EXPECT_NEAR(dot(m.apply(x), u), dot(x, m.adjoint(u)), 1e-12);
        // A A^T = I
        EXPECT_EQ(m.apply(m.adjoint(u)), u);
    }
}

TEST(Projection, Examples) {
    const auto m = LinearMask::infill(1, 1, 4);
    EXPECT_EQ(consistency_project(Vec{9, 9, 9, 9}, Vec{1, 4}, m), (Vec{1, 9, 9, 4}));
    const Vec fixed{1, 5, 6, 4};
    EXPECT_EQ(consistency_project(fixed, Vec{1, 4}, m), fixed);
    EXPECT_THROW(consistency_project(fixed, Vec{1}, m), ContractError);
}

TEST(Projection, ExactIdempotentOrthogonal) {
    std::mt19937_64 rng(2);
    for (const auto& m : random_masks(rng, 60)) {
        const Vec x = oracle::randn(m.size(), rng), y = oracle::randn(m.rows(), rng);
        const Vec p = consistency_project(x, y, m);
        EXPECT_EQ(m.apply(p), y);
        EXPECT_EQ(consistency_project(p, y, m), p);
        for (std::size_t i = 0; i < x.size(); ++i)
            if (!m.is_selected(i)) {
                EXPECT_EQ(p[i], x[i]);
            }
        // q in the measurement subspace {q : A q = y}
        const Vec q = consistency_project(oracle::randn(m.size(), rng), y, m);
        double ip = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) ip += (x[i] - p[i]) * (p[i] - q[i]);
        EXPECT_NEAR(ip, 0.0, 1e-10);
    }
}

TEST(Crossfade, EndpointsMidpointPower) {
    const auto f = crossfade(5);
    EXPECT_EQ(f.fade_in.front(), 0.0);
    EXPECT_EQ(f.fade_out.front(), 1.0);
    EXPECT_EQ(f.fade_in.back(), 1.0);
    EXPECT_EQ(f.fade_out.back(), 0.0);
    EXPECT_NEAR(f.fade_in[2], kHalfSqrt2, 1e-15);
    EXPECT_NEAR(f.fade_out[2], kHalfSqrt2, 1e-15);
    for (std::size_t len : {1u, 2u, 3u, 17u, 40000u}) {
        const auto c = crossfade(len);
        for (std::size_t i = 0; i < len; ++i) {
            EXPECT_NEAR(c.fade_in[i] * c.fade_in[i] + c.fade_out[i] * c.fade_out[i], 1.0, 1e-12);
            if (i > 0) {
                EXPECT_GE(c.fade_in[i], c.fade_in[i - 1]);
                EXPECT_LE(c.fade_out[i], c.fade_out[i - 1]);
            }
        }
    }
    EXPECT_THROW(crossfade(0), ContractError);
}

TEST(TransitionTarget, Examples) {
    const std::size_t cl = 2, cr = 3, fade = 3, n = cl + fade + cr;
    const auto f = crossfade(fade);
    // xL = 1, xR = 0: middle is f_out
    const Vec ones(n, 1.0), zeros(n, 0.0);
    const Vec a = build_transition_target(ones, zeros, cl, cr, fade);
    for (std::size_t j = 0; j < fade; ++j) EXPECT_EQ(a[cl + j], f.fade_out[j]);
    // xL = xR = c: middle is c (f_in + f_out), peak c sqrt(2)
    const Vec c(n, 0.4);
    const Vec b = build_transition_target(c, c, cl, cr, fade);
    for (std::size_t j = 0; j < fade; ++j) EXPECT_NEAR(b[cl + j], 0.4 * (f.fade_in[j] + f.fade_out[j]), 1e-15);
    EXPECT_NEAR(b[cl + 1], 0.4 * std::sqrt(2.0), 1e-15);
    EXPECT_EQ(b.size(), n);
}

TEST(TransitionTarget, ContextsReproducedExactly) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t cl = 1 + rng() % 10, cr = 1 + rng() % 10, fade = 1 + rng() % 10;
        const std::size_t n = cl + fade + cr;
        const Vec xl = oracle::randn(n + rng() % 5, rng), xr = oracle::randn(n + rng() % 5, rng);
        const Vec out = build_transition_target(xl, xr, cl, cr, fade);
        ASSERT_EQ(out.size(), n);
        for (std::size_t i = 0; i < cl; ++i) EXPECT_EQ(out[i], xl[i]);
        for (std::size_t i = 0; i < cr; ++i) EXPECT_EQ(out[n - 1 - i], xr[xr.size() - 1 - i]);
    }
    EXPECT_THROW(build_transition_target(Vec(5), Vec(9), 2, 2, 2), ContractError);
    EXPECT_THROW(build_transition_target(Vec(9), Vec(5), 2, 2, 2), ContractError);
}

TEST(Distances, Examples) {
    const Vec y{0.3, -1.0, 2.0};
    EXPECT_EQ(l1_distance()->eval(y, y), 0.0);
    EXPECT_EQ(l2_distance()->eval(y, y), 0.0);
    EXPECT_EQ(l2sq_distance()->eval(y, y), 0.0);
    EXPECT_NEAR(bce_distance()->eval(Vec{1.0}, Vec{0.5}), 0.6931471805599453, 1e-15);
    EXPECT_NEAR(l1_distance()->eval(Vec{1, 2}, Vec{0, 4}), 3.0, 1e-15);
    EXPECT_NEAR(l2_distance()->eval(Vec{0, 0}, Vec{3, 4}), 5.0, 1e-15);
    EXPECT_NEAR(l2sq_distance()->eval(Vec{0, 0}, Vec{3, 4}), 25.0, 1e-15);
    EXPECT_THROW(l1_distance()->eval(Vec{1}, Vec{1, 2}), ContractError);
    EXPECT_THROW(distance_by_name("cosine"), ContractError);
    EXPECT_EQ(distance_by_name("bce")->name(), "bce");
}

TEST(Distances, BceClampsSaturatedProbabilities) {
    const double v0 = bce_distance()->eval(Vec{1.0}, Vec{0.0});
    EXPECT_TRUE(std::isfinite(v0));
    EXPECT_NEAR(v0, -std::log(kBceClamp), 1e-9);
    for (double g : bce_distance()->grad(Vec{1.0, 0.0}, Vec{0.0, 1.0})) EXPECT_TRUE(std::isfinite(g));
}

TEST(Distances, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> up(0.05, 0.95);
    const std::vector<std::shared_ptr<const Distance>> ds{l1_distance(), l2_distance(), l2sq_distance(),
                                                          bce_distance()};
    for (int probe = 0; probe < 100; ++probe) {
        for (const auto& d : ds) {
            Vec y, yh;
            if (d->name() == "bce") {
                for (int i = 0; i < 4; ++i) {
                    y.push_back(up(rng));
                    yh.push_back(up(rng));
                }
            } else {
                y = oracle::randn(4, rng);
                yh = oracle::randn(4, rng);
            }
            auto f = [&](const Vec& v) { return d->eval(y, v); };
            EXPECT_LT(oracle::rel_err(d->grad(y, yh), oracle::fd_gradient(f, yh, 1e-6)), 1e-6) << d->name();
        }
    }
}

TEST(ToyEmbedder, ZeroOddDeterministic) {
    ToyEmbedder e(7, 12, 4), e2(7, 12, 4);
    for (double v : e.apply(Vec(12, 0.0))) EXPECT_EQ(v, 0.0);
    std::mt19937_64 rng(5);
    const Vec x = oracle::randn(12, rng);
    const Vec a = e.apply(x), b = e.apply(scaled(-1.0, x));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], -b[i], 1e-15);
    EXPECT_EQ(e.apply(x), e2.apply(x));
    EXPECT_THROW(ToyEmbedder(1, 3, 4), ContractError);
    EXPECT_THROW(e.apply(Vec(5, 0.0)), ContractError);
}

TEST(ToyClassifier, RangeAndZeroWeights) {
    ToyClassifier c(3, 10, 5);
    std::mt19937_64 rng(6);
    for (int i = 0; i < 50; ++i)
        for (double p : c.apply(oracle::randn(10, rng, 5.0))) {
            EXPECT_GT(p, 0.0);
            EXPECT_LT(p, 1.0);
        }
    ToyClassifier zero(Eigen::MatrixXd::Zero(3, 4), Eigen::VectorXd::Zero(3));
    for (double p : zero.apply(oracle::randn(4, rng))) EXPECT_EQ(p, 0.5);
    EXPECT_THROW(ToyClassifier(1, 4, 0), ContractError);
}

TEST(Operators, VjpsMatchFiniteDifferences) {
    std::mt19937_64 rng(7);
    const std::vector<std::shared_ptr<const MeasurementOp>> ops{
        toy_embedder(1, 10, 4), toy_classifier(2, 10, 3),
        std::make_shared<const MaskOperator>(LinearMask::infill(2, 3, 10))};
    for (int probe = 0; probe < 100; ++probe)
        for (const auto& op : ops) {
            const Vec x = oracle::randn(op->input_dim(), rng), c = oracle::randn(op->output_dim(), rng);
            auto f = [&](const Vec& v) { return dot(c, op->apply(v)); };
            EXPECT_LT(oracle::rel_err(op->vjp(x, c), oracle::fd_gradient(f, x)), 1e-5);
        }
}

TEST(Operators, SelectionFlag) {
    MaskOperator m(LinearMask::left(2, 5));
    EXPECT_TRUE(m.is_linear_selection());
    ASSERT_NE(m.selection(), nullptr);
    EXPECT_EQ(*m.selection(), LinearMask::left(2, 5));
    EXPECT_FALSE(ToyEmbedder(1, 5, 2).is_linear_selection());
    EXPECT_FALSE(ToyClassifier(1, 5, 2).is_linear_selection());
}
