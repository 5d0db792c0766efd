#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "cdiff/schedule.hpp"

using namespace cdiff;

namespace {
constexpr double kHalfSqrt2 = 0.70710678118654757;
}

TEST(CosineLevel, Endpoints) {
    const auto a = cosine_level(0.0);
    EXPECT_EQ(a.alpha, 1.0);
    EXPECT_EQ(a.sigma, 0.0);
    const auto b = cosine_level(1.0);
    EXPECT_EQ(b.alpha, 0.0);
    EXPECT_EQ(b.sigma, 1.0);
}

TEST(CosineLevel, Midpoint) {
    const auto l = cosine_level(0.5);
    EXPECT_NEAR(l.alpha, kHalfSqrt2, 1e-15);
    EXPECT_NEAR(l.sigma, kHalfSqrt2, 1e-15);
    EXPECT_NEAR(l.snr(), 1.0, 1e-14);
}

TEST(CosineLevel, RejectsOutOfRange) {
    EXPECT_THROW(cosine_level(-1e-9), ContractError);
    EXPECT_THROW(cosine_level(1.0 + 1e-9), ContractError);
    EXPECT_THROW(cosine_level(std::nan("")), ContractError);
}

TEST(CosineLevel, UnitNormAndRoundTrip) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double t = u(rng);
        const auto l = cosine_level(t);
        EXPECT_NEAR(l.alpha * l.alpha + l.sigma * l.sigma, 1.0, 1e-12);
        EXPECT_NEAR(std::asin(l.sigma) * 2.0 / std::numbers::pi, t, 1e-9);
    }
}

TEST(CosineLevel, MonotoneSnr) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(1e-6, 1.0 - 1e-6);
    for (int i = 0; i < 1000; ++i) {
        double t1 = u(rng), t2 = u(rng);
        if (t1 == t2) continue;
        if (t1 > t2) std::swap(t1, t2);
        const auto l1 = cosine_level(t1), l2 = cosine_level(t2);
        EXPECT_GT(l1.snr(), l2.snr());
        EXPECT_GE(l1.alpha, l2.alpha);
        EXPECT_LE(l1.sigma, l2.sigma);
    }
}

TEST(TransitionVariance, FrozenValue) {
    // Evaluated with 50-digit arithmetic outside this code base.
    EXPECT_NEAR(transition_variance(0.5, 0.25), 0.12132034355964257, 1e-15);
}

TEST(TransitionVariance, ZeroCases) {
    EXPECT_EQ(transition_variance(0.5, 0.0), 0.0);
    EXPECT_NEAR(transition_variance(0.5, 0.5), 0.0, 1e-15);
    EXPECT_NEAR(transition_variance(0.9, 0.9), 0.0, 1e-15);
}

TEST(TransitionVariance, RejectsBadArguments) {
    EXPECT_THROW(transition_variance(0.0, 0.0), ContractError);
    EXPECT_THROW(transition_variance(0.3, 0.5), ContractError);
    EXPECT_THROW(transition_variance(1.5, 0.5), ContractError);
    EXPECT_THROW(transition_variance(1.0, 1.0), ContractError);  // alpha_s = 0
}

TEST(TransitionVariance, BoundedBySigmaS) {
    for (int i = 1; i <= 50; ++i)
        for (int j = 0; j < i; ++j) {
            const double t = i / 50.0 * 0.999, s = j / 50.0 * 0.999;
            const double v = transition_variance(t, s);
            const double ss = cosine_level(s).sigma;
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, ss * ss + 1e-15);
        }
}

TEST(UniformGrid, Examples) {
    EXPECT_EQ(uniform_grid(1, 1.0, 0.0).times(), (std::vector<double>{1.0, 0.0}));
    EXPECT_EQ(uniform_grid(4, 1.0, 0.0).times(), (std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0}));
    const auto g = uniform_grid(2, 0.9, 0.1);
    ASSERT_EQ(g.times().size(), 3u);
    EXPECT_NEAR(g[0], 0.9, 1e-15);
    EXPECT_NEAR(g[1], 0.5, 1e-15);
    EXPECT_NEAR(g[2], 0.1, 1e-15);
}

TEST(UniformGrid, EndpointsAreExactAndStrictlyDecreasing) {
    for (std::size_t n : {1u, 7u, 50u, 500u}) {
        const auto g = uniform_grid(n);
        EXPECT_EQ(g.steps(), n);
        EXPECT_EQ(g.t_max(), kDefaultTMax);
        EXPECT_EQ(g.t_min(), kDefaultTMin);
        for (std::size_t i = 0; i < n; ++i) EXPECT_GT(g[i], g[i + 1]);
    }
}

TEST(UniformGrid, RejectsBadArguments) {
    EXPECT_THROW(uniform_grid(0), ContractError);
    EXPECT_THROW(uniform_grid(4, 0.2, 0.5), ContractError);
    EXPECT_THROW(uniform_grid(4, 1.2, 0.0), ContractError);
    EXPECT_THROW(uniform_grid(4, 0.5, -0.1), ContractError);
    EXPECT_THROW(TimestepGrid({0.5, 0.5}), ContractError);
    EXPECT_THROW(TimestepGrid({0.5}), ContractError);
}
