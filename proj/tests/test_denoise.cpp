#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cdiff/denoise.hpp"
#include "oracles.hpp"

using namespace cdiff;

namespace {
constexpr double kHalfSqrt2 = 0.70710678118654757;

Eigen::MatrixXd random_spd(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = d(rng);
    return a * a.transpose() / static_cast<double>(n) + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

// Posterior mean of N(m, S) given x_t = alpha x0 + sigma z, via a dense solve.
Vec dense_posterior_mean(const Vec& m, const Eigen::MatrixXd& S, const Vec& xt, double t) {
    const auto l = cosine_level(t);
    const auto n = static_cast<Eigen::Index>(m.size());
    Eigen::Map<const Eigen::VectorXd> mv(m.data(), n), xv(xt.data(), n);
    const Eigen::MatrixXd K = l.alpha * l.alpha * S + l.sigma * l.sigma * Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd out = mv + l.alpha * S * K.ldlt().solve(xv - l.alpha * mv);
    return Vec(out.data(), out.data() + n);
}
}  // namespace

TEST(Conversions, ForwardNoiseExamples) {
    const Vec x0{0.3, -1.2, 2.0}, z{1.0, 0.5, -0.7};
    EXPECT_EQ(forward_noise(x0, 0.0, z), x0);
    EXPECT_EQ(forward_noise(x0, 1.0, z), z);
    const Vec zero(3, 0.0);
    const Vec h = forward_noise(zero, 0.5, z);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(h[i], kHalfSqrt2 * z[i], 1e-15);
    EXPECT_THROW(forward_noise(x0, 0.5, Vec{1.0}), ContractError);
}

TEST(Conversions, VTargetExamples) {
    const Vec x0{0.3, -1.2}, eps{1.0, 0.5};
    EXPECT_EQ(v_target(x0, eps, 0.0), eps);
    EXPECT_EQ(v_target(x0, eps, 1.0), (Vec{-0.3, 1.2}));
    for (double v : v_target(x0, x0, 0.5)) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Conversions, X0FromVExamples) {
    const Vec xt{0.4, -0.1}, v{2.0, 3.0};
    EXPECT_EQ(x0_from_v(xt, v, 0.0), xt);
    EXPECT_EQ(x0_from_v(xt, v, 1.0), (Vec{-2.0, -3.0}));
}

TEST(Conversions, EpsFromX0Examples) {
    const Vec xt{0.4, -0.1}, x0{5.0, 6.0};
    EXPECT_EQ(eps_from_x0(xt, x0, 1.0), xt);
    // (c - c sqrt(2)/2) / (sqrt(2)/2) = c (sqrt(2) - 1), frozen from a 50-digit evaluation.
    const Vec c(4, 1.7);
    for (double e : eps_from_x0(c, c, 0.5)) EXPECT_NEAR(e, 1.7 * 0.41421356237309503, 1e-14);
    EXPECT_THROW(eps_from_x0(xt, x0, 0.0), ContractError);
}

TEST(Conversions, ParameterizationTriangle) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ut(1e-6, 1.0 - 1e-6);
    for (int i = 0; i < 1000; ++i) {
        const Vec x0 = oracle::randn(6, rng), z = oracle::randn(6, rng);
        const double t = ut(rng);
        const Vec xt = forward_noise(x0, t, z);
        const Vec v = v_target(x0, z, t);
        EXPECT_LE(max_abs_diff(x0_from_v(xt, v, t), x0), 1e-9);
        EXPECT_LE(max_abs_diff(eps_from_x0(xt, x0, t), z), 1e-9);
        EXPECT_LE(max_abs_diff(v_from_x0(xt, x0, t), v), 1e-9);
    }
}

TEST(GaussianDenoiser, DiracPriorReturnsMean) {
    const Vec m{0.5, -0.25, 2.0};
    auto den = gaussian_denoiser(GaussianPrior::isotropic(m, 0.0));
    std::mt19937_64 rng(1);
    for (double t : {0.1, 0.5, 0.9, 1.0}) EXPECT_LE(max_abs_diff(den->predict_x0(oracle::randn(3, rng), t), m), 1e-15);
}

TEST(GaussianDenoiser, StandardPriorShrinksByAlpha) {
    auto den = gaussian_denoiser(GaussianPrior::isotropic(Vec(4, 0.0), 1.0));
    std::mt19937_64 rng(2);
    for (double t : {0.05, 0.3, 0.7}) {
        const Vec xt = oracle::randn(4, rng);
        const Vec x0 = den->predict_x0(xt, t);
        const double a = cosine_level(t).alpha;
        for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x0[i], a * xt[i], 1e-14);
    }
}

TEST(GaussianDenoiser, StandardPriorMatchesMonteCarlo) {
    // E[x0 | x_t] estimated by binning joint draws of (x0, x_t) near a probe.
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    const double t = 0.4, probe = 0.8, half_width = 0.02;
    const auto l = cosine_level(t);
    double sum = 0.0;
    std::size_t hits = 0;
    for (int i = 0; i < 2000000; ++i) {
        const double x0 = nd(rng), xt = l.alpha * x0 + l.sigma * nd(rng);
        if (std::abs(xt - probe) < half_width) {
            sum += x0;
            ++hits;
        }
    }
    auto den = gaussian_denoiser(GaussianPrior::isotropic(Vec{0.0}, 1.0));
    EXPECT_NEAR(den->predict_x0(Vec{probe}, t)[0], sum / static_cast<double>(hits), 0.01);
}

TEST(GaussianDenoiser, FrozenScalarExample) {
    auto den = gaussian_denoiser(GaussianPrior::isotropic(Vec{1.0}, 1.0));
    EXPECT_NEAR(den->predict_x0(Vec{kHalfSqrt2}, 0.5)[0], 1.0, 1e-14);
}

TEST(GaussianDenoiser, FullAndAr1MatchDenseSolve) {
    std::mt19937_64 rng(4);
    const std::size_t n = 9;
    const Vec m = oracle::randn(n, rng);
    const Eigen::MatrixXd S = random_spd(n, rng);
    auto full = gaussian_denoiser(GaussianPrior::full(m, S));
    auto ar1 = gaussian_denoiser(GaussianPrior::ar1(m, 0.9, 0.7));
    const Eigen::MatrixXd S_ar = GaussianPrior::ar1(m, 0.9, 0.7).dense_covariance();
    Vec diag_var(n);
    for (std::size_t i = 0; i < n; ++i) diag_var[i] = 0.2 + 0.1 * static_cast<double>(i);
    auto diag = gaussian_denoiser(GaussianPrior::diagonal(m, diag_var));
    const Eigen::MatrixXd S_diag = Eigen::Map<const Eigen::VectorXd>(diag_var.data(), n).asDiagonal();
    for (double t : {0.02, 0.3, 0.77, 1.0}) {
        const Vec xt = oracle::randn(n, rng);
        EXPECT_LE(max_abs_diff(full->predict_x0(xt, t), dense_posterior_mean(m, S, xt, t)), 1e-10);
        EXPECT_LE(max_abs_diff(ar1->predict_x0(xt, t), dense_posterior_mean(m, S_ar, xt, t)), 1e-10);
        EXPECT_LE(max_abs_diff(diag->predict_x0(xt, t), dense_posterior_mean(m, S_diag, xt, t)), 1e-12);
    }
}

TEST(GaussianDenoiser, RejectsBadPriors) {
    Eigen::MatrixXd asym(2, 2);
    asym << 1.0, 0.5, 0.0, 1.0;
    EXPECT_THROW(GaussianDenoiser(GaussianPrior::full({0, 0}, asym)), ContractError);
    Eigen::MatrixXd indef(2, 2);
    indef << 1.0, 2.0, 2.0, 1.0;
    EXPECT_THROW(GaussianDenoiser(GaussianPrior::full({0, 0}, indef)), ContractError);
    EXPECT_THROW(GaussianDenoiser(GaussianPrior::ar1({0, 0}, 1.0)), ContractError);
    EXPECT_THROW(GaussianDenoiser(GaussianPrior::diagonal({0, 0}, {1.0, -1.0})), ContractError);
    auto den = gaussian_denoiser(GaussianPrior::isotropic({0, 0}, 1.0));
    EXPECT_THROW(den->predict_v(Vec{1.0}, 0.5), ContractError);
    EXPECT_THROW(den->predict_v(Vec{1.0, 2.0}, 0.0), ContractError);
}

TEST(GaussianDenoiser, VjpMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> ut(0.05, 0.95);
    const std::size_t n = 6;
    const Vec m = oracle::randn(n, rng);
    std::vector<std::shared_ptr<const Denoiser>> dens{gaussian_denoiser(GaussianPrior::full(m, random_spd(n, rng))),
                                                      gaussian_denoiser(GaussianPrior::ar1(m, 0.8, 0.5))};
    for (int probe = 0; probe < 100; ++probe) {
        const auto& den = dens[probe % 2];
        const Vec xt = oracle::randn(n, rng), c = oracle::randn(n, rng);
        const double t = ut(rng);
        auto f = [&](const Vec& x) { return dot(c, den->predict_v(x, t)); };
        EXPECT_LT(oracle::rel_err(den->vjp(xt, t, c), oracle::fd_gradient(f, xt)), 1e-5);
    }
}

TEST(GmmDenoiser, SingleComponentMatchesGaussian) {
    const Vec m{0.3, -0.4, 1.0};
    auto gmm = gmm_denoiser({1.0}, {m}, 0.6);
    auto gauss = gaussian_denoiser(GaussianPrior::isotropic(m, 0.6));
    std::mt19937_64 rng(7);
    for (double t : {0.1, 0.5, 0.9}) {
        const Vec xt = oracle::randn(3, rng), c = oracle::randn(3, rng);
        EXPECT_LE(max_abs_diff(gmm->predict_v(xt, t), gauss->predict_v(xt, t)), 1e-12);
        EXPECT_LE(max_abs_diff(gmm->vjp(xt, t, c), gauss->vjp(xt, t, c)), 1e-12);
    }
}

TEST(GmmDenoiser, SymmetricMixtureAtOrigin) {
    auto den = gmm_denoiser({0.5, 0.5}, {{1.5}, {-1.5}}, 0.1);
    for (double t : {0.2, 0.5, 0.8}) EXPECT_NEAR(den->predict_x0(Vec{0.0}, t)[0], 0.0, 1e-15);
}

TEST(GmmDenoiser, FarInOneBasin) {
    const Vec w{0.4, 0.6}, mu{-1.0, 1.0};
    const double var = 0.05, t = 0.3;
    auto den = gmm_denoiser(w, {{mu[0]}, {mu[1]}}, var);
    const auto l = cosine_level(t);
    const double xt = 3.0 * l.alpha;
    const double component = mu[1] + l.alpha * var / (l.alpha * l.alpha * var + l.sigma * l.sigma) * (xt - l.alpha * mu[1]);
    EXPECT_NEAR(den->predict_x0(Vec{xt}, t)[0], component, var);
    EXPECT_NEAR(den->predict_x0(Vec{xt}, t)[0],
                oracle::gmm_posterior_mean_quadrature(w, mu, var, l.alpha, l.sigma, xt), 1e-4);
}

TEST(GmmDenoiser, MatchesQuadrature) {
    const Vec w{0.3, 0.5, 0.2}, mu{-0.8, 0.1, 1.2};
    const double var = 0.04;
    auto den = gmm_denoiser(w, {{mu[0]}, {mu[1]}, {mu[2]}}, var);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> ut(0.05, 0.95), ux(-2.0, 2.0);
    for (int i = 0; i < 40; ++i) {
        const double t = ut(rng), xt = ux(rng);
        const auto l = cosine_level(t);
        EXPECT_NEAR(den->predict_x0(Vec{xt}, t)[0],
                    oracle::gmm_posterior_mean_quadrature(w, mu, var, l.alpha, l.sigma, xt), 1e-4)
            << "t=" << t << " x=" << xt;
    }
}

TEST(GmmDenoiser, VjpMatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ut(0.1, 0.9);
    const std::size_t n = 5;
    auto den = gmm_denoiser({0.2, 0.5, 0.3}, {oracle::randn(n, rng), oracle::randn(n, rng), oracle::randn(n, rng)}, 0.3);
    for (int probe = 0; probe < 100; ++probe) {
        const Vec xt = oracle::randn(n, rng), c = oracle::randn(n, rng);
        const double t = ut(rng);
        auto f = [&](const Vec& x) { return dot(c, den->predict_v(x, t)); };
        EXPECT_LT(oracle::rel_err(den->vjp(xt, t, c), oracle::fd_gradient(f, xt)), 1e-5);
    }
}

TEST(GmmDenoiser, RejectsBadMixtures) {
    EXPECT_THROW(GmmDenoiser({0.5, 0.6}, {{0.0}, {1.0}}, 0.1), ContractError);
    EXPECT_THROW(GmmDenoiser({1.0}, {{0.0}, {1.0}}, 0.1), ContractError);
    EXPECT_THROW(GmmDenoiser({1.0}, {{0.0}}, 0.0), ContractError);
    EXPECT_THROW(GmmDenoiser({0.5, 0.5}, {{0.0}, {1.0, 2.0}}, 0.1), ContractError);
}
