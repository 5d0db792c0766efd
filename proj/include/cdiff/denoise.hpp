// v-prediction denoiser contract, parameterization conversions and exact
// analytic denoisers for Gaussian and Gaussian-mixture data.
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <variant>

#include <Eigen/Dense>

#include "cdiff/core.hpp"
#include "cdiff/schedule.hpp"

namespace cdiff {

// ---------------------------------------------------------------------------
// Parameterization conversions. All take the schedule time t.

/// x_t = alpha_t x0 + sigma_t z
inline Vec forward_noise(std::span<const double> x0, double t, std::span<const double> z) {
    require_same_length(x0, z, "forward_noise");
    const NoiseLevel l = cosine_level(t);
    return lincomb(l.alpha, x0, l.sigma, z);
}

/// v = alpha_t eps - sigma_t x0
inline Vec v_target(std::span<const double> x0, std::span<const double> eps, double t) {
    require_same_length(x0, eps, "v_target");
    const NoiseLevel l = cosine_level(t);
    return lincomb(l.alpha, eps, -l.sigma, x0);
}

/// x0_hat = alpha_t x_t - sigma_t v
inline Vec x0_from_v(std::span<const double> x_t, std::span<const double> v, double t) {
    require_same_length(x_t, v, "x0_from_v");
    const NoiseLevel l = cosine_level(t);
    return lincomb(l.alpha, x_t, -l.sigma, v);
}

/// eps_hat = (x_t - alpha_t x0_hat) / sigma_t
inline Vec eps_from_x0(std::span<const double> x_t, std::span<const double> x0_hat, double t) {
    require_same_length(x_t, x0_hat, "eps_from_x0");
    const NoiseLevel l = cosine_level(t);
    if (l.sigma == 0.0) throw ContractError("eps_from_x0: sigma_t = 0 at t = 0");
    Vec out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - l.alpha * x0_hat[i]) / l.sigma;
    return out;
}

/// v implied by a clean-signal estimate: v = (alpha_t x_t - x0_hat) / sigma_t.
inline Vec v_from_x0(std::span<const double> x_t, std::span<const double> x0_hat, double t) {
    require_same_length(x_t, x0_hat, "v_from_x0");
    const NoiseLevel l = cosine_level(t);
    if (l.sigma == 0.0) throw ContractError("v_from_x0: sigma_t = 0 at t = 0");
    Vec out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (l.alpha * x_t[i] - x0_hat[i]) / l.sigma;
    return out;
}

// ---------------------------------------------------------------------------

/// A v-prediction model. Implementations are immutable once built and may be
/// shared between concurrent sampler runs.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    /// Input length this denoiser accepts, or 0 when any length is accepted.
    virtual std::size_t dim() const = 0;

    virtual Vec predict_v(std::span<const double> x_t, double t) const = 0;

    /// Gradient of <cotangent, predict_v(x_t, t)> with respect to x_t.
    virtual Vec vjp(std::span<const double> x_t, double t, std::span<const double> cotangent) const = 0;

    virtual bool supports_vjp() const { return true; }

    /// Clean-signal estimate alpha_t x_t - sigma_t v.
    virtual Vec predict_x0(std::span<const double> x_t, double t) const {
        return x0_from_v(x_t, predict_v(x_t, t), t);
    }

protected:
    void check_input(std::span<const double> x_t, double t) const {
        if (dim() != 0 && x_t.size() != dim())
            throw ContractError("denoiser: input length " + std::to_string(x_t.size()) + " != " +
                                std::to_string(dim()));
        if (!(t > 0.0 && t <= 1.0)) throw ContractError("denoiser: t must lie in (0, 1]");
    }
};

/// Denoisers that know their posterior mean in closed form. v and its
/// vector-Jacobian product follow from E[x0 | x_t] and its Jacobian.
class PosteriorMeanDenoiser : public Denoiser {
public:
    Vec predict_v(std::span<const double> x_t, double t) const override {
        check_input(x_t, t);
        return v_from_x0(x_t, posterior_mean(x_t, t), t);
    }

    Vec predict_x0(std::span<const double> x_t, double t) const override {
        check_input(x_t, t);
        return posterior_mean(x_t, t);
    }

    Vec vjp(std::span<const double> x_t, double t, std::span<const double> cotangent) const override {
        check_input(x_t, t);
        require_same_length(x_t, cotangent, "denoiser vjp");
        const NoiseLevel l = cosine_level(t);
        Vec jt = posterior_mean_vjp(x_t, t, cotangent);
        for (std::size_t i = 0; i < jt.size(); ++i) jt[i] = (l.alpha * cotangent[i] - jt[i]) / l.sigma;
        return jt;
    }

    virtual Vec posterior_mean(std::span<const double> x_t, double t) const = 0;
    /// J^T c where J = d E[x0 | x_t] / d x_t.
    virtual Vec posterior_mean_vjp(std::span<const double> x_t, double t, std::span<const double> c) const = 0;
};

// ---------------------------------------------------------------------------

/// Stationary AR(1) covariance: Sigma_ij = variance * rho^|i-j|.
struct Ar1Covariance {
    std::size_t n = 0;
    double rho = 0.0;
    double variance = 1.0;

    Eigen::MatrixXd dense() const {
        Eigen::MatrixXd s(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                s(i, j) = variance * std::pow(rho, std::abs(static_cast<double>(i) - static_cast<double>(j)));
        return s;
    }
};

/// Gaussian data model N(mean, covariance). Covariance is diagonal, dense
/// symmetric PSD, or AR(1).
struct GaussianPrior {
    Vec mean;
    std::variant<Vec, Eigen::MatrixXd, Ar1Covariance> covariance;

    static GaussianPrior diagonal(Vec mean, Vec variances) {
        return GaussianPrior{std::move(mean), std::move(variances)};
    }
    static GaussianPrior isotropic(Vec mean, double variance) {
        Vec v(mean.size(), variance);
        return diagonal(std::move(mean), std::move(v));
    }
    static GaussianPrior full(Vec mean, Eigen::MatrixXd cov) { return GaussianPrior{std::move(mean), std::move(cov)}; }
    static GaussianPrior ar1(Vec mean, double rho, double variance = 1.0) {
        const std::size_t n = mean.size();
        return GaussianPrior{std::move(mean), Ar1Covariance{n, rho, variance}};
    }

    std::size_t dim() const { return mean.size(); }

    Eigen::MatrixXd dense_covariance() const {
        const auto n = static_cast<Eigen::Index>(dim());
        if (const auto* d = std::get_if<Vec>(&covariance)) {
            Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
            for (Eigen::Index i = 0; i < n; ++i) s(i, i) = (*d)[static_cast<std::size_t>(i)];
            return s;
        }
        if (const auto* a = std::get_if<Ar1Covariance>(&covariance)) return a->dense();
        return std::get<Eigen::MatrixXd>(covariance);
    }
};

/// Exact denoiser for Gaussian data:
/// E[x0 | x_t] = m + alpha Sigma (alpha^2 Sigma + sigma^2 I)^{-1} (x_t - alpha m).
///
/// Dense covariances are eigendecomposed once at construction so each call is
/// a pair of matrix-vector products; AR(1) uses its tridiagonal precision so
/// the cost is linear in length.
class GaussianDenoiser final : public PosteriorMeanDenoiser {
public:
    explicit GaussianDenoiser(GaussianPrior prior) : prior_(std::move(prior)) {
        const std::size_t n = prior_.dim();
        require(n > 0, "GaussianDenoiser: empty prior");
        require(all_finite(prior_.mean), "GaussianDenoiser: non-finite mean");
        if (const auto* d = std::get_if<Vec>(&prior_.covariance)) {
            require(d->size() == n, "GaussianDenoiser: variance length mismatch");
            for (double v : *d) require(v >= 0.0 && std::isfinite(v), "GaussianDenoiser: variances must be >= 0");
        } else if (const auto* a = std::get_if<Ar1Covariance>(&prior_.covariance)) {
            require(a->n == n, "GaussianDenoiser: AR(1) length mismatch");
            require(std::abs(a->rho) < 1.0, "GaussianDenoiser: AR(1) needs |rho| < 1");
            require(a->variance > 0.0, "GaussianDenoiser: AR(1) variance must be positive");
        } else {
            const auto& s = std::get<Eigen::MatrixXd>(prior_.covariance);
            require(s.rows() == static_cast<Eigen::Index>(n) && s.cols() == s.rows(),
                    "GaussianDenoiser: covariance shape mismatch");
            require((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + s.cwiseAbs().maxCoeff()),
                    "GaussianDenoiser: covariance must be symmetric");
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
            require(es.info() == Eigen::Success, "GaussianDenoiser: eigendecomposition failed");
            const double tol = -1e-10 * (1.0 + es.eigenvalues().cwiseAbs().maxCoeff());
            require(es.eigenvalues().minCoeff() >= tol, "GaussianDenoiser: covariance must be PSD");
            basis_ = es.eigenvectors();
            eigenvalues_ = es.eigenvalues().cwiseMax(0.0);
        }
    }

    std::size_t dim() const override { return prior_.dim(); }
    const GaussianPrior& prior() const { return prior_; }

    Vec posterior_mean(std::span<const double> x_t, double t) const override {
        const NoiseLevel l = cosine_level(t);
        Vec r(x_t.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = x_t[i] - l.alpha * prior_.mean[i];
        Vec g = apply_gain(r, l);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += prior_.mean[i];
        return g;
    }

    Vec posterior_mean_vjp(std::span<const double>, double t, std::span<const double> c) const override {
        // The gain alpha Sigma (alpha^2 Sigma + sigma^2 I)^{-1} is symmetric.
        return apply_gain(c, cosine_level(t));
    }

private:
    Vec apply_gain(std::span<const double> r, const NoiseLevel& l) const {
        const double a = l.alpha;
        const double s2 = l.sigma * l.sigma;
        const std::size_t n = r.size();
        Vec out(n);
        if (const auto* d = std::get_if<Vec>(&prior_.covariance)) {
            for (std::size_t i = 0; i < n; ++i) {
                const double lam = (*d)[i];
                out[i] = a * lam / (a * a * lam + s2) * r[i];
            }
            return out;
        }
        if (const auto* ar = std::get_if<Ar1Covariance>(&prior_.covariance)) return ar1_gain(*ar, r, a, s2);
        Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(n));
        Eigen::VectorXd proj = basis_.transpose() * rv;
        for (Eigen::Index i = 0; i < proj.size(); ++i) {
            const double lam = eigenvalues_(i);
            proj(i) *= a * lam / (a * a * lam + s2);
        }
        Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(n)) = basis_ * proj;
        return out;
    }

    // alpha Sigma (alpha^2 Sigma + sigma^2 I)^{-1} = alpha (alpha^2 I + sigma^2 Q)^{-1}
    // with Q = Sigma^{-1} tridiagonal. Solved with the Thomas algorithm.
    static Vec ar1_gain(const Ar1Covariance& ar, std::span<const double> r, double a, double s2) {
        const std::size_t n = r.size();
        const double q = 1.0 / (ar.variance * (1.0 - ar.rho * ar.rho));
        const double off = s2 * (-ar.rho * q);
        auto diag = [&](std::size_t i) {
            const double qi = (n == 1) ? 1.0 / ar.variance
                                       : ((i == 0 || i + 1 == n) ? q : q * (1.0 + ar.rho * ar.rho));
            return a * a + s2 * qi;
        };
        Vec c_prime(n), d_prime(n);
        double b0 = diag(0);
        c_prime[0] = off / b0;
        d_prime[0] = r[0] / b0;
        for (std::size_t i = 1; i < n; ++i) {
            const double m = diag(i) - off * c_prime[i - 1];
            c_prime[i] = off / m;
            d_prime[i] = (r[i] - off * d_prime[i - 1]) / m;
        }
        Vec out(n);
        out[n - 1] = d_prime[n - 1];
        for (std::size_t i = n - 1; i-- > 0;) out[i] = d_prime[i] - c_prime[i] * out[i + 1];
        for (double& v : out) v *= a;
        return out;
    }

    GaussianPrior prior_;
    Eigen::MatrixXd basis_;
    Eigen::VectorXd eigenvalues_;
};

/// Exact denoiser for a mixture of isotropic Gaussians sum_k w_k N(mu_k, var I).
class GmmDenoiser final : public PosteriorMeanDenoiser {
public:
    GmmDenoiser(Vec weights, std::vector<Vec> means, double variance)
        : weights_(std::move(weights)), means_(std::move(means)), variance_(variance) {
        require(!means_.empty(), "GmmDenoiser: empty mixture");
        require(weights_.size() == means_.size(), "GmmDenoiser: weight/mean count mismatch");
        require(variance_ > 0.0 && std::isfinite(variance_), "GmmDenoiser: variance must be positive");
        double total = 0.0;
        for (double w : weights_) {
            require(w >= 0.0, "GmmDenoiser: weights must be non-negative");
            total += w;
        }
        require(std::abs(total - 1.0) < 1e-9, "GmmDenoiser: weights must sum to 1");
        dim_ = means_.front().size();
        require(dim_ > 0, "GmmDenoiser: zero-dimensional means");
        for (const auto& m : means_) require(m.size() == dim_, "GmmDenoiser: mean dimension mismatch");
    }

    std::size_t dim() const override { return dim_; }
    const Vec& weights() const { return weights_; }
    const std::vector<Vec>& means() const { return means_; }
    double variance() const { return variance_; }

    /// Posterior responsibility of each component given x_t.
    Vec responsibilities(std::span<const double> x_t, double t) const {
        const NoiseLevel l = cosine_level(t);
        const double tau = l.alpha * l.alpha * variance_ + l.sigma * l.sigma;
        Vec logw(means_.size());
        for (std::size_t k = 0; k < means_.size(); ++k) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < dim_; ++i) {
                const double r = x_t[i] - l.alpha * means_[k][i];
                d2 += r * r;
            }
            logw[k] = (weights_[k] > 0.0 ? std::log(weights_[k]) : -INFINITY) - 0.5 * d2 / tau;
        }
        const double mx = *std::max_element(logw.begin(), logw.end());
        double z = 0.0;
        for (double& v : logw) {
            v = std::exp(v - mx);
            z += v;
        }
        for (double& v : logw) v /= z;
        return logw;
    }

    Vec posterior_mean(std::span<const double> x_t, double t) const override {
        const NoiseLevel l = cosine_level(t);
        const double gain = l.alpha * variance_ / (l.alpha * l.alpha * variance_ + l.sigma * l.sigma);
        const Vec r = responsibilities(x_t, t);
        Vec out(dim_, 0.0);
        for (std::size_t k = 0; k < means_.size(); ++k)
            for (std::size_t i = 0; i < dim_; ++i)
                out[i] += r[k] * (means_[k][i] + gain * (x_t[i] - l.alpha * means_[k][i]));
        return out;
    }

    // J = gain I + sum_k r_k m_k (g_k - gbar)^T with g_k = -(x_t - alpha mu_k) / tau.
    Vec posterior_mean_vjp(std::span<const double> x_t, double t, std::span<const double> c) const override {
        const NoiseLevel l = cosine_level(t);
        const double tau = l.alpha * l.alpha * variance_ + l.sigma * l.sigma;
        const double gain = l.alpha * variance_ / tau;
        const Vec r = responsibilities(x_t, t);
        const std::size_t kc = means_.size();
        std::vector<Vec> g(kc, Vec(dim_));
        Vec gbar(dim_, 0.0);
        Vec mc(kc, 0.0);
        for (std::size_t k = 0; k < kc; ++k) {
            for (std::size_t i = 0; i < dim_; ++i) {
                g[k][i] = -(x_t[i] - l.alpha * means_[k][i]) / tau;
                gbar[i] += r[k] * g[k][i];
                const double mk = means_[k][i] + gain * (x_t[i] - l.alpha * means_[k][i]);
                mc[k] += mk * c[i];
            }
        }
        Vec out = scaled(gain, c);
        for (std::size_t k = 0; k < kc; ++k)
            for (std::size_t i = 0; i < dim_; ++i) out[i] += r[k] * mc[k] * (g[k][i] - gbar[i]);
        return out;
    }

private:
    Vec weights_;
    std::vector<Vec> means_;
    double variance_;
    std::size_t dim_ = 0;
};

inline std::shared_ptr<const Denoiser> gaussian_denoiser(GaussianPrior prior) {
    return std::make_shared<const GaussianDenoiser>(std::move(prior));
}

inline std::shared_ptr<const Denoiser> gmm_denoiser(Vec weights, std::vector<Vec> means, double variance) {
    return std::make_shared<const GmmDenoiser>(std::move(weights), std::move(means), variance);
}

}  // namespace cdiff
