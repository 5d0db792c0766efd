// Continuous-time cosine noise schedule and the coefficients derived from it.
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cdiff/core.hpp"

namespace cdiff {

/// (alpha_t, sigma_t) at time t. alpha^2 + sigma^2 = 1.
struct NoiseLevel {
    double t = 0.0;
    double alpha = 1.0;
    double sigma = 0.0;

    double snr() const { return (alpha * alpha) / (sigma * sigma); }
};

/// alpha_t = cos(pi t / 2), sigma_t = sin(pi t / 2), t in [0, 1].
inline NoiseLevel cosine_level(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("cosine_level: t out of [0,1]: " + std::to_string(t));
    // Pin the endpoints; cos(pi/2) is not exactly zero in floating point.
    if (t == 0.0) return {0.0, 1.0, 0.0};
    if (t == 1.0) return {1.0, 0.0, 1.0};
    const double angle = 0.5 * std::numbers::pi * t;
    return {t, std::cos(angle), std::sin(angle)};
}

/// Reverse-process variance for a step t -> s:
/// (sigma_s^2 / sigma_t^2) * (1 - alpha_t^2 / alpha_s^2).
inline double transition_variance(double t, double s) {
    if (!(s >= 0.0 && s <= t && t <= 1.0)) throw ContractError("transition_variance: need 0 <= s <= t <= 1");
    if (t == 0.0) throw ContractError("transition_variance: t = 0 gives sigma_t = 0");
    const NoiseLevel lt = cosine_level(t);
    const NoiseLevel ls = cosine_level(s);
    if (ls.alpha == 0.0) throw ContractError("transition_variance: alpha_s = 0 (s = 1)");
    const double v = (ls.sigma * ls.sigma) / (lt.sigma * lt.sigma) *
                     (1.0 - (lt.alpha * lt.alpha) / (ls.alpha * ls.alpha));
    return v > 0.0 ? v : 0.0;
}

/// Strictly decreasing list of times t_N > ... > t_0.
class TimestepGrid {
public:
    explicit TimestepGrid(std::vector<double> times) : times_(std::move(times)) {
        require(times_.size() >= 2, "TimestepGrid: need at least two times");
        for (std::size_t i = 0; i < times_.size(); ++i) {
            require(times_[i] >= 0.0 && times_[i] <= 1.0, "TimestepGrid: times must lie in [0,1]");
            if (i > 0) require(times_[i] < times_[i - 1], "TimestepGrid: times must be strictly decreasing");
        }
        require(times_.front() > 0.0, "TimestepGrid: t_max must be positive");
    }

    /// Number of steps N (one fewer than the number of times).
    std::size_t steps() const noexcept { return times_.size() - 1; }
    const std::vector<double>& times() const noexcept { return times_; }
    double operator[](std::size_t i) const { return times_[i]; }
    double t_max() const noexcept { return times_.front(); }
    double t_min() const noexcept { return times_.back(); }

private:
    std::vector<double> times_;
};

inline constexpr double kDefaultTMax = 1.0 - 1e-4;
inline constexpr double kDefaultTMin = 0.0;

/// N + 1 equally spaced times from t_max down to t_min.
inline TimestepGrid uniform_grid(std::size_t n, double t_max = kDefaultTMax, double t_min = kDefaultTMin) {
    require(n >= 1, "uniform_grid: N must be >= 1");
    require(t_min >= 0.0 && t_min < t_max && t_max <= 1.0, "uniform_grid: need 0 <= t_min < t_max <= 1");
    std::vector<double> times(n + 1);
    const double span = t_max - t_min;
    for (std::size_t i = 0; i <= n; ++i)
        times[i] = t_max - span * static_cast<double>(i) / static_cast<double>(n);
    times[n] = t_min;
    return TimestepGrid(std::move(times));
}

}  // namespace cdiff
