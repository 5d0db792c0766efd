// Shared vocabulary types and small vector helpers for the cdiff library.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cdiff {

using Vec = std::vector<double>;

/// Raised when a caller violates an operation's precondition.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces non-finite values. Carries the sampler
/// step index when one is known.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what, std::optional<std::size_t> step = std::nullopt)
        : std::runtime_error(what), step_(step) {}

    std::optional<std::size_t> step() const noexcept { return step_; }

private:
    std::optional<std::size_t> step_;
};

// Warnings go through a replaceable sink so tests can observe them.
inline std::function<void(const std::string&)>& warning_sink() {
    static std::function<void(const std::string&)> sink = [](const std::string& m) {
        std::cerr << "warning: " << m << '\n';
    };
    return sink;
}
inline void warn(const std::string& message) {
    if (warning_sink()) warning_sink()(message);
}

inline void require(bool ok, const std::string& message) {
    if (!ok) throw ContractError(message);
}

/// A finite real-valued sample vector. sample_rate is 0 for abstract vectors.
struct Signal {
    Vec samples;
    double sample_rate = 0.0;

    Signal() = default;
    explicit Signal(Vec s, double rate = 0.0) : samples(std::move(s)), sample_rate(rate) {}

    std::size_t size() const noexcept { return samples.size(); }
    double duration() const noexcept {
        return sample_rate > 0.0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

inline bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void validate_signal(const Signal& s) {
    require(!s.samples.empty(), "signal must be non-empty");
    require(all_finite(s.samples), "signal contains non-finite samples");
    require(s.sample_rate >= 0.0, "signal sample rate must be non-negative");
}

inline void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size())
        throw ContractError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// a*x + b*y, elementwise.
inline Vec lincomb(double a, std::span<const double> x, double b, std::span<const double> y) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

inline Vec scaled(double a, std::span<const double> x) {
    Vec out(x.begin(), x.end());
    for (double& v : out) v *= a;
    return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace cdiff
