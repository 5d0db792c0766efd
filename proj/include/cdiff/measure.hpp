// Measurement operators, distances, constant-power crossfades and the exact
// data-consistency projection for row-selection masks.
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "cdiff/core.hpp"

namespace cdiff {

enum class MaskKind { left_context, right_context, infill_union };

/// Row-selection operator A built from identity blocks. Rows pick the first
/// C_L samples (left), the last C_R samples (right), or both in that order.
/// A A^T = I by construction.
class LinearMask {
public:
    LinearMask(MaskKind kind, std::size_t left, std::size_t right, std::size_t n)
        : kind_(kind), left_(left), right_(right), n_(n) {
        require(n_ > 0, "LinearMask: n must be positive");
        switch (kind_) {
            case MaskKind::left_context:
                require(right_ == 0, "LinearMask: left_context takes no right context");
                require(left_ >= 1 && left_ < n_, "LinearMask: need 1 <= C_L < n");
                break;
            case MaskKind::right_context:
                require(left_ == 0, "LinearMask: right_context takes no left context");
                require(right_ >= 1 && right_ < n_, "LinearMask: need 1 <= C_R < n");
                break;
            case MaskKind::infill_union:
                require(left_ >= 1 && right_ >= 1, "LinearMask: infill needs both contexts");
                require(left_ + right_ < n_, "LinearMask: need C_L + C_R < n");
                break;
        }
    }

    static LinearMask left(std::size_t c_left, std::size_t n) { return {MaskKind::left_context, c_left, 0, n}; }
    static LinearMask right(std::size_t c_right, std::size_t n) { return {MaskKind::right_context, 0, c_right, n}; }
    static LinearMask infill(std::size_t c_left, std::size_t c_right, std::size_t n) {
        return {MaskKind::infill_union, c_left, c_right, n};
    }

    MaskKind kind() const noexcept { return kind_; }
    std::size_t left_length() const noexcept { return left_; }
    std::size_t right_length() const noexcept { return right_; }
    std::size_t size() const noexcept { return n_; }
    std::size_t rows() const noexcept { return left_ + right_; }

    /// Column index selected by row r.
    std::size_t column(std::size_t r) const { return r < left_ ? r : n_ - right_ + (r - left_); }

    bool is_selected(std::size_t i) const noexcept { return i < left_ || i >= n_ - right_; }

    Vec apply(std::span<const double> x) const {
        require(x.size() == n_, "LinearMask::apply: length " + std::to_string(x.size()) + " != n");
        Vec out(rows());
        for (std::size_t r = 0; r < out.size(); ++r) out[r] = x[column(r)];
        return out;
    }

    /// A^T u: scatter u into a zero vector of length n.
    Vec adjoint(std::span<const double> u) const {
        require(u.size() == rows(), "LinearMask::adjoint: wrong measurement length");
        Vec out(n_, 0.0);
        for (std::size_t r = 0; r < u.size(); ++r) out[column(r)] = u[r];
        return out;
    }

    friend bool operator==(const LinearMask&, const LinearMask&) = default;

private:
    MaskKind kind_;
    std::size_t left_;
    std::size_t right_;
    std::size_t n_;
};

/// x + A^T (A A^T)^{-1} (y - A x). For a selection mask this writes y into the
/// selected coordinates and leaves the rest untouched.
inline Vec consistency_project(std::span<const double> x, std::span<const double> y, const LinearMask& mask) {
    require(x.size() == mask.size(), "consistency_project: signal length != mask size");
    require(y.size() == mask.rows(), "consistency_project: measurement length != mask rows");
    Vec out(x.begin(), x.end());
    for (std::size_t r = 0; r < y.size(); ++r) out[mask.column(r)] = y[r];
    return out;
}

// ---------------------------------------------------------------------------

/// A differentiable measurement map from a signal to an observation vector.
class MeasurementOp {
public:
    virtual ~MeasurementOp() = default;
    virtual std::size_t input_dim() const = 0;
    virtual std::size_t output_dim() const = 0;
    virtual Vec apply(std::span<const double> x) const = 0;
    /// J(x)^T cotangent.
    virtual Vec vjp(std::span<const double> x, std::span<const double> cotangent) const = 0;
    /// Non-null when the operator is a row-selection mask (projection allowed).
    virtual const LinearMask* selection() const { return nullptr; }
    bool is_linear_selection() const { return selection() != nullptr; }
};

class MaskOperator final : public MeasurementOp {
public:
    explicit MaskOperator(LinearMask mask) : mask_(mask) {}
    std::size_t input_dim() const override { return mask_.size(); }
    std::size_t output_dim() const override { return mask_.rows(); }
    Vec apply(std::span<const double> x) const override { return mask_.apply(x); }
    Vec vjp(std::span<const double> x, std::span<const double> c) const override {
        require(x.size() == mask_.size(), "MaskOperator::vjp: wrong signal length");
        return mask_.adjoint(c);
    }
    const LinearMask* selection() const override { return &mask_; }

private:
    LinearMask mask_;
};

namespace detail {
inline Eigen::MatrixXd seeded_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * normal(rng);
    return w;
}
}  // namespace detail

/// Fixed random projection followed by tanh: A(x) = tanh(W x).
class ToyEmbedder final : public MeasurementOp {
public:
    ToyEmbedder(std::uint64_t seed, std::size_t in_dim, std::size_t emb_dim) {
        require(in_dim >= 1 && emb_dim >= 1, "toy_embedder: dimensions must be positive");
        require(emb_dim <= in_dim, "toy_embedder: emb_dim must not exceed in_dim");
        weight_ = detail::seeded_matrix(seed, emb_dim, in_dim);
    }

    std::size_t input_dim() const override { return static_cast<std::size_t>(weight_.cols()); }
    std::size_t output_dim() const override { return static_cast<std::size_t>(weight_.rows()); }

    Vec apply(std::span<const double> x) const override {
        Eigen::VectorXd z = linear(x);
        Vec out(static_cast<std::size_t>(z.size()));
        for (Eigen::Index i = 0; i < z.size(); ++i) out[static_cast<std::size_t>(i)] = std::tanh(z(i));
        return out;
    }

    Vec vjp(std::span<const double> x, std::span<const double> c) const override {
        require(c.size() == output_dim(), "ToyEmbedder::vjp: wrong cotangent length");
        Eigen::VectorXd z = linear(x);
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double th = std::tanh(z(i));
            z(i) = (1.0 - th * th) * c[static_cast<std::size_t>(i)];
        }
        Eigen::VectorXd g = weight_.transpose() * z;
        return Vec(g.data(), g.data() + g.size());
    }

    const Eigen::MatrixXd& weight() const { return weight_; }

private:
    Eigen::VectorXd linear(std::span<const double> x) const {
        require(x.size() == input_dim(), "ToyEmbedder: wrong input length");
        return weight_ * Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    }

    Eigen::MatrixXd weight_;
};

/// Multi-label classifier: p(c_i | x) = sigmoid(w_i . x + b_i).
class ToyClassifier final : public MeasurementOp {
public:
    ToyClassifier(std::uint64_t seed, std::size_t in_dim, std::size_t classes)
        : ToyClassifier(detail::seeded_matrix(seed, classes, in_dim), Eigen::VectorXd::Zero(classes)) {
        require(in_dim >= 1, "toy_classifier: in_dim must be positive");
    }

    ToyClassifier(Eigen::MatrixXd weight, Eigen::VectorXd bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
        require(weight_.rows() >= 1, "toy_classifier: need at least one class");
        require(weight_.cols() >= 1, "toy_classifier: in_dim must be positive");
        require(bias_.size() == weight_.rows(), "toy_classifier: bias length mismatch");
    }

    std::size_t input_dim() const override { return static_cast<std::size_t>(weight_.cols()); }
    std::size_t output_dim() const override { return static_cast<std::size_t>(weight_.rows()); }

    Vec apply(std::span<const double> x) const override {
        Eigen::VectorXd p = probabilities(x);
        return Vec(p.data(), p.data() + p.size());
    }

    Vec vjp(std::span<const double> x, std::span<const double> c) const override {
        require(c.size() == output_dim(), "ToyClassifier::vjp: wrong cotangent length");
        Eigen::VectorXd p = probabilities(x);
        for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = p(i) * (1.0 - p(i)) * c[static_cast<std::size_t>(i)];
        Eigen::VectorXd g = weight_.transpose() * p;
        return Vec(g.data(), g.data() + g.size());
    }

private:
    Eigen::VectorXd probabilities(std::span<const double> x) const {
        require(x.size() == input_dim(), "ToyClassifier: wrong input length");
        Eigen::VectorXd z = weight_ * Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
        z += bias_;
        return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    }

    Eigen::MatrixXd weight_;
    Eigen::VectorXd bias_;
};

inline std::shared_ptr<const MeasurementOp> toy_embedder(std::uint64_t seed, std::size_t in_dim, std::size_t emb_dim) {
    return std::make_shared<const ToyEmbedder>(seed, in_dim, emb_dim);
}

inline std::shared_ptr<const MeasurementOp> toy_classifier(std::uint64_t seed, std::size_t in_dim,
                                                           std::size_t classes) {
    return std::make_shared<const ToyClassifier>(seed, in_dim, classes);
}

// ---------------------------------------------------------------------------

/// Distance d(y, y_hat) >= 0 with its gradient in the second argument.
class Distance {
public:
    virtual ~Distance() = default;
    virtual std::string name() const = 0;
    virtual double eval(std::span<const double> y, std::span<const double> y_hat) const = 0;
    virtual Vec grad(std::span<const double> y, std::span<const double> y_hat) const = 0;
};

/// ||y - y_hat||_1. Gradient uses sign(y_hat - y), 0 at ties.
class L1Distance final : public Distance {
public:
    std::string name() const override { return "l1"; }
    double eval(std::span<const double> y, std::span<const double> y_hat) const override {
        require_same_length(y, y_hat, "l1_distance");
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
        return s;
    }
    Vec grad(std::span<const double> y, std::span<const double> y_hat) const override {
        require_same_length(y, y_hat, "l1_distance");
        Vec g(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double d = y_hat[i] - y[i];
            g[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        }
        return g;
    }
};

/// Euclidean ||y - y_hat||_2. Gradient is 0 at y_hat = y.
class L2Distance final : public Distance {
public:
    std::string name() const override { return "l2"; }
    double eval(std::span<const double> y, std::span<const double> y_hat) const override {
        require_same_length(y, y_hat, "l2_distance");
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
        return std::sqrt(s);
    }
    Vec grad(std::span<const double> y, std::span<const double> y_hat) const override {
        const double n = eval(y, y_hat);
        Vec g(y.size(), 0.0);
        if (n == 0.0) return g;
        for (std::size_t i = 0; i < y.size(); ++i) g[i] = (y_hat[i] - y[i]) / n;
        return g;
    }
};

/// ||y - y_hat||_2^2.
class SquaredL2Distance final : public Distance {
public:
    std::string name() const override { return "l2sq"; }
    double eval(std::span<const double> y, std::span<const double> y_hat) const override {
        require_same_length(y, y_hat, "l2sq_distance");
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
        return s;
    }
    Vec grad(std::span<const double> y, std::span<const double> y_hat) const override {
        require_same_length(y, y_hat, "l2sq_distance");
        Vec g(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) g[i] = 2.0 * (y_hat[i] - y[i]);
        return g;
    }
};

inline constexpr double kBceClamp = 1e-7;

/// Binary cross-entropy summed over classes; y_hat is clamped to
/// [1e-7, 1 - 1e-7].
class BceDistance final : public Distance {
public:
    std::string name() const override { return "bce"; }
    double eval(std::span<const double> y, std::span<const double> y_hat) const override {
        require_same_length(y, y_hat, "bce_distance");
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double p = clamp(y_hat[i]);
            s -= y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p);
        }
        return s;
    }
    Vec grad(std::span<const double> y, std::span<const double> y_hat) const override {
        require_same_length(y, y_hat, "bce_distance");
        Vec g(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double p = clamp(y_hat[i]);
            g[i] = (p - y[i]) / (p * (1.0 - p));
        }
        return g;
    }

private:
    static double clamp(double p) { return std::clamp(p, kBceClamp, 1.0 - kBceClamp); }
};

inline std::shared_ptr<const Distance> l1_distance() { return std::make_shared<const L1Distance>(); }
inline std::shared_ptr<const Distance> l2_distance() { return std::make_shared<const L2Distance>(); }
inline std::shared_ptr<const Distance> l2sq_distance() { return std::make_shared<const SquaredL2Distance>(); }
inline std::shared_ptr<const Distance> bce_distance() { return std::make_shared<const BceDistance>(); }

inline std::shared_ptr<const Distance> distance_by_name(const std::string& name) {
    if (name == "l1") return l1_distance();
    if (name == "l2") return l2_distance();
    if (name == "l2sq") return l2sq_distance();
    if (name == "bce") return bce_distance();
    throw ContractError("unknown distance '" + name + "'");
}

// ---------------------------------------------------------------------------

/// Constant-power fade pair: f_in^2 + f_out^2 = 1 at every index.
struct CrossfadeSpec {
    Vec fade_in;
    Vec fade_out;
    std::size_t length() const noexcept { return fade_in.size(); }
};

/// Quarter-sine / quarter-cosine ramps over fade_length samples. Endpoints
/// are exactly (0, 1) and (1, 0); a one-sample fade sits at the midpoint.
inline CrossfadeSpec crossfade(std::size_t fade_length) {
    require(fade_length >= 1, "crossfade: fade_length must be >= 1");
    CrossfadeSpec spec{Vec(fade_length), Vec(fade_length)};
    for (std::size_t i = 0; i < fade_length; ++i) {
        const double frac = fade_length == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(fade_length - 1);
        const double angle = 0.5 * std::numbers::pi * frac;
        spec.fade_in[i] = std::sin(angle);
        spec.fade_out[i] = std::cos(angle);
    }
    if (fade_length > 1) {
        spec.fade_in.front() = 0.0;
        spec.fade_out.front() = 1.0;
        spec.fade_in.back() = 1.0;
        spec.fade_out.back() = 0.0;
    }
    return spec;
}

/// Target for the transition task on a common timeline of length
/// n = C_L + fade_length + C_R:
///   [ left context of xL ; f_out * xL + f_in * xR over the fade ; right context of xR ].
/// xL contributes its first n samples and xR its last n samples.
inline Vec build_transition_target(std::span<const double> x_left, std::span<const double> x_right,
                                   std::size_t c_left, std::size_t c_right, std::size_t fade_length) {
    require(fade_length >= 1, "build_transition_target: fade_length must be >= 1");
    const std::size_t n = c_left + fade_length + c_right;
    require(x_left.size() >= n, "build_transition_target: left track shorter than C_L + fade + C_R");
    require(x_right.size() >= n, "build_transition_target: right track shorter than C_L + fade + C_R");
    const auto right = x_right.subspan(x_right.size() - n);
    const CrossfadeSpec fade = crossfade(fade_length);
    Vec out(n);
    for (std::size_t i = 0; i < c_left; ++i) out[i] = x_left[i];
    for (std::size_t j = 0; j < fade_length; ++j) {
        const std::size_t i = c_left + j;
        out[i] = fade.fade_out[j] * x_left[i] + fade.fade_in[j] * right[i];
    }
    for (std::size_t i = c_left + fade_length; i < n; ++i) out[i] = right[i];
    return out;
}

}  // namespace cdiff
