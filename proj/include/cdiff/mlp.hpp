// A small fully connected v-prediction network with hand-written reverse-mode
// gradients, plus the v-loss and a momentum-SGD trainer.
#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdiff/core.hpp"
#include "cdiff/denoise.hpp"
#include "cdiff/schedule.hpp"

namespace cdiff {

static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");

struct MlpShape {
    std::size_t signal_dim = 1;
    std::size_t width = 128;
    std::size_t hidden_layers = 3;
    static constexpr std::size_t kTimeFeatures = 8;
};

/// Sinusoidal time embedding: sin/cos at frequencies (pi/2) * 2^j, j = 0..3.
inline std::array<double, MlpShape::kTimeFeatures> time_features(double t) {
    std::array<double, MlpShape::kTimeFeatures> f{};
    for (std::size_t j = 0; j < MlpShape::kTimeFeatures / 2; ++j) {
        const double w = 0.5 * std::numbers::pi * static_cast<double>(1u << j);
        f[2 * j] = std::sin(w * t);
        f[2 * j + 1] = std::cos(w * t);
    }
    return f;
}

/// Per-example loss draws: time and noise. Fixing them makes the v-loss a
/// deterministic function of the parameters.
struct LossDraws {
    std::vector<double> t;
    std::vector<Vec> eps;
};

class MlpDenoiser final : public Denoiser {
public:
    struct Layer {
        Eigen::MatrixXd weight;  // out x in
        Eigen::VectorXd bias;
    };

    MlpDenoiser(MlpShape shape, std::uint64_t seed) : shape_(shape) {
        require(shape.signal_dim > 0 && shape.width > 0 && shape.hidden_layers > 0, "MlpDenoiser: empty shape");
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::size_t in = shape.signal_dim + MlpShape::kTimeFeatures;
        for (std::size_t l = 0; l <= shape.hidden_layers; ++l) {
            const std::size_t out = (l == shape.hidden_layers) ? shape.signal_dim : shape.width;
            Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
            const double scale = 1.0 / std::sqrt(static_cast<double>(in));
            for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = scale * normal(rng);
            layers_.push_back(std::move(layer));
            in = out;
        }
    }

    explicit MlpDenoiser(std::vector<Layer> layers) : layers_(std::move(layers)) {
        require(layers_.size() >= 2, "MlpDenoiser: need at least one hidden layer");
        const auto first_in = static_cast<std::size_t>(layers_.front().weight.cols());
        require(first_in > MlpShape::kTimeFeatures, "MlpDenoiser: first layer too narrow");
        shape_.signal_dim = first_in - MlpShape::kTimeFeatures;
        shape_.width = static_cast<std::size_t>(layers_.front().weight.rows());
        shape_.hidden_layers = layers_.size() - 1;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& L = layers_[l];
            require(L.bias.size() == L.weight.rows(), "MlpDenoiser: bias shape mismatch");
            if (l > 0) require(L.weight.cols() == layers_[l - 1].weight.rows(), "MlpDenoiser: layer chain mismatch");
            require(L.weight.allFinite() && L.bias.allFinite(), "MlpDenoiser: non-finite parameters");
        }
        require(static_cast<std::size_t>(layers_.back().weight.rows()) == shape_.signal_dim,
                "MlpDenoiser: output width must equal signal dimension");
    }

    std::size_t dim() const override { return shape_.signal_dim; }
    const MlpShape& shape() const { return shape_; }
    const std::vector<Layer>& layers() const { return layers_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& L : layers_) n += static_cast<std::size_t>(L.weight.size() + L.bias.size());
        return n;
    }

    /// Flat parameter view: for each layer, weights (column-major) then bias.
    double& parameter(std::size_t index) {
        for (auto& L : layers_) {
            const auto nw = static_cast<std::size_t>(L.weight.size());
            if (index < nw) return L.weight.data()[index];
            index -= nw;
            const auto nb = static_cast<std::size_t>(L.bias.size());
            if (index < nb) return L.bias.data()[index];
            index -= nb;
        }
        throw ContractError("MlpDenoiser: parameter index out of range");
    }

    Vec predict_v(std::span<const double> x_t, double t) const override {
        check_input(x_t, t);
        Eigen::MatrixXd in = input_column(x_t, t);
        Eigen::MatrixXd out = forward(in, nullptr);
        return Vec(out.data(), out.data() + out.size());
    }

    Vec vjp(std::span<const double> x_t, double t, std::span<const double> cotangent) const override {
        check_input(x_t, t);
        require_same_length(x_t, cotangent, "mlp vjp");
        Activations acts;
        forward(input_column(x_t, t), &acts);
        Eigen::MatrixXd g = Eigen::Map<const Eigen::MatrixXd>(cotangent.data(), static_cast<Eigen::Index>(dim()), 1);
        g = backward(acts, g, nullptr);
        return Vec(g.data(), g.data() + static_cast<Eigen::Index>(dim()));
    }

    /// Batched v-loss and its gradient for fixed draws. Returns the loss
    /// mean_b ||v_b - v_hat_b||^2; fills grads (same layout as layers()) when
    /// non-null.
    double loss_and_grad(const std::vector<Vec>& x0, const LossDraws& draws, std::vector<Layer>* grads) const {
        const auto batch = static_cast<Eigen::Index>(x0.size());
        require(batch > 0, "v_loss: empty batch");
        require(draws.t.size() == x0.size() && draws.eps.size() == x0.size(), "v_loss: draw count mismatch");
        const auto d = static_cast<Eigen::Index>(dim());
        Eigen::MatrixXd in(d + static_cast<Eigen::Index>(MlpShape::kTimeFeatures), batch);
        Eigen::MatrixXd target(d, batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            const auto bi = static_cast<std::size_t>(b);
            require(x0[bi].size() == dim() && draws.eps[bi].size() == dim(), "v_loss: signal length mismatch");
            const NoiseLevel l = cosine_level(draws.t[bi]);
            for (Eigen::Index i = 0; i < d; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                in(i, b) = l.alpha * x0[bi][ii] + l.sigma * draws.eps[bi][ii];
                target(i, b) = l.alpha * draws.eps[bi][ii] - l.sigma * x0[bi][ii];
            }
            const auto tf = time_features(draws.t[bi]);
            for (std::size_t j = 0; j < tf.size(); ++j) in(d + static_cast<Eigen::Index>(j), b) = tf[j];
        }
        Activations acts;
        Eigen::MatrixXd out = forward(in, grads ? &acts : nullptr);
        Eigen::MatrixXd diff = out - target;
        const double loss = diff.squaredNorm() / static_cast<double>(batch);
        if (grads) {
            Eigen::MatrixXd g = (2.0 / static_cast<double>(batch)) * diff;
            backward(acts, g, grads);
        }
        return loss;
    }

    void save(const std::filesystem::path& path) const;
    static MlpDenoiser load(const std::filesystem::path& path);

private:
    struct Activations {
        std::vector<Eigen::MatrixXd> inputs;  // input to each layer
        std::vector<Eigen::MatrixXd> pre;     // pre-activation of each hidden layer
    };

    static double silu(double z) { return z / (1.0 + std::exp(-z)); }
    static double silu_grad(double z) {
        const double s = 1.0 / (1.0 + std::exp(-z));
        return s * (1.0 + z * (1.0 - s));
    }

    Eigen::MatrixXd input_column(std::span<const double> x_t, double t) const {
        const auto d = static_cast<Eigen::Index>(dim());
        Eigen::MatrixXd in(d + static_cast<Eigen::Index>(MlpShape::kTimeFeatures), 1);
        for (Eigen::Index i = 0; i < d; ++i) in(i, 0) = x_t[static_cast<std::size_t>(i)];
        const auto tf = time_features(t);
        for (std::size_t j = 0; j < tf.size(); ++j) in(d + static_cast<Eigen::Index>(j), 0) = tf[j];
        return in;
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& in, Activations* acts) const {
        Eigen::MatrixXd h = in;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (acts) acts->inputs.push_back(h);
            Eigen::MatrixXd z = layers_[l].weight * h;
            z.colwise() += layers_[l].bias;
            if (l + 1 == layers_.size()) return z;
            if (acts) acts->pre.push_back(z);
            h = z.unaryExpr(&silu);
        }
        return h;
    }

    // Propagates dL/d(output) back to dL/d(input); accumulates parameter
    // gradients into grads when given.
    Eigen::MatrixXd backward(const Activations& acts, Eigen::MatrixXd g, std::vector<Layer>* grads) const {
        if (grads) {
            grads->resize(layers_.size());
            for (std::size_t l = 0; l < layers_.size(); ++l) {
                (*grads)[l].weight.setZero(layers_[l].weight.rows(), layers_[l].weight.cols());
                (*grads)[l].bias.setZero(layers_[l].bias.size());
            }
        }
        for (std::size_t l = layers_.size(); l-- > 0;) {
            if (l + 1 < layers_.size()) g = g.cwiseProduct(acts.pre[l].unaryExpr(&silu_grad));
            if (grads) {
                (*grads)[l].weight.noalias() += g * acts.inputs[l].transpose();
                (*grads)[l].bias += g.rowwise().sum();
            }
            g = layers_[l].weight.transpose() * g;
        }
        return g;
    }

    MlpShape shape_;
    std::vector<Layer> layers_;

    friend class MlpTrainer;
};

// ---------------------------------------------------------------------------

inline LossDraws draw_loss_inputs(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    LossDraws d;
    d.t.resize(count);
    d.eps.assign(count, Vec(dim));
    for (std::size_t b = 0; b < count; ++b) {
        d.t[b] = uniform(rng);
        for (double& e : d.eps[b]) e = normal(rng);
    }
    return d;
}

/// v-loss for any denoiser with fixed draws: mean_b ||v_target - predict_v||^2.
/// Draws with t = 0 are nudged to the smallest positive double so the
/// denoiser contract (t > 0) holds.
inline double v_loss_fixed(const Denoiser& den, const std::vector<Vec>& batch, const LossDraws& draws) {
    require(!batch.empty(), "v_loss: empty batch");
    require(draws.t.size() == batch.size(), "v_loss: draw count mismatch");
    if (const auto* mlp = dynamic_cast<const MlpDenoiser*>(&den)) return mlp->loss_and_grad(batch, draws, nullptr);
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const double t = std::max(draws.t[b], std::numeric_limits<double>::min());
        const Vec xt = forward_noise(batch[b], t, draws.eps[b]);
        const Vec v = v_target(batch[b], draws.eps[b], t);
        const Vec vh = den.predict_v(xt, t);
        for (std::size_t i = 0; i < v.size(); ++i) total += (v[i] - vh[i]) * (v[i] - vh[i]);
    }
    return total / static_cast<double>(batch.size());
}

/// v-loss with t ~ U(0,1) and eps ~ N(0, I) drawn per batch element.
inline double v_loss(const Denoiser& den, const std::vector<Vec>& batch, std::mt19937_64& rng) {
    require(!batch.empty(), "v_loss: empty batch");
    const LossDraws draws = draw_loss_inputs(batch.size(), batch.front().size(), rng);
    return v_loss_fixed(den, batch, draws);
}

struct TrainOptions {
    std::size_t steps = 1000;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::size_t batch_size = 64;
};

struct TrainLog {
    std::vector<double> loss;  // mini-batch loss per step
};

/// Momentum SGD on the v-loss. Each step samples a mini-batch from dataset
/// with replacement and fresh (t, eps) draws.
class MlpTrainer {
public:
    explicit MlpTrainer(MlpDenoiser& model, TrainOptions options) : model_(model), options_(options) {
        velocity_.resize(model_.layers_.size());
        for (std::size_t l = 0; l < velocity_.size(); ++l) {
            velocity_[l].weight.setZero(model_.layers_[l].weight.rows(), model_.layers_[l].weight.cols());
            velocity_[l].bias.setZero(model_.layers_[l].bias.size());
        }
    }

    std::size_t step_count() const { return step_count_; }

    double step(const std::vector<Vec>& dataset, std::mt19937_64& rng) {
        std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
        std::vector<Vec> batch(options_.batch_size);
        for (auto& x : batch) x = dataset[pick(rng)];
        const LossDraws draws = draw_loss_inputs(batch.size(), model_.dim(), rng);
        std::vector<MlpDenoiser::Layer> grads;
        const double loss = model_.loss_and_grad(batch, draws, &grads);
        if (!std::isfinite(loss))
            throw NumericError("train_toy: non-finite loss at step " + std::to_string(step_count_), step_count_);
        for (std::size_t l = 0; l < grads.size(); ++l) {
            velocity_[l].weight = options_.momentum * velocity_[l].weight + grads[l].weight;
            velocity_[l].bias = options_.momentum * velocity_[l].bias + grads[l].bias;
            model_.layers_[l].weight -= options_.learning_rate * velocity_[l].weight;
            model_.layers_[l].bias -= options_.learning_rate * velocity_[l].bias;
        }
        ++step_count_;
        return loss;
    }

private:
    MlpDenoiser& model_;
    TrainOptions options_;
    std::vector<MlpDenoiser::Layer> velocity_;
    std::size_t step_count_ = 0;
};

inline TrainLog train_toy(MlpDenoiser& model, const std::vector<Vec>& dataset, TrainOptions options,
                          std::mt19937_64& rng) {
    require(options.steps >= 1, "train_toy: steps must be >= 1");
    require(options.batch_size >= 1, "train_toy: batch size must be >= 1");
    require(!dataset.empty(), "train_toy: empty dataset");
    for (const auto& x : dataset) require(x.size() == model.dim(), "train_toy: dataset signal length mismatch");
    MlpTrainer trainer(model, options);
    TrainLog log;
    log.loss.reserve(options.steps);
    for (std::size_t s = 0; s < options.steps; ++s) log.loss.push_back(trainer.step(dataset, rng));
    return log;
}

// ---------------------------------------------------------------------------
// Parameter file: 16-byte header {magic "CDML", u32 version, u32 layer count,
// u32 time-feature count}, then (u32 rows, u32 cols) per layer, then per layer
// the weights (row-major) followed by the bias, all f64 little-endian.

namespace detail {
inline constexpr std::array<char, 4> kMlpMagic{'C', 'D', 'M', 'L'};
inline constexpr std::uint32_t kMlpVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ContractError(std::string("mlp file: truncated while reading ") + what);
    return v;
}
}  // namespace detail

inline void MlpDenoiser::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("mlp file: cannot open " + path.string());
    os.write(detail::kMlpMagic.data(), 4);
    detail::put<std::uint32_t>(os, detail::kMlpVersion);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(layers_.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(MlpShape::kTimeFeatures));
    for (const auto& L : layers_) {
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(L.weight.rows()));
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(L.weight.cols()));
    }
    for (const auto& L : layers_) {
        for (Eigen::Index r = 0; r < L.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < L.weight.cols(); ++c) detail::put<double>(os, L.weight(r, c));
        for (Eigen::Index r = 0; r < L.bias.size(); ++r) detail::put<double>(os, L.bias(r));
    }
    if (!os) throw std::runtime_error("mlp file: write failed for " + path.string());
}

inline MlpDenoiser MlpDenoiser::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ContractError("mlp file: cannot open " + path.string());
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (!is || magic != detail::kMlpMagic) throw ContractError("mlp file: bad magic");
    const auto version = detail::get<std::uint32_t>(is, "version");
    if (version != detail::kMlpVersion) throw ContractError("mlp file: unsupported version " + std::to_string(version));
    const auto count = detail::get<std::uint32_t>(is, "layer count");
    const auto tf = detail::get<std::uint32_t>(is, "time features");
    if (tf != MlpShape::kTimeFeatures) throw ContractError("mlp file: unsupported time-feature count");
    if (count < 2 || count > 64) throw ContractError("mlp file: implausible layer count");
    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(count);
    for (auto& [r, c] : shapes) {
        r = detail::get<std::uint32_t>(is, "layer rows");
        c = detail::get<std::uint32_t>(is, "layer cols");
        if (r == 0 || c == 0 || r > (1u << 16) || c > (1u << 16)) throw ContractError("mlp file: bad layer shape");
    }
    std::vector<Layer> layers;
    for (const auto& [r, c] : shapes) {
        Layer L{Eigen::MatrixXd(r, c), Eigen::VectorXd(r)};
        for (Eigen::Index i = 0; i < L.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < L.weight.cols(); ++j) L.weight(i, j) = detail::get<double>(is, "weights");
        for (Eigen::Index i = 0; i < L.bias.size(); ++i) L.bias(i) = detail::get<double>(is, "bias");
        layers.push_back(std::move(L));
    }
    return MlpDenoiser(std::move(layers));
}

}  // namespace cdiff
