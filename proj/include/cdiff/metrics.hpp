// Evaluation metrics: Frechet distance between embedding statistics,
// class-space KL divergence, log-mel reconstruction distance and the
// k-NN realism score.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fftw3.h>

#include "cdiff/core.hpp"

namespace cdiff {

// ---------------------------------------------------------------------------

struct EmbeddingStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased
    std::size_t count = 0;
};

inline EmbeddingStats embedding_stats(const std::vector<Vec>& embeddings) {
    require(embeddings.size() >= 2, "embedding_stats: need at least two vectors");
    const auto d = static_cast<Eigen::Index>(embeddings.front().size());
    require(d > 0, "embedding_stats: zero-dimensional embeddings");
    EmbeddingStats s;
    s.count = embeddings.size();
    s.mean = Eigen::VectorXd::Zero(d);
    for (const auto& e : embeddings) {
        require(static_cast<Eigen::Index>(e.size()) == d, "embedding_stats: dimension mismatch");
        s.mean += Eigen::Map<const Eigen::VectorXd>(e.data(), d);
    }
    s.mean /= static_cast<double>(s.count);
    s.cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& e : embeddings) {
        const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(e.data(), d) - s.mean;
        s.cov.noalias() += c * c.transpose();
    }
    s.cov /= static_cast<double>(s.count - 1);
    return s;
}

/// Statistics of the union of two disjoint sets (parallel-merge formula).
inline EmbeddingStats merge(const EmbeddingStats& a, const EmbeddingStats& b) {
    require(a.mean.size() == b.mean.size(), "merge: dimension mismatch");
    const double na = static_cast<double>(a.count);
    const double nb = static_cast<double>(b.count);
    const double n = na + nb;
    EmbeddingStats m;
    m.count = a.count + b.count;
    const Eigen::VectorXd delta = b.mean - a.mean;
    m.mean = a.mean + delta * (nb / n);
    const Eigen::MatrixXd scatter =
        a.cov * (na - 1.0) + b.cov * (nb - 1.0) + (delta * delta.transpose()) * (na * nb / n);
    m.cov = scatter / (n - 1.0);
    return m;
}

namespace detail {
// Symmetric PSD square root; negative eigenvalues are clamped to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    require(es.info() == Eigen::Success, std::string(what) + ": eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-10 * scale)
        warn(std::string(what) + ": clamped negative eigenvalue " + std::to_string(ev.minCoeff()));
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
inline double frechet_distance(const EmbeddingStats& a, const EmbeddingStats& b) {
    require(a.mean.size() == b.mean.size() && a.cov.rows() == b.cov.rows(), "frechet_distance: dimension mismatch");
    const Eigen::MatrixXd root_a = detail::psd_sqrt(a.cov, "frechet_distance");
    const Eigen::MatrixXd inner = root_a * b.cov * root_a;
    const Eigen::MatrixXd cross = detail::psd_sqrt(inner, "frechet_distance");
    const double fd = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    return std::max(fd, 0.0);
}

// ---------------------------------------------------------------------------

/// Mean over paired samples of sum_c KL(Bernoulli(p_c) || Bernoulli(q_c)).
/// q is clamped to [1e-7, 1 - 1e-7]; p log p terms follow 0 log 0 = 0.
inline double class_kld(const std::vector<Vec>& p_set, const std::vector<Vec>& q_set) {
    require(!p_set.empty() && p_set.size() == q_set.size(), "class_kld: need equally many non-zero p and q");
    constexpr double eps = 1e-7;
    double total = 0.0;
    for (std::size_t n = 0; n < p_set.size(); ++n) {
        const Vec& p = p_set[n];
        const Vec& q = q_set[n];
        require_same_length(p, q, "class_kld");
        for (std::size_t c = 0; c < p.size(); ++c) {
            require(p[c] >= 0.0 && p[c] <= 1.0 && q[c] >= 0.0 && q[c] <= 1.0, "class_kld: probabilities outside [0,1]");
            if (p[c] == q[c]) continue;
            const double qc = std::clamp(q[c], eps, 1.0 - eps);
            double kl = 0.0;
            if (p[c] > 0.0) kl += p[c] * std::log(p[c] / qc);
            if (p[c] < 1.0) kl += (1.0 - p[c]) * std::log((1.0 - p[c]) / (1.0 - qc));
            total += kl;
        }
    }
    return std::max(total / static_cast<double>(p_set.size()), 0.0);
}

// ---------------------------------------------------------------------------

struct MelConfig {
    std::size_t fft_size = 1024;
    std::size_t hop = 256;
    std::size_t mel_bands = 64;
    double sample_rate = 16000.0;
    double log_floor = 1e-5;

    void validate() const {
        require(fft_size >= 2, "MelConfig: fft_size must be >= 2");
        require(hop >= 1 && hop <= fft_size, "MelConfig: need 1 <= hop <= fft_size");
        require(mel_bands >= 1, "MelConfig: mel_bands must be >= 1");
        require(sample_rate > 0.0, "MelConfig: sample_rate must be positive");
        require(log_floor > 0.0, "MelConfig: log_floor must be positive");
    }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular HTK-mel filters over [0, rate/2], shape bands x (fft/2 + 1).
inline Eigen::MatrixXd mel_filterbank(const MelConfig& cfg) {
    cfg.validate();
    const std::size_t bins = cfg.fft_size / 2 + 1;
    const double mel_hi = hz_to_mel(cfg.sample_rate / 2.0);
    std::vector<double> edges(cfg.mel_bands + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(cfg.mel_bands + 1));
    Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cfg.mel_bands), static_cast<Eigen::Index>(bins));
    for (std::size_t m = 0; m < cfg.mel_bands; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
            double w = 0.0;
            if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
            else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
            fb(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = w;
        }
    }
    return fb;
}

inline std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop) {
    require(length >= window, "frame_count: signal shorter than one window");
    return (length - window) / hop + 1;
}

namespace detail {
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwRealPlan {
    std::size_t n;
    double* in;
    fftw_complex* out;
    fftw_plan plan;

    explicit FftwRealPlan(std::size_t size) : n(size) {
        std::lock_guard lock(fftw_planner_mutex());
        in = fftw_alloc_real(n);
        out = fftw_alloc_complex(n / 2 + 1);
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    }
    ~FftwRealPlan() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
        fftw_free(in);
        fftw_free(out);
    }
    FftwRealPlan(const FftwRealPlan&) = delete;
    FftwRealPlan& operator=(const FftwRealPlan&) = delete;
};
}  // namespace detail

/// Periodic Hann window.
inline Vec hann_window(std::size_t n) {
    Vec w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

/// log(max(mel power, floor)), shape frames x bands. Frames are not padded.
inline Eigen::MatrixXd log_mel_spectrogram(std::span<const double> x, const MelConfig& cfg) {
    cfg.validate();
    const std::size_t frames = frame_count(x.size(), cfg.fft_size, cfg.hop);
    const std::size_t bins = cfg.fft_size / 2 + 1;
    const Eigen::MatrixXd fb = mel_filterbank(cfg);
    const Vec window = hann_window(cfg.fft_size);
    detail::FftwRealPlan fft(cfg.fft_size);
    Eigen::VectorXd power(static_cast<Eigen::Index>(bins));
    Eigen::MatrixXd out(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(cfg.mel_bands));
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t start = f * cfg.hop;
        for (std::size_t i = 0; i < cfg.fft_size; ++i) fft.in[i] = x[start + i] * window[i];
        fftw_execute(fft.plan);
        for (std::size_t k = 0; k < bins; ++k)
            power(static_cast<Eigen::Index>(k)) = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
        const Eigen::VectorXd mel = fb * power;
        for (Eigen::Index m = 0; m < mel.size(); ++m)
            out(static_cast<Eigen::Index>(f), m) = std::log(std::max(mel(m), cfg.log_floor));
    }
    return out;
}

/// Mean absolute difference of log-mel spectrograms.
inline double mel_reconstruction_distance(const Signal& a, const Signal& b, const MelConfig& cfg) {
    require(a.size() == b.size(), "mel_reconstruction_distance: lengths differ");
    require(a.sample_rate == b.sample_rate, "mel_reconstruction_distance: sample rates differ");
    if (a.sample_rate > 0.0)
        require(a.sample_rate == cfg.sample_rate, "mel_reconstruction_distance: config rate != signal rate");
    const Eigen::MatrixXd ma = log_mel_spectrogram(a.samples, cfg);
    const Eigen::MatrixXd mb = log_mel_spectrogram(b.samples, cfg);
    return (ma - mb).cwiseAbs().mean();
}

/// Mean log-mel band energy over frames; a fixed signal-to-vector embedding.
inline Vec mel_mean_embedding(std::span<const double> x, const MelConfig& cfg) {
    const Eigen::MatrixXd m = log_mel_spectrogram(x, cfg);
    const Eigen::VectorXd mean = m.colwise().mean().transpose();
    return Vec(mean.data(), mean.data() + mean.size());
}

// ---------------------------------------------------------------------------

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline constexpr double kRealismFloor = 1e-9;

/// Reference manifold for the realism score: each point with the distance to
/// its k-th nearest neighbour (itself excluded).
class RealismReference {
public:
    RealismReference(std::vector<Vec> points, std::size_t k) : points_(std::move(points)), k_(k) {
        require(k_ >= 1, "realism: k must be >= 1");
        require(points_.size() > k_, "realism: reference set must be larger than k");
        const std::size_t d = points_.front().size();
        for (const auto& p : points_) require(p.size() == d && d > 0, "realism: reference dimension mismatch");
        radii_.resize(points_.size());
        std::vector<double> dist(points_.size() - 1);
        for (std::size_t i = 0; i < points_.size(); ++i) {
            std::size_t j = 0;
            for (std::size_t o = 0; o < points_.size(); ++o)
                if (o != i) dist[j++] = euclidean(points_[i], points_[o]);
            std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_ - 1), dist.end());
            radii_[i] = dist[k_ - 1];
        }
    }

    std::size_t k() const { return k_; }
    const std::vector<double>& radii() const { return radii_; }
    const std::vector<Vec>& points() const { return points_; }

    /// max_r radius(r) / max(||query - r||, 1e-9).
    double score(std::span<const double> query) const {
        require(query.size() == points_.front().size(), "realism: query dimension mismatch");
        double best = 0.0;
        bool floored = false;
        for (std::size_t i = 0; i < points_.size(); ++i) {
            double d = euclidean(query, points_[i]);
            if (d < kRealismFloor) {
                d = kRealismFloor;
                floored = true;
            }
            best = std::max(best, radii_[i] / d);
        }
        if (floored) warn("realism_score: query coincides with a reference point; denominator floored");
        return best;
    }

private:
    std::vector<Vec> points_;
    std::size_t k_;
    std::vector<double> radii_;
};

inline double realism_score(std::span<const double> query, const std::vector<Vec>& reference_set, std::size_t k) {
    return RealismReference(reference_set, k).score(query);
}

using SignalEmbedding = std::function<Vec(std::span<const double>)>;

/// realism(embed(generated)) / realism(embed(crossfade_baseline)).
inline double normalized_transition_realism(std::span<const double> generated, std::span<const double> baseline,
                                            const RealismReference& reference, const SignalEmbedding& embed) {
    require(generated.size() == baseline.size(), "normalized_transition_realism: lengths differ");
    const double denom = reference.score(embed(baseline));
    require(denom > 0.0, "normalized_transition_realism: baseline score is zero");
    return reference.score(embed(generated)) / denom;
}

struct CurvePoint {
    double time_s = 0.0;  // window centre
    double distance = 0.0;
};

/// Windowed mel distance of generated against track A across a transition.
inline std::vector<CurvePoint> transition_mel_curve(const Signal& generated, const Signal& track_a, std::size_t window,
                                                    std::size_t hop, const MelConfig& cfg) {
    require(generated.size() == track_a.size(), "transition_mel_curve: lengths differ");
    require(window >= cfg.fft_size, "transition_mel_curve: window shorter than fft size");
    require(hop >= 1, "transition_mel_curve: hop must be >= 1");
    const std::size_t frames = frame_count(generated.size(), window, hop);
    const double rate = generated.sample_rate > 0.0 ? generated.sample_rate : cfg.sample_rate;
    std::vector<CurvePoint> curve(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t start = f * hop;
        Signal ga(Vec(generated.samples.begin() + static_cast<std::ptrdiff_t>(start),
                      generated.samples.begin() + static_cast<std::ptrdiff_t>(start + window)),
                  generated.sample_rate);
        Signal ta(Vec(track_a.samples.begin() + static_cast<std::ptrdiff_t>(start),
                      track_a.samples.begin() + static_cast<std::ptrdiff_t>(start + window)),
                  track_a.sample_rate);
        curve[f].time_s = (static_cast<double>(start) + 0.5 * static_cast<double>(window)) / rate;
        curve[f].distance = mel_reconstruction_distance(ga, ta, cfg);
    }
    return curve;
}

inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& curve) {
    os << "time_s,distance\n";
    char buf[96];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.time_s, p.distance);
        os << buf;
    }
}

// ---------------------------------------------------------------------------

/// Average ranks (1-based), ties sharing their mean rank.
inline Vec ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vec r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t m = i; m <= j; ++m) r[idx[m]] = avg;
        i = j + 1;
    }
    return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && a.size() >= 2, "pearson: need two equal-length series");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
    const Vec ra = ranks(a);
    const Vec rb = ranks(b);
    return pearson(ra, rb);
}

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
    std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
    require(!v.empty(), "mean_std: empty input");
    MeanStd m;
    m.count = v.size();
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - m.mean) * (x - m.mean);
        m.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return m;
}

/// "0.95 ± 0.12"
inline std::string format_mean_std(const MeanStd& m, int decimals = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", decimals, m.mean, decimals, m.stddev);
    return buf;
}

struct MetricRow {
    std::string task;
    std::string metric;
    double value = 0.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
    os << "task,metric,value,n_samples,seed\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.value);
        os << r.task << ',' << r.metric << ',' << buf << ',' << r.n_samples << ',' << r.seed << '\n';
    }
}

}  // namespace cdiff
