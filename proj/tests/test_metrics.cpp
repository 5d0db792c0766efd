#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cdiff/measure.hpp"
#include "cdiff/metrics.hpp"
#include "oracles.hpp"

using namespace cdiff;

namespace {

std::vector<Vec> gaussian_cloud(std::size_t count, const Vec& mean, const Vec& sd, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    std::vector<Vec> out(count, Vec(mean.size()));
    for (auto& v : out)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = mean[i] + sd[i] * nd(rng);
    return out;
}

Vec tone(double hz, std::size_t n, double rate, double amp = 0.3) {
    Vec x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * double(i) / rate);
    return x;
}

}  // namespace

TEST(Frechet, DiagonalClosedForm) {
    EmbeddingStats a, b;
    a.mean = Eigen::Vector3d(0.0, 1.0, -1.0);
    b.mean = Eigen::Vector3d(0.5, 1.0, 0.0);
    a.cov = Eigen::Vector3d(1.0, 4.0, 0.25).asDiagonal();
    b.cov = Eigen::Vector3d(9.0, 1.0, 0.25).asDiagonal();
    a.count = b.count = 10;
    // sum (mu diff)^2 + sum (sqrt(s1) - sqrt(s2))^2
    const double expected = 0.25 + 1.0 + (1.0 - 3.0) * (1.0 - 3.0) + (2.0 - 1.0) * (2.0 - 1.0);
    EXPECT_NEAR(frechet_distance(a, b), expected, 1e-8);
    EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-8);
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-8);
}

TEST(Frechet, SampleStatisticsAndMerge) {
    std::mt19937_64 rng(1);
    const auto xs = gaussian_cloud(300, {0.0, 1.0}, {1.0, 2.0}, rng);
    const auto ys = gaussian_cloud(200, {0.5, 0.0}, {1.0, 0.5}, rng);
    std::vector<Vec> all = xs;
    all.insert(all.end(), ys.begin(), ys.end());
    const auto merged = merge(embedding_stats(xs), embedding_stats(ys));
    const auto direct = embedding_stats(all);
    EXPECT_EQ(merged.count, 500u);
    EXPECT_LT((merged.mean - direct.mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((merged.cov - direct.cov).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(embedding_stats({Vec{1.0}}), ContractError);
    EXPECT_THROW(embedding_stats({Vec{1.0}, Vec{1.0, 2.0}}), ContractError);
}

TEST(Frechet, RankDeficientCovarianceIsFinite) {
    const std::vector<Vec> xs{{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}};
    const auto s = embedding_stats(xs);
    const double fd = frechet_distance(s, s);
    EXPECT_TRUE(std::isfinite(fd));
    EXPECT_NEAR(fd, 0.0, 1e-7);
}

TEST(ClassKld, Examples) {
    const std::vector<Vec> p{{0.2, 0.9}, {0.5, 0.5}};
    EXPECT_EQ(class_kld(p, p), 0.0);
    EXPECT_NEAR(class_kld({Vec{1.0}}, {Vec{0.5}}), 0.6931471805599453, 1e-10);
    // Hard labels against saturated predictions stay finite.
    EXPECT_TRUE(std::isfinite(class_kld({Vec{1.0}}, {Vec{0.0}})));
    EXPECT_NEAR(class_kld({Vec{1.0}}, {Vec{0.0}}), -std::log(1e-7), 1e-9);
    EXPECT_THROW(class_kld({Vec{1.5}}, {Vec{0.5}}), ContractError);
    EXPECT_THROW(class_kld({Vec{0.5}}, {}), ContractError);
}

TEST(ClassKld, NonNegative) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Vec> p(5, Vec(3)), q(5, Vec(3));
        for (auto& v : p)
            for (double& c : v) c = u(rng);
        for (auto& v : q)
            for (double& c : v) c = u(rng);
        EXPECT_GE(class_kld(p, q), 0.0);
    }
}

TEST(Realism, MatchesBruteForce) {
    std::mt19937_64 rng(3);
    for (int set = 0; set < 20; ++set) {
        const std::size_t dim = 1 + set % 5, count = 10 + set;
        std::vector<Vec> refs;
        for (std::size_t i = 0; i < count; ++i) refs.push_back(oracle::randn(dim, rng));
        const std::size_t k = 1 + set % 4;
        const RealismReference ref(refs, k);
        for (int q = 0; q < 5; ++q) {
            const Vec query = oracle::randn(dim, rng, 1.5);
            EXPECT_EQ(ref.score(query), oracle::realism_brute_force(query, refs, k));
        }
    }
}

TEST(Realism, ReferencePointQueryFloors) {
    const std::vector<Vec> refs{{0.0}, {1.0}, {3.0}};
    int warnings = 0;
    auto saved = warning_sink();
    warning_sink() = [&](const std::string&) { ++warnings; };
    const double s = realism_score(Vec{1.0}, refs, 1);
    warning_sink() = saved;
    EXPECT_TRUE(std::isfinite(s));
    EXPECT_NEAR(s, 1.0 / kRealismFloor, 1.0);
    EXPECT_EQ(warnings, 1);
    EXPECT_THROW(realism_score(Vec{1.0}, refs, 3), ContractError);
    EXPECT_THROW(realism_score(Vec{1.0}, refs, 0), ContractError);
}

TEST(LogMel, MatchesNaiveDft) {
    MelConfig cfg;
    cfg.fft_size = 256;
    cfg.hop = 64;
    cfg.mel_bands = 20;
    cfg.sample_rate = 8000.0;
    std::mt19937_64 rng(4);
    const Vec x = oracle::randn(1000, rng, 0.2);
    const Eigen::MatrixXd fast = log_mel_spectrogram(x, cfg);
    const Eigen::MatrixXd slow =
        oracle::naive_log_mel(x, cfg.fft_size, cfg.hop, cfg.mel_bands, cfg.sample_rate, cfg.log_floor);
    ASSERT_EQ(fast.rows(), slow.rows());
    ASSERT_EQ(fast.cols(), slow.cols());
    EXPECT_EQ(fast.rows(), Eigen::Index(1 + (1000 - 256) / 64));
    EXPECT_LT((fast - slow).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LogMel, FilterbankShape) {
    MelConfig cfg;
    const Eigen::MatrixXd fb = mel_filterbank(cfg);
    EXPECT_EQ(fb.rows(), 64);
    EXPECT_EQ(fb.cols(), 513);
    EXPECT_GE(fb.minCoeff(), 0.0);
    for (Eigen::Index m = 0; m < fb.rows(); ++m) EXPECT_GT(fb.row(m).sum(), 0.0) << "band " << m;
    EXPECT_NEAR(mel_to_hz(hz_to_mel(440.0)), 440.0, 1e-9);
    EXPECT_NEAR(hz_to_mel(1000.0), 1000.0, 0.1);
}

TEST(MelDistance, IdentityAndSensitivity) {
    const double rate = 16000.0;
    MelConfig cfg;
    const Signal a(tone(440.0, 8000, rate), rate), b(tone(2000.0, 8000, rate), rate);
    EXPECT_EQ(mel_reconstruction_distance(a, a, cfg), 0.0);
    EXPECT_GT(mel_reconstruction_distance(a, b, cfg), 1.0);
    EXPECT_THROW(mel_reconstruction_distance(a, Signal(b.samples, 8000.0), cfg), ContractError);
    EXPECT_THROW(mel_reconstruction_distance(a, Signal(Vec(100), rate), cfg), ContractError);
}

TEST(TransitionCurve, DistanceToTrackAGrowsAcrossCrossfade) {
    const double rate = 16000.0;
    const std::size_t n = 48000;
    MelConfig cfg;
    const Vec a = tone(440.0, n, rate), b = tone(3000.0, n, rate);
    const auto f = crossfade(n);
    Vec mixed(n);
    for (std::size_t i = 0; i < n; ++i) mixed[i] = f.fade_out[i] * a[i] + f.fade_in[i] * b[i];
    const auto curve = transition_mel_curve(Signal(mixed, rate), Signal(a, rate), 4096, 2048, cfg);
    ASSERT_GT(curve.size(), 10u);
    Vec ts, ds;
    for (const auto& p : curve) {
        ts.push_back(p.time_s);
        ds.push_back(p.distance);
    }
    EXPECT_GT(spearman(ts, ds), 0.9);
    EXPECT_NEAR(curve.front().time_s, 2048.0 / rate, 1e-12);
    std::ostringstream os;
    write_curve_csv(os, curve);
    EXPECT_EQ(os.str().substr(0, 16), "time_s,distance\n");
}

TEST(Stats, RanksAndSpearman) {
    EXPECT_EQ(ranks(Vec{3.0, 1.0, 2.0}), (Vec{3.0, 1.0, 2.0}));
    EXPECT_EQ(ranks(Vec{1.0, 2.0, 2.0, 5.0}), (Vec{1.0, 2.5, 2.5, 4.0}));
    const Vec x{1, 2, 3, 4, 5};
    EXPECT_NEAR(spearman(x, Vec{1, 4, 9, 16, 25}), 1.0, 1e-15);
    EXPECT_NEAR(spearman(x, Vec{5, 4, 3, 2, 1}), -1.0, 1e-15);
    EXPECT_THROW(pearson(Vec{1.0}, Vec{1.0}), ContractError);
}

TEST(Stats, MeanStdAndFormatting) {
    const MeanStd m = mean_std(Vec{1.0, 2.0, 3.0, 4.0});
    EXPECT_EQ(m.mean, 2.5);
    EXPECT_NEAR(m.stddev, std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_EQ(format_mean_std({0.951, 0.1234, 4}), "0.95 ± 0.12");
    EXPECT_EQ(mean_std(Vec{7.0}).stddev, 0.0);
    EXPECT_THROW(mean_std(Vec{}), ContractError);
}

TEST(Stats, MetricsCsv) {
    std::ostringstream os;
    write_metrics_csv(os, {{"infill", "mel_distance", 0.5, 8, 3}});
    EXPECT_EQ(os.str(), "task,metric,value,n_samples,seed\ninfill,mel_distance,0.5,8,3\n");
}
