// Seeded synthetic corpora standing in for a music dataset.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "cdiff/core.hpp"
#include "cdiff/sampler.hpp"

namespace cdiff {

enum class SynthKind { sine_mix, ar1_gaussian, gmm };

inline std::string to_string(SynthKind k) {
    switch (k) {
        case SynthKind::sine_mix: return "sine_mix";
        case SynthKind::ar1_gaussian: return "ar1_gaussian";
        case SynthKind::gmm: return "gmm";
    }
    return "unknown";
}

inline SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "sine_mix") return SynthKind::sine_mix;
    if (s == "ar1_gaussian") return SynthKind::ar1_gaussian;
    if (s == "gmm") return SynthKind::gmm;
    throw ContractError("unknown dataset kind '" + s + "'");
}

struct SynthParams {
    SynthKind kind = SynthKind::sine_mix;
    std::size_t count = 16;
    std::size_t length = 16000;
    double sample_rate = kDefaultSampleRate;
    std::uint64_t seed = 0;
    // sine_mix: each signal is sum_j amplitude * sin(2 pi f_j t + phase_j), random phases
    std::vector<double> frequencies{220.0, 330.0, 440.0};
    double amplitude = 0.2;
    // ar1_gaussian
    double rho = 0.9;
    double scale = 0.25;  // marginal standard deviation
    // gmm: signal = mean_k * 1 + stddev * noise
    std::vector<double> weights{0.3, 0.7};
    std::vector<double> means{-0.5, 0.5};
    double stddev = 0.05;

    void validate() const {
        require(count >= 1, "synth: count must be >= 1");
        require(length >= 1, "synth: length must be >= 1");
        require(sample_rate > 0.0, "synth: sample rate must be positive");
        switch (kind) {
            case SynthKind::sine_mix:
                require(!frequencies.empty(), "synth: sine_mix needs frequencies");
                for (double f : frequencies)
                    require(f > 0.0 && f < sample_rate / 2.0, "synth: frequencies must lie in (0, rate/2)");
                break;
            case SynthKind::ar1_gaussian:
                require(std::abs(rho) < 1.0, "synth: need |rho| < 1");
                require(scale > 0.0, "synth: scale must be positive");
                break;
            case SynthKind::gmm: {
                require(!weights.empty() && weights.size() == means.size(), "synth: gmm weights/means mismatch");
                double total = 0.0;
                for (double w : weights) {
                    require(w >= 0.0, "synth: negative gmm weight");
                    total += w;
                }
                require(std::abs(total - 1.0) < 1e-9, "synth: gmm weights must sum to 1");
                require(stddev >= 0.0, "synth: gmm stddev must be >= 0");
                break;
            }
        }
    }
};

/// Draws params.count signals. Signal i uses run_rng(seed, i), so subsets
/// are reproducible independently.
inline std::vector<Signal> synth_dataset(const SynthParams& p) {
    p.validate();
    std::vector<Signal> out;
    out.reserve(p.count);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (std::size_t i = 0; i < p.count; ++i) {
        auto rng = run_rng(p.seed, i);
        Vec x(p.length, 0.0);
        switch (p.kind) {
            case SynthKind::sine_mix:
                for (double f : p.frequencies) {
                    const double phase = 2.0 * std::numbers::pi * uniform(rng);
                    const double w = 2.0 * std::numbers::pi * f / p.sample_rate;
                    for (std::size_t n = 0; n < p.length; ++n)
                        x[n] += p.amplitude * std::sin(w * static_cast<double>(n) + phase);
                }
                break;
            case SynthKind::ar1_gaussian: {
                const double innov = p.scale * std::sqrt(1.0 - p.rho * p.rho);
                x[0] = p.scale * normal(rng);
                for (std::size_t n = 1; n < p.length; ++n) x[n] = p.rho * x[n - 1] + innov * normal(rng);
                break;
            }
            case SynthKind::gmm: {
                const double u = uniform(rng);
                std::size_t k = 0;
                double acc = p.weights[0];
                while (u >= acc && k + 1 < p.weights.size()) acc += p.weights[++k];
                for (double& v : x) v = p.means[k] + p.stddev * normal(rng);
                break;
            }
        }
        out.emplace_back(std::move(x), p.sample_rate);
    }
    return out;
}

/// FNV-1a over the raw sample bytes of a corpus.
inline std::uint64_t content_hash(const std::vector<Signal>& signals) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& s : signals) {
        const std::uint64_t len = s.samples.size();
        mix(&len, sizeof(len));
        mix(s.samples.data(), s.samples.size() * sizeof(double));
    }
    return h;
}

}  // namespace cdiff
