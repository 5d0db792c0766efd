// DDPM and DDIM samplers with guidance gradients and an optional exact
// data-consistency projection after every step.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "cdiff/core.hpp"
#include "cdiff/denoise.hpp"
#include "cdiff/measure.hpp"
#include "cdiff/schedule.hpp"
#include "cdiff/tasks.hpp"

namespace cdiff {

enum class SamplerKind { ddpm, ddim };

/// Where the measurement loss is evaluated: on x_t directly, or on the
/// denoised estimate x0_hat(x_t).
enum class GradTarget { direct, denoised };

/// DDPM only. next_state subtracts the gradient taken at x_t from x_s after
/// the posterior step; current_state moves x_t before the posterior step.
enum class GradientPlacement { next_state, current_state };

struct StepRecord {
    std::size_t step = 0;  // execution order, 0-based
    double t = 0.0;
    double s = 0.0;
    double guidance_loss = 0.0;
    double grad_norm = 0.0;
    std::optional<Vec> x0_snapshot;
};

struct SamplerTrace {
    std::vector<StepRecord> records;
};

struct GuidanceConfig {
    SamplerKind kind = SamplerKind::ddpm;
    double xi = 0.0;
    GradTarget grad_target = GradTarget::direct;
    GradientPlacement placement = GradientPlacement::next_state;
    bool data_consistency = false;
    std::size_t steps = 50;
    std::uint64_t seed = 0;
    double t_max = kDefaultTMax;
    double t_min = kDefaultTMin;
    bool keep_x0_snapshots = false;
    /// Called after every iteration with the record and the new state x_s.
    std::function<void(const StepRecord&, std::span<const double>)> on_step;
};

inline constexpr double kLatentStepSize = 3e-2;
inline constexpr double kWaveformStepSize = 3e-3;

struct SampleResult {
    Vec x0;
    SamplerTrace trace;
};

/// Coefficients of the DDPM update x_s = x0_coef x0_hat + xt_coef x_t + noise_std eps.
struct DdpmCoefficients {
    double x0_coef = 0.0;
    double xt_coef = 0.0;
    double noise_std = 0.0;
};

/// x0_coef = (alpha_s / sigma_t^2)(1 - alpha_t^2 / alpha_s^2), written as
/// (sigma_t^2 - sigma_s^2) / (alpha_s sigma_t^2) so s = 0 yields exactly 1.
inline DdpmCoefficients ddpm_coefficients(double t, double s) {
    require(s >= 0.0 && s < t && t <= 1.0, "ddpm_coefficients: need 0 <= s < t <= 1");
    const NoiseLevel lt = cosine_level(t);
    const NoiseLevel ls = cosine_level(s);
    require(ls.alpha > 0.0, "ddpm_coefficients: alpha_s must be positive");
    const double st2 = lt.sigma * lt.sigma;
    const double ss2 = ls.sigma * ls.sigma;
    DdpmCoefficients c;
    c.x0_coef = (st2 - ss2) / (ls.alpha * st2);
    c.xt_coef = lt.alpha * ss2 / (ls.alpha * st2);
    c.noise_std = std::sqrt(transition_variance(t, s));
    return c;
}

inline std::mt19937_64 run_rng(std::uint64_t seed, std::uint64_t run_index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(run_index), static_cast<std::uint32_t>(run_index >> 32)};
    return std::mt19937_64(seq);
}

inline Vec standard_normal(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec z(n);
    for (double& v : z) v = normal(rng);
    return z;
}

// ---------------------------------------------------------------------------

struct GuidanceEval {
    double loss = 0.0;
    Vec grad;
};

namespace detail {
// Loss and gradient with x0_hat already known (needed for the denoised target).
inline GuidanceEval guidance_eval(std::span<const double> x_t, double t, std::span<const double> x0_hat,
                                  const Denoiser& den, const TaskSpec& task, GradTarget target, bool want_grad) {
    GuidanceEval out;
    const std::span<const double> probe = target == GradTarget::direct ? x_t : x0_hat;
    const Vec y_hat = task.op->apply(probe);
    out.loss = task.distance->eval(task.y, y_hat);
    if (!want_grad) return out;
    const Vec dy = task.distance->grad(task.y, y_hat);
    Vec g = task.op->vjp(probe, dy);
    if (target == GradTarget::denoised) {
        // d x0_hat / d x_t = alpha I - sigma dv/dx_t
        const NoiseLevel l = cosine_level(t);
        const Vec jv = den.vjp(x_t, t, g);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = l.alpha * g[i] - l.sigma * jv[i];
    }
    out.grad = std::move(g);
    return out;
}
}  // namespace detail

/// d(y, A(x_t)) and its gradient with respect to x_t, or the same for
/// A(x0_hat(x_t)) chained through the denoiser.
inline GuidanceEval guidance_loss_and_gradient(std::span<const double> x_t, double t, const Denoiser& den,
                                               const TaskSpec& task, GradTarget target) {
    require(task.has_measurement(), "guidance_gradient: task has no measurement");
    require(x_t.size() == task.n, "guidance_gradient: state length != task length");
    if (target == GradTarget::denoised) {
        require(den.supports_vjp(), "guidance_gradient: denoised target needs a denoiser with vjp");
        const Vec x0_hat = den.predict_x0(x_t, t);
        return detail::guidance_eval(x_t, t, x0_hat, den, task, target, true);
    }
    return detail::guidance_eval(x_t, t, {}, den, task, target, true);
}

inline Vec guidance_gradient(std::span<const double> x_t, double t, const Denoiser& den, const TaskSpec& task,
                             GradTarget target) {
    return guidance_loss_and_gradient(x_t, t, den, task, target).grad;
}

/// x_T = A^T y + (I - A^T A)(k z + (1 - k) xbar) for selection tasks (xbar
/// absent means pure z in the free region); z for everything else.
inline Vec init_sample(const TaskSpec& task, std::mt19937_64& rng) {
    validate_task(task);
    Vec x = standard_normal(task.n, rng);
    const LinearMask* mask = task.mask();
    if (!mask) return x;
    if (task.xbar) {
        const Vec& xbar = *task.xbar;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = task.k * x[i] + (1.0 - task.k) * xbar[i];
    }
    return consistency_project(x, task.y, *mask);
}

/// Rejects denoiser/task/config combinations before any compute.
inline void validate_run(const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg) {
    validate_task(task);
    require(cfg.steps >= 1, "sampler: steps must be >= 1");
    require(std::isfinite(cfg.xi) && cfg.xi >= 0.0, "sampler: xi must be finite and >= 0");
    require(den.dim() == 0 || den.dim() == task.n, "sampler: denoiser dimension != task length");
    if (cfg.data_consistency)
        require(task.permits_data_consistency(),
                "sampler: data consistency needs a selection-mask task (" + to_string(task.kind) + " has none)");
    if (cfg.xi > 0.0 && cfg.grad_target == GradTarget::denoised)
        require(den.supports_vjp(), "sampler: denoised guidance target needs a denoiser with vjp");
}

namespace detail {
inline void check_finite(std::span<const double> x, std::size_t step, const char* what) {
    if (!all_finite(x))
        throw NumericError(std::string("sampler: non-finite ") + what + " at step " + std::to_string(step), step);
}

template <typename StepFn>
SampleResult run_loop(const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg, Vec x, StepFn&& step) {
    validate_run(den, task, cfg);
    require(x.size() == task.n, "sampler: initial sample length != task length");
    const TimestepGrid grid = uniform_grid(cfg.steps, cfg.t_max, cfg.t_min);
    SampleResult result;
    result.trace.records.reserve(cfg.steps);
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        StepRecord rec;
        rec.step = i;
        rec.t = grid[i];
        rec.s = grid[i + 1];
        x = step(x, rec);
        check_finite(x, i, "state");
        if (cfg.data_consistency) x = consistency_project(x, task.y, *task.mask());
        if (cfg.on_step) cfg.on_step(rec, x);
        result.trace.records.push_back(std::move(rec));
    }
    result.x0 = std::move(x);
    return result;
}

inline GuidanceEval step_guidance(std::span<const double> x_t, double t, std::span<const double> x0_hat,
                                  const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg,
                                  std::size_t step) {
    if (!task.has_measurement()) return {};
    GuidanceEval g = guidance_eval(x_t, t, x0_hat, den, task, cfg.grad_target, cfg.xi > 0.0);
    if (!g.grad.empty()) check_finite(g.grad, step, "guidance gradient");
    return g;
}
}  // namespace detail

/// Guided DDPM from a given initial sample; rng supplies the per-step noise.
inline SampleResult ddpm_from(const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg, Vec x_init,
                              std::mt19937_64& rng) {
    return detail::run_loop(den, task, cfg, std::move(x_init), [&](const Vec& x_in, StepRecord& rec) {
        Vec x_t = x_in;
        const bool move_first = cfg.placement == GradientPlacement::current_state && task.has_measurement();
        GuidanceEval early;
        if (move_first) {
            const Vec probe = cfg.grad_target == GradTarget::denoised ? den.predict_x0(x_t, rec.t) : Vec{};
            early = detail::step_guidance(x_t, rec.t, probe, den, task, cfg, rec.step);
            for (std::size_t i = 0; i < early.grad.size(); ++i) x_t[i] -= cfg.xi * early.grad[i];
        }
        const Vec x0_hat = den.predict_x0(x_t, rec.t);
        detail::check_finite(x0_hat, rec.step, "x0 estimate");
        const DdpmCoefficients c = ddpm_coefficients(rec.t, rec.s);
        const Vec eps = standard_normal(x_t.size(), rng);
        Vec x_s(x_t.size());
        for (std::size_t i = 0; i < x_s.size(); ++i)
            x_s[i] = c.x0_coef * x0_hat[i] + c.xt_coef * x_t[i] + c.noise_std * eps[i];
        const GuidanceEval g =
            move_first ? std::move(early) : detail::step_guidance(x_t, rec.t, x0_hat, den, task, cfg, rec.step);
        rec.guidance_loss = g.loss;
        if (!g.grad.empty()) {
            rec.grad_norm = norm2(g.grad);
            if (!move_first)
                for (std::size_t i = 0; i < x_s.size(); ++i) x_s[i] -= cfg.xi * g.grad[i];
        }
        if (cfg.keep_x0_snapshots) rec.x0_snapshot = x0_hat;
        return x_s;
    });
}

/// Guided DDIM from a given initial sample. Deterministic.
inline SampleResult ddim_from(const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg, Vec x_init) {
    return detail::run_loop(den, task, cfg, std::move(x_init), [&](const Vec& x_t, StepRecord& rec) {
        const Vec x0_hat = den.predict_x0(x_t, rec.t);
        detail::check_finite(x0_hat, rec.step, "x0 estimate");
        const NoiseLevel lt = cosine_level(rec.t);
        const NoiseLevel ls = cosine_level(rec.s);
        Vec eps_hat(x_t.size());
        for (std::size_t i = 0; i < x_t.size(); ++i) eps_hat[i] = (x_t[i] - lt.alpha * x0_hat[i]) / lt.sigma;
        const GuidanceEval g = detail::step_guidance(x_t, rec.t, x0_hat, den, task, cfg, rec.step);
        rec.guidance_loss = g.loss;
        if (!g.grad.empty()) {
            rec.grad_norm = norm2(g.grad);
            for (std::size_t i = 0; i < eps_hat.size(); ++i) eps_hat[i] -= cfg.xi * lt.sigma * g.grad[i];
        }
        if (cfg.keep_x0_snapshots) rec.x0_snapshot = x0_hat;
        Vec x_s(x_t.size());
        for (std::size_t i = 0; i < x_s.size(); ++i) x_s[i] = ls.alpha * x0_hat[i] + ls.sigma * eps_hat[i];
        return x_s;
    });
}

inline SampleResult ddpm_guided(const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg,
                                std::mt19937_64& rng) {
    validate_run(den, task, cfg);
    Vec x = init_sample(task, rng);
    return ddpm_from(den, task, cfg, std::move(x), rng);
}

inline SampleResult ddim_guided(const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg,
                                std::mt19937_64& rng) {
    validate_run(den, task, cfg);
    return ddim_from(den, task, cfg, init_sample(task, rng));
}

inline SampleResult sample(const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg,
                           std::mt19937_64& rng) {
    return cfg.kind == SamplerKind::ddpm ? ddpm_guided(den, task, cfg, rng) : ddim_guided(den, task, cfg, rng);
}

/// Independent runs; run i uses run_rng(cfg.seed, i). Results do not depend
/// on the worker count.
inline std::vector<SampleResult> sample_batch(const Denoiser& den, const TaskSpec& task, const GuidanceConfig& cfg,
                                              std::size_t count, std::size_t workers = 1) {
    validate_run(den, task, cfg);
    std::vector<SampleResult> out(count);
    workers = std::max<std::size_t>(1, std::min(workers, count));
    auto work = [&](std::size_t w) {
        for (std::size_t i = w; i < count; i += workers) {
            auto rng = run_rng(cfg.seed, i);
            out[i] = sample(den, task, cfg, rng);
        }
    };
    if (workers == 1) {
        work(0);
        return out;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w)
        threads.emplace_back([&, w] {
            try {
                work(w);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& th : threads) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

inline void write_trace_csv(std::ostream& os, const SamplerTrace& trace) {
    os << "step,t,guidance_loss,grad_norm\n";
    char buf[128];
    for (const auto& r : trace.records) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", r.step, r.t, r.guidance_loss, r.grad_norm);
        os << buf;
    }
}

}  // namespace cdiff
