// Run configuration for the cdiff command-line tool: JSON in, validated
// struct out. Unknown keys are rejected so typos fail before compute starts.
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "cdiff/core.hpp"
#include "cdiff/measure.hpp"
#include "cdiff/sampler.hpp"
#include "cdiff/synth.hpp"
#include "cdiff/tasks.hpp"

namespace cdiff::cli {

using nlohmann::json;

struct TaskParams {
    std::string input;    // wav: original / prompt / reference / track A
    std::string input_b;  // wav: track B for transitions
    double prompt_s = 2.4;
    double total_s = 6.0;
    std::optional<double> hole_start_s;  // centred when absent
    double hole_s = 2.0;
    double left_s = 1.75;
    double right_s = 1.75;
    double fade_s = 2.5;
    double k = kDefaultNoiseMix;
    std::size_t length = 0;  // samples for generate / guide-class; 0 means total_s
    std::vector<double> labels{1.0};
    std::uint64_t operator_seed = 1;
    std::size_t embed_dim = 16;
    std::string distance = "l2sq";
};

struct SamplerParams {
    SamplerKind kind = SamplerKind::ddpm;
    std::size_t steps = 50;
    double xi = kWaveformStepSize;
    GradTarget grad_target = GradTarget::direct;
    GradientPlacement placement = GradientPlacement::next_state;
    std::optional<bool> data_consistency;  // defaults to on for selection-mask tasks
    std::uint64_t seed = 0;
    std::size_t count = 1;
    std::size_t workers = 1;
};

struct DenoiserParams {
    std::string kind = "ar1";  // gaussian | ar1 | gmm | mlp
    double mean = 0.0;
    double variance = 0.0625;
    double rho = 0.9;
    std::vector<double> weights{0.5, 0.5};
    std::vector<double> means{-0.25, 0.25};
    std::string path;
};

struct TrainParams {
    std::size_t steps = 5000;
    double learning_rate = 3e-3;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::size_t width = 128;
    std::size_t hidden_layers = 3;
    std::size_t dataset_size = 4096;
    std::vector<double> weights{0.3, 0.7};
    std::vector<double> means{-0.1, 0.1};
    double stddev = 0.02;
};

struct EvalParams {
    std::vector<std::size_t> steps{50, 500};
    std::string task = "infill";
};

struct RunConfig {
    std::string command;
    TaskParams task;
    SamplerParams sampler;
    DenoiserParams denoiser;
    TrainParams train;
    EvalParams eval;
    SynthParams synth;
    double sample_rate = kDefaultSampleRate;
    std::string output;
};

// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    require(j.is_object(), "config: '" + where + "' must be an object");
    for (const auto& [key, _] : j.items())
        require(allowed.count(key) == 1, "config: unknown key '" + where + "." + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ContractError("config: bad value for '" + where + "." + key + "': " + e.what());
    }
}

template <typename T>
void read(const json& j, const char* key, std::optional<T>& out, const std::string& where) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    T v{};
    read(j, key, v, where);
    out = v;
}

inline SamplerKind sampler_kind(const std::string& s) {
    if (s == "ddpm") return SamplerKind::ddpm;
    if (s == "ddim") return SamplerKind::ddim;
    throw ContractError("config: sampler.kind must be ddpm or ddim, got '" + s + "'");
}
inline GradTarget grad_target(const std::string& s) {
    if (s == "direct") return GradTarget::direct;
    if (s == "denoised") return GradTarget::denoised;
    throw ContractError("config: sampler.grad_target must be direct or denoised, got '" + s + "'");
}
inline GradientPlacement placement(const std::string& s) {
    if (s == "next_state") return GradientPlacement::next_state;
    if (s == "current_state") return GradientPlacement::current_state;
    throw ContractError("config: sampler.placement must be next_state or current_state, got '" + s + "'");
}

inline const char* name(SamplerKind k) { return k == SamplerKind::ddpm ? "ddpm" : "ddim"; }
inline const char* name(GradTarget g) { return g == GradTarget::direct ? "direct" : "denoised"; }
inline const char* name(GradientPlacement p) {
    return p == GradientPlacement::next_state ? "next_state" : "current_state";
}

}  // namespace detail

inline RunConfig parse_config(const json& j, const std::string& command) {
    using detail::read;
    RunConfig c;
    c.command = command;
    detail::reject_unknown(j, {"command", "task", "sampler", "denoiser", "train", "eval", "synth", "audio", "output"}, "");
    read(j, "output", c.output, "");

    if (j.contains("audio")) {
        const json& a = j.at("audio");
        detail::reject_unknown(a, {"sample_rate", "channels"}, "audio");
        read(a, "sample_rate", c.sample_rate, "audio");
        if (a.contains("channels"))
            require(a.at("channels") == 1, "config: only mono audio (audio.channels = 1) is supported");
    }
    if (j.contains("task")) {
        const json& t = j.at("task");
        detail::reject_unknown(t,
                               {"input", "input_b", "prompt_s", "total_s", "hole_start_s", "hole_s", "left_s",
                                "right_s", "fade_s", "k", "length", "labels", "operator_seed", "embed_dim",
                                "distance"},
                               "task");
        TaskParams& p = c.task;
        read(t, "input", p.input, "task");
        read(t, "input_b", p.input_b, "task");
        read(t, "prompt_s", p.prompt_s, "task");
        read(t, "total_s", p.total_s, "task");
        read(t, "hole_start_s", p.hole_start_s, "task");
        read(t, "hole_s", p.hole_s, "task");
        read(t, "left_s", p.left_s, "task");
        read(t, "right_s", p.right_s, "task");
        read(t, "fade_s", p.fade_s, "task");
        read(t, "k", p.k, "task");
        read(t, "length", p.length, "task");
        read(t, "labels", p.labels, "task");
        read(t, "operator_seed", p.operator_seed, "task");
        read(t, "embed_dim", p.embed_dim, "task");
        read(t, "distance", p.distance, "task");
    }
    if (j.contains("sampler")) {
        const json& s = j.at("sampler");
        detail::reject_unknown(
            s, {"kind", "steps", "xi", "grad_target", "placement", "data_consistency", "seed", "count", "workers"},
            "sampler");
        SamplerParams& p = c.sampler;
        std::string kind = detail::name(p.kind), target = detail::name(p.grad_target),
                    place = detail::name(p.placement);
        read(s, "kind", kind, "sampler");
        read(s, "grad_target", target, "sampler");
        read(s, "placement", place, "sampler");
        p.kind = detail::sampler_kind(kind);
        p.grad_target = detail::grad_target(target);
        p.placement = detail::placement(place);
        read(s, "steps", p.steps, "sampler");
        read(s, "xi", p.xi, "sampler");
        read(s, "data_consistency", p.data_consistency, "sampler");
        read(s, "seed", p.seed, "sampler");
        read(s, "count", p.count, "sampler");
        read(s, "workers", p.workers, "sampler");
    }
    if (j.contains("denoiser")) {
        const json& d = j.at("denoiser");
        detail::reject_unknown(d, {"kind", "mean", "variance", "rho", "weights", "means", "path"}, "denoiser");
        DenoiserParams& p = c.denoiser;
        read(d, "kind", p.kind, "denoiser");
        read(d, "mean", p.mean, "denoiser");
        read(d, "variance", p.variance, "denoiser");
        read(d, "rho", p.rho, "denoiser");
        read(d, "weights", p.weights, "denoiser");
        read(d, "means", p.means, "denoiser");
        read(d, "path", p.path, "denoiser");
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        detail::reject_unknown(t,
                               {"steps", "learning_rate", "momentum", "batch_size", "width", "hidden_layers",
                                "dataset_size", "weights", "means", "stddev"},
                               "train");
        TrainParams& p = c.train;
        read(t, "steps", p.steps, "train");
        read(t, "learning_rate", p.learning_rate, "train");
        read(t, "momentum", p.momentum, "train");
        read(t, "batch_size", p.batch_size, "train");
        read(t, "width", p.width, "train");
        read(t, "hidden_layers", p.hidden_layers, "train");
        read(t, "dataset_size", p.dataset_size, "train");
        read(t, "weights", p.weights, "train");
        read(t, "means", p.means, "train");
        read(t, "stddev", p.stddev, "train");
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        detail::reject_unknown(e, {"steps", "task"}, "eval");
        read(e, "steps", c.eval.steps, "eval");
        read(e, "task", c.eval.task, "eval");
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        detail::reject_unknown(s,
                               {"kind", "count", "length", "seed", "frequencies", "amplitude", "rho", "scale",
                                "weights", "means", "stddev"},
                               "synth");
        SynthParams& p = c.synth;
        std::string kind = to_string(p.kind);
        read(s, "kind", kind, "synth");
        p.kind = synth_kind_from_string(kind);
        read(s, "count", p.count, "synth");
        read(s, "length", p.length, "synth");
        read(s, "seed", p.seed, "synth");
        read(s, "frequencies", p.frequencies, "synth");
        read(s, "amplitude", p.amplitude, "synth");
        read(s, "rho", p.rho, "synth");
        read(s, "scale", p.scale, "synth");
        read(s, "weights", p.weights, "synth");
        read(s, "means", p.means, "synth");
        read(s, "stddev", p.stddev, "synth");
    }
    c.synth.sample_rate = c.sample_rate;
    return c;
}

/// Checks everything that does not need input files.
inline void validate_config(const RunConfig& c) {
    require(c.sample_rate > 0.0 && std::isfinite(c.sample_rate), "config: audio.sample_rate must be positive");
    const SamplerParams& s = c.sampler;
    require(s.steps >= 1, "config: sampler.steps must be >= 1");
    require(std::isfinite(s.xi) && s.xi >= 0.0, "config: sampler.xi must be finite and >= 0");
    require(s.count >= 1, "config: sampler.count must be >= 1");
    require(s.workers >= 1, "config: sampler.workers must be >= 1");
    const TaskParams& t = c.task;
    require(t.k >= 0.0 && t.k <= 1.0, "config: task.k must lie in [0,1]");
    for (double v : {t.prompt_s, t.total_s, t.hole_s, t.left_s, t.right_s})
        require(std::isfinite(v) && v > 0.0, "config: task durations must be positive");
    require(std::isfinite(t.fade_s) && t.fade_s >= 0.0, "config: task.fade_s must be >= 0");
    require(t.prompt_s < t.total_s, "config: task.prompt_s must be shorter than task.total_s");
    for (double v : t.labels) require(v >= 0.0 && v <= 1.0, "config: task.labels must lie in [0,1]");
    require(!t.labels.empty(), "config: task.labels must be non-empty");
    require(t.embed_dim >= 1, "config: task.embed_dim must be >= 1");
    distance_by_name(t.distance);
    const DenoiserParams& d = c.denoiser;
    static const std::set<std::string> kinds{"gaussian", "ar1", "gmm", "mlp"};
    require(kinds.count(d.kind) == 1, "config: denoiser.kind must be gaussian, ar1, gmm or mlp");
    if (d.kind == "gaussian" || d.kind == "ar1" || d.kind == "gmm")
        require(d.variance > 0.0 || (d.kind == "gmm" && d.variance >= 0.0), "config: denoiser.variance must be > 0");
    if (d.kind == "ar1") require(std::abs(d.rho) < 1.0, "config: denoiser.rho must satisfy |rho| < 1");
    if (d.kind == "gmm") require(d.weights.size() == d.means.size() && !d.weights.empty(),
                                 "config: denoiser.weights and denoiser.means must have equal non-zero length");
    if (d.kind == "mlp") require(!d.path.empty(), "config: denoiser.path is required for the mlp denoiser");
    const TrainParams& tr = c.train;
    require(tr.steps >= 1 && tr.batch_size >= 1 && tr.width >= 1 && tr.hidden_layers >= 1 && tr.dataset_size >= 1,
            "config: train sizes must be >= 1");
    require(tr.learning_rate > 0.0 && tr.momentum >= 0.0 && tr.momentum < 1.0,
            "config: train needs learning_rate > 0 and momentum in [0,1)");
    require(!c.eval.steps.empty(), "config: eval.steps must be non-empty");
    for (std::size_t n : c.eval.steps) require(n >= 1, "config: eval.steps entries must be >= 1");
    c.synth.validate();
}

inline json to_json(const RunConfig& c) {
    json j;
    j["command"] = c.command;
    j["output"] = c.output;
    j["audio"] = {{"sample_rate", c.sample_rate}, {"channels", 1}};
    const TaskParams& t = c.task;
    j["task"] = {{"input", t.input},       {"input_b", t.input_b},     {"prompt_s", t.prompt_s},
                 {"total_s", t.total_s},   {"hole_s", t.hole_s},       {"left_s", t.left_s},
                 {"right_s", t.right_s},   {"fade_s", t.fade_s},       {"k", t.k},
                 {"length", t.length},     {"labels", t.labels},       {"operator_seed", t.operator_seed},
                 {"embed_dim", t.embed_dim}, {"distance", t.distance}};
    j["task"]["hole_start_s"] = t.hole_start_s ? json(*t.hole_start_s) : json(nullptr);
    const SamplerParams& s = c.sampler;
    j["sampler"] = {{"kind", detail::name(s.kind)},
                    {"steps", s.steps},
                    {"xi", s.xi},
                    {"grad_target", detail::name(s.grad_target)},
                    {"placement", detail::name(s.placement)},
                    {"seed", s.seed},
                    {"count", s.count},
                    {"workers", s.workers}};
    j["sampler"]["data_consistency"] = s.data_consistency ? json(*s.data_consistency) : json(nullptr);
    const DenoiserParams& d = c.denoiser;
    j["denoiser"] = {{"kind", d.kind},       {"mean", d.mean},   {"variance", d.variance}, {"rho", d.rho},
                     {"weights", d.weights}, {"means", d.means}, {"path", d.path}};
    const TrainParams& tr = c.train;
    j["train"] = {{"steps", tr.steps},
                  {"learning_rate", tr.learning_rate},
                  {"momentum", tr.momentum},
                  {"batch_size", tr.batch_size},
                  {"width", tr.width},
                  {"hidden_layers", tr.hidden_layers},
                  {"dataset_size", tr.dataset_size},
                  {"weights", tr.weights},
                  {"means", tr.means},
                  {"stddev", tr.stddev}};
    j["eval"] = {{"steps", c.eval.steps}, {"task", c.eval.task}};
    const SynthParams& y = c.synth;
    j["synth"] = {{"kind", to_string(y.kind)}, {"count", y.count},   {"length", y.length},
                  {"seed", y.seed},            {"frequencies", y.frequencies}, {"amplitude", y.amplitude},
                  {"rho", y.rho},              {"scale", y.scale},   {"weights", y.weights},
                  {"means", y.means},          {"stddev", y.stddev}};
    return j;
}

}  // namespace cdiff::cli
