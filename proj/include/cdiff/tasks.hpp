// Ready-made conditional generation tasks: each binds a measurement operator,
// a distance, the target measurement and the initial-sample recipe.
#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>

#include "cdiff/core.hpp"
#include "cdiff/measure.hpp"

namespace cdiff {

enum class TaskKind {
    unconditional,
    continuation,
    infill,
    regenerate,
    transition,
    embedder_guidance,
    classifier_guidance,
};

inline std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::unconditional: return "unconditional";
        case TaskKind::continuation: return "continuation";
        case TaskKind::infill: return "infill";
        case TaskKind::regenerate: return "regenerate";
        case TaskKind::transition: return "transition";
        case TaskKind::embedder_guidance: return "embedder_guidance";
        case TaskKind::classifier_guidance: return "classifier_guidance";
    }
    return "unknown";
}

inline constexpr double kDefaultNoiseMix = 0.85;
inline constexpr double kDefaultSampleRate = 16000.0;

/// Time spans used by the music editing experiments, converted to samples
/// at a given rate.
struct TaskDurations {
    double prompt_s = 2.4;
    double total_s = 6.0;
    double hole_s = 2.0;
    double fade_s = 2.5;

    static std::size_t samples(double seconds, double rate) {
        return static_cast<std::size_t>(std::llround(seconds * rate));
    }
};

struct TaskSpec {
    TaskKind kind = TaskKind::unconditional;
    std::shared_ptr<const MeasurementOp> op;  // null for unconditional
    std::shared_ptr<const Distance> distance;
    Vec y;
    std::optional<Vec> xbar;
    double k = 1.0;  // noise mix for the free region of the initial sample
    std::size_t n = 0;
    double sample_rate = 0.0;

    const LinearMask* mask() const { return op ? op->selection() : nullptr; }
    bool has_measurement() const { return op != nullptr; }
    bool permits_data_consistency() const { return mask() != nullptr; }
};

inline void validate_task(const TaskSpec& task) {
    require(task.n > 0, "task: n must be positive");
    require(task.k >= 0.0 && task.k <= 1.0, "task: k must lie in [0,1]");
    if (task.kind == TaskKind::unconditional) {
        require(!task.op, "task: unconditional task takes no operator");
        return;
    }
    require(task.op && task.distance, "task: operator and distance required");
    require(task.op->input_dim() == task.n, "task: operator input size != n");
    require(task.y.size() == task.op->output_dim(), "task: y size != operator output size");
    const bool selection_kind = task.kind == TaskKind::continuation || task.kind == TaskKind::infill ||
                                task.kind == TaskKind::regenerate || task.kind == TaskKind::transition;
    require(selection_kind == task.op->is_linear_selection(),
            "task: " + to_string(task.kind) + " has the wrong operator type");
    if (task.xbar) require(task.xbar->size() == task.n, "task: xbar size != n");
}

inline TaskSpec unconditional_task(std::size_t n, double sample_rate = 0.0) {
    require(n > 0, "unconditional_task: n must be positive");
    TaskSpec spec;
    spec.n = n;
    spec.sample_rate = sample_rate;
    return spec;
}

/// Keep the prompt as left context and generate the rest up to total_len.
inline TaskSpec continuation_task(const Signal& prompt, std::size_t total_len) {
    validate_signal(prompt);
    require(prompt.size() < total_len, "continuation_task: prompt must be shorter than total length");
    const LinearMask mask = LinearMask::left(prompt.size(), total_len);
    TaskSpec spec;
    spec.kind = TaskKind::continuation;
    spec.op = std::make_shared<const MaskOperator>(mask);
    spec.distance = l1_distance();
    spec.y = prompt.samples;
    spec.n = total_len;
    spec.sample_rate = prompt.sample_rate;
    return spec;
}

namespace detail {
inline LinearMask hole_mask(std::size_t n, std::size_t hole_start, std::size_t hole_len) {
    require(hole_len >= 1, "hole length must be >= 1");
    require(hole_start > 0, "hole must leave a left context");
    require(hole_start + hole_len < n, "hole must leave a right context");
    return LinearMask::infill(hole_start, n - hole_start - hole_len, n);
}
}  // namespace detail

/// Regenerate [hole_start, hole_start + hole_len) given both contexts.
inline TaskSpec infill_task(const Signal& original, std::size_t hole_start, std::size_t hole_len) {
    validate_signal(original);
    const LinearMask mask = detail::hole_mask(original.size(), hole_start, hole_len);
    TaskSpec spec;
    spec.kind = TaskKind::infill;
    spec.op = std::make_shared<const MaskOperator>(mask);
    spec.distance = l1_distance();
    spec.y = mask.apply(original.samples);
    spec.n = original.size();
    spec.sample_rate = original.sample_rate;
    return spec;
}

/// Infill whose initial hole content is k z + (1 - k) original.
inline TaskSpec regenerate_task(const Signal& original, std::size_t hole_start, std::size_t hole_len,
                                double k = kDefaultNoiseMix) {
    require(k >= 0.0 && k <= 1.0, "regenerate_task: k must lie in [0,1]");
    TaskSpec spec = infill_task(original, hole_start, hole_len);
    spec.kind = TaskKind::regenerate;
    spec.xbar = original.samples;
    spec.k = k;
    return spec;
}

/// Regenerate a constant-power crossfade between two tracks, keeping the
/// left context of track A and the right context of track B.
inline TaskSpec transition_task(const Signal& track_a, const Signal& track_b, std::size_t c_left,
                                std::size_t c_right, std::size_t fade_len, double k = kDefaultNoiseMix) {
    validate_signal(track_a);
    validate_signal(track_b);
    require(k >= 0.0 && k <= 1.0, "transition_task: k must lie in [0,1]");
    require(track_a.sample_rate == track_b.sample_rate, "transition_task: sample rates differ");
    require(c_left >= 1 && c_right >= 1, "transition_task: both contexts must be non-empty");
    const std::size_t n = c_left + fade_len + c_right;
    TaskSpec spec;
    spec.kind = TaskKind::transition;
    spec.xbar = build_transition_target(track_a.samples, track_b.samples, c_left, c_right, fade_len);
    const LinearMask mask = LinearMask::infill(c_left, c_right, n);
    spec.op = std::make_shared<const MaskOperator>(mask);
    spec.distance = l1_distance();
    spec.y = mask.apply(*spec.xbar);
    spec.k = k;
    spec.n = n;
    spec.sample_rate = track_a.sample_rate;
    return spec;
}

/// Pull samples toward the embedding of a reference signal. The distance
/// defaults to squared L2; pass l2_distance() for the plain norm.
inline TaskSpec embedder_guidance_task(const Signal& reference, std::shared_ptr<const MeasurementOp> embedder,
                                       std::shared_ptr<const Distance> distance = l2sq_distance()) {
    validate_signal(reference);
    require(embedder != nullptr, "embedder_guidance_task: null embedder");
    require(!embedder->is_linear_selection(), "embedder_guidance_task: operator must be an embedder");
    require(embedder->input_dim() == reference.size(), "embedder_guidance_task: embedder input dim != len(reference)");
    TaskSpec spec;
    spec.kind = TaskKind::embedder_guidance;
    spec.y = embedder->apply(reference.samples);
    spec.op = std::move(embedder);
    spec.distance = std::move(distance);
    spec.xbar = reference.samples;
    spec.n = reference.size();
    spec.sample_rate = reference.sample_rate;
    return spec;
}

/// Steer samples toward target class probabilities under a BCE loss.
inline TaskSpec classifier_guidance_task(const Vec& target_labels, std::shared_ptr<const MeasurementOp> classifier,
                                         double sample_rate = 0.0) {
    require(classifier != nullptr, "classifier_guidance_task: null classifier");
    require(!classifier->is_linear_selection(), "classifier_guidance_task: operator must be a classifier");
    require(target_labels.size() == classifier->output_dim(), "classifier_guidance_task: label dimension mismatch");
    for (double v : target_labels)
        require(v >= 0.0 && v <= 1.0, "classifier_guidance_task: labels must lie in [0,1], got " + std::to_string(v));
    TaskSpec spec;
    spec.kind = TaskKind::classifier_guidance;
    spec.y = target_labels;
    spec.n = classifier->input_dim();
    spec.op = std::move(classifier);
    spec.distance = bce_distance();
    spec.sample_rate = sample_rate;
    return spec;
}

}  // namespace cdiff
