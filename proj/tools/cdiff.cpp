// cdiff: guided diffusion sampling for audio editing tasks on the command line.
//
//   cdiff infill --input clip.wav --out runs/infill --seed 3
//   cdiff eval --config eval.json --workers 4
//
// Every subcommand reads an optional JSON config, applies flag overrides on
// top, echoes the effective config as config.json in the output directory and
// writes WAV, trace CSV and metrics CSV files there. Failures print an error
// JSON {stage, message, step} and exit non-zero.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdiff/denoise.hpp"
#include "cdiff/measure.hpp"
#include "cdiff/metrics.hpp"
#include "cdiff/mlp.hpp"
#include "cdiff/sampler.hpp"
#include "cdiff/synth.hpp"
#include "cdiff/tasks.hpp"
#include "cdiff/wav.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace cdiff;
using cdiff::cli::json;
using cdiff::cli::RunConfig;

namespace {

constexpr const char* kOutputRootEnv = "CDIFF_OUTPUT_ROOT";

// Tracks the current pipeline stage for error reports.
std::string g_stage = "config";

struct Flags {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps;
    std::optional<double> xi;
    std::optional<std::string> sampler;
    std::optional<std::string> grad_target;
    std::optional<std::string> placement;
    std::optional<bool> data_consistency;
    std::optional<std::size_t> count;
    std::optional<std::size_t> workers;
    std::optional<std::string> denoiser;
    std::optional<std::string> denoiser_file;
    std::optional<std::string> input;
    std::optional<std::string> input_b;
    std::optional<double> k;
    std::optional<std::vector<double>> labels;
    std::optional<std::size_t> length;
    std::optional<double> sample_rate;
    std::optional<std::uint64_t> operator_seed;
    std::optional<std::string> distance;
    std::optional<double> learning_rate;
    std::optional<std::string> kind;
    std::optional<std::string> task;
    std::optional<std::vector<std::size_t>> eval_steps;
};

void add_common(CLI::App* app, Flags& f) {
    app->add_option("-c,--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("-o,--out", f.out, "Output directory");
    app->add_option("--seed", f.seed, "Random seed");
    app->add_option("--sample-rate", f.sample_rate, "Audio sample rate in Hz");
}

void add_sampling(CLI::App* app, Flags& f) {
    app->add_option("--steps", f.steps, "Number of sampler steps");
    app->add_option("--xi", f.xi, "Guidance step size");
    app->add_option("--sampler", f.sampler, "ddpm or ddim");
    app->add_option("--grad-target", f.grad_target, "direct or denoised");
    app->add_option("--placement", f.placement, "next_state or current_state (ddpm)");
    app->add_option("--data-consistency", f.data_consistency, "Project onto the context after every step");
    app->add_option("--count", f.count, "Number of samples");
    app->add_option("--workers", f.workers, "Worker threads");
    app->add_option("--denoiser", f.denoiser, "gaussian, ar1, gmm or mlp");
    app->add_option("--denoiser-file", f.denoiser_file, "Parameter file for the mlp denoiser");
    app->add_option("--k", f.k, "Noise mix for the initial sample");
    app->add_option("--operator-seed", f.operator_seed, "Seed of the toy embedder / classifier");
    app->add_option("--distance", f.distance, "l1, l2, l2sq or bce");
    app->add_option("--labels", f.labels, "Target class probabilities");
    app->add_option("--length", f.length, "Signal length in samples");
    app->add_option("-i,--input", f.input, "Input WAV");
    app->add_option("--input-b", f.input_b, "Second input WAV (transition)");
}

json load_json(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw ContractError("config: cannot open " + path);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw ContractError("config: " + path + " is not valid JSON: " + e.what());
    }
}

// Flags win over the config file.
void apply_flags(json& j, const Flags& f, const std::string& command) {
    auto set = [&](const char* section, const char* key, const auto& opt) {
        if (opt) j[section][key] = *opt;
    };
    if (f.out) j["output"] = *f.out;
    set("audio", "sample_rate", f.sample_rate);
    if (command == "synth-data") {
        set("synth", "seed", f.seed);
        set("synth", "count", f.count);
        set("synth", "length", f.length);
        set("synth", "kind", f.kind);
        return;
    }
    set("sampler", "seed", f.seed);
    if (command == "train-toy") {
        set("train", "steps", f.steps);
        set("train", "learning_rate", f.learning_rate);
        return;
    }
    set("sampler", "steps", f.steps);
    set("sampler", "xi", f.xi);
    set("sampler", "kind", f.sampler);
    set("sampler", "grad_target", f.grad_target);
    set("sampler", "placement", f.placement);
    set("sampler", "data_consistency", f.data_consistency);
    set("sampler", "count", f.count);
    set("sampler", "workers", f.workers);
    set("denoiser", "kind", f.denoiser);
    set("denoiser", "path", f.denoiser_file);
    set("task", "input", f.input);
    set("task", "input_b", f.input_b);
    set("task", "k", f.k);
    set("task", "labels", f.labels);
    set("task", "length", f.length);
    set("task", "operator_seed", f.operator_seed);
    set("task", "distance", f.distance);
    set("eval", "task", f.task);
    set("eval", "steps", f.eval_steps);
}

fs::path default_output(const std::string& command) {
    const char* root = std::getenv(kOutputRootEnv);
    return fs::path(root && *root ? root : "cdiff-out") / command;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp.string());
        os << text;
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string indexed(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03zu%s", stem, i, ext);
    return buf;
}

std::size_t seconds_to_samples(double s, double rate) { return TaskDurations::samples(s, rate); }

Signal load_input(const std::string& path, const RunConfig& c, const char* what) {
    require(!path.empty(), std::string("config: ") + what + " is required for '" + c.command + "'");
    g_stage = "io";
    Signal s = read_wav(path);
    require(s.sample_rate == c.sample_rate,
            std::string(what) + " " + path + " has sample rate " + std::to_string(s.sample_rate) +
                " but the run uses " + std::to_string(c.sample_rate));
    g_stage = "config";
    return s;
}

// ---------------------------------------------------------------------------

struct Prepared {
    TaskSpec task;
    std::optional<Vec> reference;  // signal the output is compared against, when one exists
};

Prepared prepare_task(const std::string& kind, const RunConfig& c) {
    const auto& p = c.task;
    const double rate = c.sample_rate;
    Prepared out;
    if (kind == "generate") {
        const std::size_t n = p.length ? p.length : seconds_to_samples(p.total_s, rate);
        out.task = unconditional_task(n, rate);
    } else if (kind == "continue") {
        const Signal in = load_input(p.input, c, "task.input");
        const std::size_t prompt = seconds_to_samples(p.prompt_s, rate);
        const std::size_t total = seconds_to_samples(p.total_s, rate);
        require(in.size() >= prompt, "continue: input shorter than the prompt");
        Signal head(Vec(in.samples.begin(), in.samples.begin() + static_cast<std::ptrdiff_t>(prompt)), rate);
        out.task = continuation_task(head, total);
        if (in.size() >= total)
            out.reference = Vec(in.samples.begin(), in.samples.begin() + static_cast<std::ptrdiff_t>(total));
    } else if (kind == "infill" || kind == "regen") {
        const Signal in = load_input(p.input, c, "task.input");
        const std::size_t hole = seconds_to_samples(p.hole_s, rate);
        require(hole < in.size(), kind + ": hole longer than the input");
        const std::size_t start =
            p.hole_start_s ? seconds_to_samples(*p.hole_start_s, rate) : (in.size() - hole) / 2;
        out.task = kind == "infill" ? infill_task(in, start, hole) : regenerate_task(in, start, hole, p.k);
        out.reference = in.samples;
    } else if (kind == "transition") {
        const Signal a = load_input(p.input, c, "task.input");
        const Signal b = load_input(p.input_b, c, "task.input_b");
        out.task = transition_task(a, b, seconds_to_samples(p.left_s, rate), seconds_to_samples(p.right_s, rate),
                                   seconds_to_samples(p.fade_s, rate), p.k);
        out.reference = *out.task.xbar;
    } else if (kind == "guide-embed") {
        const Signal ref = load_input(p.input, c, "task.input");
        out.task = embedder_guidance_task(ref, toy_embedder(p.operator_seed, ref.size(), p.embed_dim),
                                          distance_by_name(p.distance));
        out.reference = ref.samples;
    } else if (kind == "guide-class") {
        const std::size_t n = p.length ? p.length : seconds_to_samples(p.total_s, rate);
        out.task = classifier_guidance_task(p.labels, toy_classifier(p.operator_seed, n, p.labels.size()), rate);
    } else {
        throw ContractError("unknown task '" + kind + "'");
    }
    return out;
}

std::shared_ptr<const Denoiser> make_denoiser(const RunConfig& c, std::size_t n) {
    const auto& d = c.denoiser;
    if (d.kind == "gaussian") return gaussian_denoiser(GaussianPrior::isotropic(Vec(n, d.mean), d.variance));
    if (d.kind == "ar1") return gaussian_denoiser(GaussianPrior::ar1(Vec(n, d.mean), d.rho, d.variance));
    if (d.kind == "gmm") {
        std::vector<Vec> means;
        for (double m : d.means) means.emplace_back(n, m);
        return gmm_denoiser(d.weights, std::move(means), d.variance);
    }
    g_stage = "io";
    auto model = std::make_shared<const MlpDenoiser>(MlpDenoiser::load(d.path));
    g_stage = "config";
    require(model->dim() == n, "denoiser: mlp file has signal dim " + std::to_string(model->dim()) +
                                   " but the task needs " + std::to_string(n));
    return model;
}

GuidanceConfig make_guidance(const RunConfig& c, const TaskSpec& task) {
    const auto& s = c.sampler;
    GuidanceConfig g;
    g.kind = s.kind;
    g.xi = s.xi;
    g.grad_target = s.grad_target;
    g.placement = s.placement;
    g.data_consistency = s.data_consistency.value_or(task.permits_data_consistency());
    g.steps = s.steps;
    g.seed = s.seed;
    return g;
}

// Per-sample metrics keyed by name; averaged over samples by the caller.
std::vector<std::pair<std::string, double>> sample_metrics(const Prepared& prep, const Vec& x0, double rate) {
    std::vector<std::pair<std::string, double>> m;
    const TaskSpec& task = prep.task;
    if (task.has_measurement()) {
        const Vec y_hat = task.op->apply(x0);
        m.emplace_back("final_guidance_loss", task.distance->eval(task.y, y_hat));
        if (task.kind == TaskKind::embedder_guidance) m.emplace_back("embedding_l2", euclidean(task.y, y_hat));
        if (task.kind == TaskKind::classifier_guidance) {
            double agree = 0.0;
            for (std::size_t i = 0; i < y_hat.size(); ++i)
                agree += task.y[i] * y_hat[i] + (1.0 - task.y[i]) * (1.0 - y_hat[i]);
            m.emplace_back("target_probability", agree / static_cast<double>(y_hat.size()));
        }
    }
    MelConfig mel;
    mel.sample_rate = rate;
    if (prep.reference && prep.reference->size() == x0.size() && x0.size() >= mel.fft_size)
        m.emplace_back("mel_distance", mel_reconstruction_distance(Signal(x0, rate), Signal(*prep.reference, rate), mel));
    double ss = 0.0;
    for (double v : x0) ss += v * v;
    m.emplace_back("rms", std::sqrt(ss / static_cast<double>(x0.size())));
    return m;
}

std::vector<MetricRow> average_metrics(const Prepared& prep, const std::vector<SampleResult>& results, double rate,
                                       const std::string& task_name, const std::string& suffix, std::uint64_t seed) {
    std::vector<std::string> names;
    std::vector<double> sums;
    for (const auto& r : results) {
        const auto m = sample_metrics(prep, r.x0, rate);
        if (names.empty())
            for (const auto& [name, _] : m) {
                names.push_back(name);
                sums.push_back(0.0);
            }
        for (std::size_t i = 0; i < m.size(); ++i) sums[i] += m[i].second;
    }
    std::vector<MetricRow> rows;
    for (std::size_t i = 0; i < names.size(); ++i)
        rows.push_back({task_name, names[i] + suffix, sums[i] / static_cast<double>(results.size()), results.size(),
                        seed});
    return rows;
}

void write_sample_files(const fs::path& dir, const std::string& wav_name, const std::string& trace_name,
                        const SampleResult& r, double rate) {
    write_wav(dir / wav_name, Signal(r.x0, rate));
    std::ostringstream trace;
    write_trace_csv(trace, r.trace);
    write_text(dir / trace_name, trace.str());
}

void write_metrics(const fs::path& dir, const std::vector<MetricRow>& rows) {
    std::ostringstream os;
    write_metrics_csv(os, rows);
    write_text(dir / "metrics.csv", os.str());
}

// ---------------------------------------------------------------------------

void run_sampling(const RunConfig& c, const fs::path& dir) {
    Prepared prep = prepare_task(c.command, c);
    auto den = make_denoiser(c, prep.task.n);
    const GuidanceConfig g = make_guidance(c, prep.task);
    validate_run(*den, prep.task, g);

    g_stage = "sample";
    const auto results = sample_batch(*den, prep.task, g, c.sampler.count, c.sampler.workers);

    g_stage = "metrics";
    const auto rows = average_metrics(prep, results, c.sample_rate, to_string(prep.task.kind), "", c.sampler.seed);

    g_stage = "write";
    for (std::size_t i = 0; i < results.size(); ++i)
        write_sample_files(dir, indexed("sample", i, ".wav"), indexed("trace", i, ".csv"), results[i], c.sample_rate);
    write_metrics(dir, rows);
}

void run_eval(const RunConfig& c, const fs::path& dir) {
    Prepared prep = prepare_task(c.eval.task, c);
    auto den = make_denoiser(c, prep.task.n);
    std::vector<MetricRow> rows;
    for (std::size_t steps : c.eval.steps) {
        GuidanceConfig g = make_guidance(c, prep.task);
        g.steps = steps;
        validate_run(*den, prep.task, g);
        g_stage = "sample";
        const auto results = sample_batch(*den, prep.task, g, c.sampler.count, c.sampler.workers);
        g_stage = "metrics";
        const std::string suffix = "@steps=" + std::to_string(steps);
        for (auto& r : average_metrics(prep, results, c.sample_rate, to_string(prep.task.kind), suffix, c.sampler.seed))
            rows.push_back(std::move(r));
        g_stage = "write";
        for (std::size_t i = 0; i < results.size(); ++i) {
            const fs::path run_dir = dir / ("steps_" + std::to_string(steps)) / indexed("run", i, "");
            fs::create_directories(run_dir);
            write_sample_files(run_dir, "sample.wav", "trace.csv", results[i], c.sample_rate);
        }
        g_stage = "config";
    }
    g_stage = "write";
    write_metrics(dir, rows);
}

void run_train(const RunConfig& c, const fs::path& dir) {
    const auto& t = c.train;
    SynthParams data;
    data.kind = SynthKind::gmm;
    data.count = t.dataset_size;
    data.length = 1;
    data.seed = c.sampler.seed;
    data.weights = t.weights;
    data.means = t.means;
    data.stddev = t.stddev;
    data.validate();
    std::vector<Vec> dataset;
    for (auto& s : synth_dataset(data)) dataset.push_back(std::move(s.samples));

    MlpShape shape;
    shape.width = t.width;
    shape.hidden_layers = t.hidden_layers;
    MlpDenoiser model(shape, c.sampler.seed);

    // Fixed draws on a fixed slice make the before/after losses comparable.
    auto eval_rng = run_rng(c.sampler.seed, 2);
    const std::vector<Vec> eval_batch(dataset.begin(),
                                      dataset.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(
                                                            dataset.size(), 4096)));
    const LossDraws draws = draw_loss_inputs(eval_batch.size(), 1, eval_rng);

    g_stage = "train";
    const double initial = v_loss_fixed(model, eval_batch, draws);
    auto rng = run_rng(c.sampler.seed, 1);
    const TrainLog log = train_toy(model, dataset, {t.steps, t.learning_rate, t.momentum, t.batch_size}, rng);
    const double final_loss = v_loss_fixed(model, eval_batch, draws);

    g_stage = "write";
    model.save(dir / "model.cdml");
    std::ostringstream os;
    os << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < log.loss.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, log.loss[i]);
        os << buf;
    }
    write_text(dir / "train_loss.csv", os.str());
    write_metrics(dir, {{"train_toy", "initial_v_loss", initial, eval_batch.size(), c.sampler.seed},
                        {"train_toy", "final_v_loss", final_loss, eval_batch.size(), c.sampler.seed}});
}

void run_synth(const RunConfig& c, const fs::path& dir) {
    const SynthParams& p = c.synth;
    p.validate();
    g_stage = "synth";
    const auto signals = synth_dataset(p);
    g_stage = "write";
    json files = json::array();
    for (std::size_t i = 0; i < signals.size(); ++i) {
        const std::string name = indexed("signal", i, ".wav");
        write_wav(dir / name, signals[i]);
        files.push_back(name);
    }
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(content_hash(signals)));
    json manifest;
    manifest["kind"] = to_string(p.kind);
    manifest["params"] = cli::to_json(c)["synth"];
    manifest["seed"] = p.seed;
    manifest["count"] = p.count;
    manifest["hash"] = hash;
    manifest["sample_rate"] = p.sample_rate;
    manifest["channels"] = 1;
    manifest["files"] = files;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

json error_json(const std::string& message, std::optional<std::size_t> step) {
    json e;
    e["stage"] = g_stage;
    e["message"] = message;
    if (step) e["step"] = *step;
    return e;
}

int report(const fs::path& dir, const json& err, int code) {
    std::cerr << err.dump() << '\n';
    std::error_code ec;
    if (!dir.empty() && fs::is_directory(dir, ec)) {
        std::ofstream os(dir / "error.json");
        os << err.dump(2) << '\n';
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Guided diffusion sampling for audio editing"};
    app.require_subcommand(1);
    Flags flags;
    struct Sub {
        const char* name;
        const char* help;
    };
    const Sub subs[] = {
        {"generate", "Unconditional sampling"},
        {"continue", "Continue a prompt"},
        {"infill", "Fill a hole between two contexts"},
        {"regen", "Regenerate a region starting from a noised original"},
        {"transition", "Generate a transition between two tracks"},
        {"guide-embed", "Guide toward the embedding of a reference"},
        {"guide-class", "Guide toward target class probabilities"},
        {"train-toy", "Train the toy MLP denoiser on a 1-D mixture"},
        {"eval", "Sweep step counts for one task and report metrics"},
        {"synth-data", "Write a synthetic corpus with a manifest"},
    };
    for (const auto& s : subs) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        add_common(sub, flags);
        const std::string name = s.name;
        if (name == "train-toy") {
            sub->add_option("--steps", flags.steps, "Training steps");
            sub->add_option("--lr", flags.learning_rate, "Learning rate");
        } else if (name == "synth-data") {
            sub->add_option("--kind", flags.kind, "sine_mix, ar1_gaussian or gmm");
            sub->add_option("--count", flags.count, "Number of signals");
            sub->add_option("--length", flags.length, "Samples per signal");
        } else {
            add_sampling(sub, flags);
            if (name == "eval") {
                sub->add_option("--task", flags.task, "Task to evaluate (a sampling subcommand name)");
                sub->add_option("--eval-steps", flags.eval_steps, "Step counts to sweep");
            }
        }
    }
    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    fs::path dir;
    try {
        json j = load_json(flags.config);
        apply_flags(j, flags, command);
        RunConfig cfg = cli::parse_config(j, command);
        if (cfg.output.empty()) cfg.output = default_output(command).string();
        dir = cfg.output;
        cli::validate_config(cfg);
        if (command == "eval") prepare_task(cfg.eval.task, cfg);  // reject bad tasks before compute

        g_stage = "write";
        fs::create_directories(dir);
        write_text(dir / "config.json", cli::to_json(cfg).dump(2) + "\n");
        g_stage = "config";

        if (command == "train-toy") run_train(cfg, dir);
        else if (command == "synth-data") run_synth(cfg, dir);
        else if (command == "eval") run_eval(cfg, dir);
        else run_sampling(cfg, dir);
    } catch (const NumericError& e) {
        return report(dir, error_json(e.what(), e.step()), 3);
    } catch (const ContractError& e) {
        return report(dir, error_json(e.what(), std::nullopt), 2);
    } catch (const std::exception& e) {
        return report(dir, error_json(e.what(), std::nullopt), 1);
    }
    return 0;
}
