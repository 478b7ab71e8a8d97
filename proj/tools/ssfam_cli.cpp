// ssfam command-line front end: synth | train | predict | eval | sample-prompts | params.
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
// Verbosity follows SSFAM_VERBOSITY (0 quiet, 1 info, 2 debug).

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssfam/ssfam.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssfam;

namespace {

/// Raised for bad flag values or config files; maps to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string with_commas(std::size_t n) {
    std::string s = std::to_string(n);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

/// Values from a JSON config file fill any option not given on the command
/// line. Flags always win.
class ConfigOverlay {
public:
    template <typename T>
    void bind(CLI::Option* opt, const std::string& key, T& target) {
        entries_.push_back({opt, key, [&target, key](const json& v) {
                                try {
                                    target = v.get<T>();
                                } catch (const json::exception& e) {
                                    throw UsageError("config key '" + key + "': " + e.what());
                                }
                            }});
    }

    void apply(const std::string& path) const {
        if (path.empty()) return;
        std::ifstream in(path);
        if (!in) throw UsageError("cannot read config file " + path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw UsageError("config file " + path + " is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
        for (const auto& [key, value] : j.items()) {
            bool known = false;
            for (const Entry& e : entries_) {
                if (e.key != key) continue;
                known = true;
                if (e.opt->count() == 0) e.set(value);
            }
            if (!known) throw UsageError("config file " + path + ": unknown key '" + key + "'");
        }
    }

private:
    struct Entry {
        CLI::Option* opt;
        std::string key;
        std::function<void(const json&)> set;
    };
    std::vector<Entry> entries_;
};

ModelConfig preset(const std::string& name) {
    if (name == "toy") return ModelConfig::toy();
    if (name == "vitl") return ModelConfig::vit_l();
    throw UsageError("unknown preset '" + name + "' (expected toy or vitl)");
}

template <typename F>
auto usage_guard(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    SynthConfig cfg;
    std::string modalities = "v,d,t";
    std::string split = "train";
};

void add_synth(CLI::App& app, SynthArgs& a) {
    auto* c = app.add_subcommand("synth", "Write a synthetic multimodal dataset with scribbles and ground truth");
    c->add_option("--out", a.out, "Dataset root directory")->required();
    c->add_option("--n", a.cfg.n, "Number of samples")->capture_default_str()->check(CLI::Range(1, 1000000));
    c->add_option("--side", a.cfg.side, "Image side in pixels")->capture_default_str()->check(CLI::Range(8, 4096));
    c->add_option("--modalities", a.modalities, "Modality set: v | v,d | v,t | v,d,t")->capture_default_str();
    c->add_option("--seed", a.cfg.seed, "Random seed")->capture_default_str();
    c->add_option("--split", a.split, "train or test")->capture_default_str()->check(CLI::IsMember({"train", "test"}));
}

int run_synth(SynthArgs& a) {
    usage_guard([&] {
        a.cfg.modalities = ModalitySet::parse(a.modalities);
        a.cfg.split = parse_split(a.split);
        return 0;
    });
    const DatasetManifest m = synth_dataset(a.out, a.cfg);
    std::cout << json{{"root", fs::absolute(a.out).string()}, {"count", m.count()}, {"modalities", m.modalities.to_string()}}.dump()
              << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data, out, config, resume;
    std::string preset = "toy";
    TrainConfig cfg;
    std::string modalities = "v,d,t";
    std::string fraction = "1/2";
    std::string modulator = "lora";
    int rank = 0;
    bool fixed_prompts = false;
    ConfigOverlay overlay;
};

void add_train(CLI::App& app, TrainArgs& a) {
    auto* c = app.add_subcommand("train", "Train the siamese model on a scribble-annotated dataset");
    c->add_option("--data", a.data, "Training dataset root (holding manifest.json)")->required();
    c->add_option("--out", a.out, "Output directory for checkpoints and the step log")->required();
    c->add_option("--config", a.config, "JSON file with option values; flags override it");
    c->add_option("--resume", a.resume, "Continue from a checkpoint written by an earlier run");
    auto& o = a.overlay;
    o.bind(c->add_option("--preset", a.preset, "Architecture: toy or vitl")->capture_default_str(), "preset", a.preset);
    o.bind(c->add_option("--lr", a.cfg.lr, "Adam learning rate")->capture_default_str(), "lr", a.cfg.lr);
    o.bind(c->add_option("--epochs", a.cfg.epochs, "Training epochs")->capture_default_str(), "epochs", a.cfg.epochs);
    o.bind(c->add_option("--batch", a.cfg.batch, "Samples per optimizer step")->capture_default_str(), "batch", a.cfg.batch);
    o.bind(c->add_option("--seed", a.cfg.seed, "Run seed (weights, shuffling, prompts)")->capture_default_str(), "seed",
           a.cfg.seed);
    o.bind(c->add_option("--side", a.cfg.image_side, "Square input side after resizing")->capture_default_str(),
           "image_side", a.cfg.image_side);
    o.bind(c->add_option("--k", a.cfg.prompt_k, "Point prompts drawn per sample")->capture_default_str(), "prompt_k",
           a.cfg.prompt_k);
    o.bind(c->add_option("--modalities", a.modalities, "Modality set: v | v,d | v,t | v,d,t")->capture_default_str(),
           "modalities", a.modalities);
    o.bind(c->add_option("--fraction", a.fraction, "Modulated share of encoder blocks: 1/3, 1/2, 2/3")->capture_default_str(),
           "fraction", a.fraction);
    o.bind(c->add_option("--modulator", a.modulator, "lora, adapter or none")->capture_default_str(), "modulator",
           a.modulator);
    o.bind(c->add_option("--rank", a.rank, "LoRA rank (0 keeps the preset value)")->capture_default_str(), "rank", a.rank);
    o.bind(c->add_option("--max-steps", a.cfg.max_steps, "Stop after this many steps (0: no cap)")->capture_default_str(),
           "max_steps", a.cfg.max_steps);
    o.bind(c->add_flag("--fixed-prompts", a.fixed_prompts, "Draw prompts once per sample instead of every step"),
           "fixed_prompts", a.fixed_prompts);
}

int run_train(TrainArgs& a) {
    const ModelConfig arch = usage_guard([&] {
        a.overlay.apply(a.config);
        a.cfg.modalities = ModalitySet::parse(a.modalities);
        a.cfg.fraction = parse_fraction(a.fraction);
        a.cfg.modulator = parse_modulator(a.modulator);
        a.cfg.resample_prompts = !a.fixed_prompts;
        a.cfg.validate();
        ModelConfig m = preset(a.preset);
        if (a.rank < 0) throw UsageError("--rank must be >= 0");
        if (a.rank > 0) m.encoder.lora_rank = a.rank;
        const ModelConfig full = model_config_for(a.cfg, m);
        full.validate();
        PreprocessConfig{.side = a.cfg.image_side, .patch = full.encoder.patch}.validate();
        return m;
    });
    const DatasetManifest manifest = load_manifest(a.data);
    FitOptions opts;
    if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
    const FitResult r = fit(manifest, a.cfg, arch, a.out, opts);
    json out{{"steps", r.steps}, {"last_checkpoint", r.last_checkpoint.string()}, {"best_checkpoint", r.best_checkpoint.string()}};
    if (!r.history.empty()) out["final_loss"] = to_json(r.history.back());
    std::cout << out.dump() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint, data, out;
};

void add_predict(CLI::App& app, PredictArgs& a) {
    auto* c = app.add_subcommand("predict", "Write no-prompt saliency maps at the original image size");
    c->add_option("--checkpoint", a.checkpoint, "Trained checkpoint")->required();
    c->add_option("--data", a.data, "Dataset root (holding manifest.json)")->required();
    c->add_option("--out", a.out, "Directory for <id>.png predictions")->required();
}

int run_predict(const PredictArgs& a) {
    const DatasetManifest m = load_manifest(a.data);
    const auto written = infer(fs::path(a.checkpoint), m, a.out);
    std::cout << json{{"written", written.size()}, {"out", a.out}}.dump() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::vector<std::string> pred, gt, names;
    std::string out;
    std::string weighting = "images";
};

void add_eval(CLI::App& app, EvalArgs& a) {
    auto* c = app.add_subcommand("eval", "Score prediction folders with S, maxF, maxE and MAE");
    c->add_option("--pred", a.pred, "Prediction folder (repeat for several datasets)")->required();
    c->add_option("--gt", a.gt, "Ground-truth folder, paired with --pred by position")->required();
    c->add_option("--name", a.names, "Dataset name, paired with --pred by position");
    c->add_option("--out", a.out, "Directory for per-image CSV files and summary.json");
    c->add_option("--overall", a.weighting, "Overall weighting: images or datasets")
        ->capture_default_str()
        ->check(CLI::IsMember({"images", "datasets"}));
}

int run_eval(const EvalArgs& a) {
    if (a.pred.size() != a.gt.size()) throw UsageError("--pred and --gt must be given the same number of times");
    if (!a.names.empty() && a.names.size() != a.pred.size()) throw UsageError("--name must match the number of --pred folders");
    std::vector<metrics::MetricReport> reports;
    for (std::size_t i = 0; i < a.pred.size(); ++i) {
        const std::string name = a.names.empty() ? "dataset" + std::to_string(i) : a.names[i];
        reports.push_back(metrics::evaluate(a.pred[i], a.gt[i], name));
    }
    const auto weighting = a.weighting == "images" ? metrics::OverallWeighting::image_count : metrics::OverallWeighting::dataset_mean;
    json summary{{"datasets", json::array()}, {"overall", metrics::to_json(metrics::overall(reports, weighting))}};
    summary["overall"]["weighting"] = a.weighting;
    for (const auto& r : reports) summary["datasets"].push_back(metrics::to_json(r));
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        for (const auto& r : reports) metrics::write_csv(r, fs::path(a.out) / (r.name + "_per_image.csv"));
        std::ofstream(fs::path(a.out) / "summary.json") << summary.dump(2) << '\n';
    }
    std::cout << summary.dump() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct PromptArgs {
    std::string scribble;
    int k = 10;
    std::uint64_t seed = 0;
};

void add_prompts(CLI::App& app, PromptArgs& a) {
    auto* c = app.add_subcommand("sample-prompts", "Print point prompts drawn from a scribble PNG as [[x, y, label], ...]");
    c->add_option("--scribble", a.scribble, "Scribble PNG (0 unknown, 1 foreground, 2 background)")->required();
    c->add_option("--k", a.k, "Number of points")->capture_default_str()->check(CLI::Range(1, 100000));
    c->add_option("--seed", a.seed, "Draw seed")->capture_default_str();
}

int run_prompts(const PromptArgs& a) {
    const ScribbleMap s{io::read_gray8(a.scribble)};
    std::cout << to_json(sample_points(s, a.k, a.seed)).dump() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct ParamsArgs {
    std::string preset = "vitl";
    std::string modalities = "v,d";
    std::string fraction = "1/2";
    std::string modulator = "lora";
    int rank = 0;
    bool as_json = false;
};

void add_params(CLI::App& app, ParamsArgs& a) {
    auto* c = app.add_subcommand("params", "Closed-form parameter counts for a configuration");
    c->add_option("--preset", a.preset, "Architecture: toy or vitl")->capture_default_str();
    c->add_option("--modalities", a.modalities, "Modality set")->capture_default_str();
    c->add_option("--fraction", a.fraction, "Modulated share of encoder blocks")->capture_default_str();
    c->add_option("--modulator", a.modulator, "lora, adapter or none")->capture_default_str();
    c->add_option("--rank", a.rank, "LoRA rank (0 keeps the preset value)")->capture_default_str();
    c->add_flag("--json", a.as_json, "Print JSON instead of a table");
}

// Published decoder-pair size and total for the ViT-L, two-modality LoRA
// setting, used as a reference line.
constexpr double kReferenceDecoderPairM = 7.74;
constexpr double kReferenceTrainableM = 9.24;

int run_params(const ParamsArgs& a) {
    const ModelConfig cfg = usage_guard([&] {
        ModelConfig m = preset(a.preset);
        m.modalities = ModalitySet::parse(a.modalities);
        m.encoder.fraction = parse_fraction(a.fraction);
        m.modulator = parse_modulator(a.modulator);
        if (a.rank < 0) throw UsageError("--rank must be >= 0");
        if (a.rank > 0) m.encoder.lora_rank = a.rank;
        m.validate();
        return m;
    });
    const ParamCount c = count_params(cfg);
    const double with_reference = static_cast<double>(c.modulator) / 1e6 + kReferenceDecoderPairM;
    if (a.as_json) {
        json j = to_json(c);
        j["modulated_layers"] = cfg.encoder.modulated_count();
        j["modulator_plus_reference_decoders_M"] = with_reference;
        std::cout << j.dump(2) << '\n';
        return 0;
    }
    std::printf("preset %s, modalities %s, modulator %s, rank %d, modulated layers %d\n", a.preset.c_str(),
                cfg.modalities.to_string().c_str(), modulator_name(cfg.modulator), cfg.encoder.lora_rank,
                cfg.encoder.modulated_count());
    const std::pair<const char*, std::size_t> rows[] = {
        {"encoder (frozen)", c.encoder_frozen},
        {"prompt encoder (frozen)", c.prompt_encoder_frozen},
        {"modulators", c.modulator},
        {"prompt decoder", c.decoder_prompt},
        {"no-prompt decoder", c.decoder_noprompt},
        {"prompt label embeddings", c.prompt_encoder_trainable},
        {"trainable total", c.trainable()},
        {"frozen total", c.frozen()},
    };
    for (const auto& [label, n] : rows) std::printf("  %-26s %15s\n", label, with_commas(n).c_str());
    std::printf("  modulators + %.2fM reference decoder pair = %.2fM (reference total %.2fM)\n", kReferenceDecoderPairM,
                with_reference, kReferenceTrainableM);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scribble-supervised multimodal salient object detection"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "ssfam 0.1.0");

    SynthArgs synth;
    TrainArgs train;
    PredictArgs predict;
    EvalArgs eval;
    PromptArgs prompts;
    ParamsArgs params;
    add_synth(app, synth);
    add_train(app, train);
    add_predict(app, predict);
    add_eval(app, eval);
    add_prompts(app, prompts);
    add_params(app, params);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        if (cmd == "synth") return run_synth(synth);
        if (cmd == "train") return run_train(train);
        if (cmd == "predict") return run_predict(predict);
        if (cmd == "eval") return run_eval(eval);
        if (cmd == "sample-prompts") return run_prompts(prompts);
        if (cmd == "params") return run_params(params);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
