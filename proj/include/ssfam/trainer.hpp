#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssfam/checkpoint.hpp"
#include "ssfam/data.hpp"
#include "ssfam/image_io.hpp"
#include "ssfam/log.hpp"
#include "ssfam/losses.hpp"
#include "ssfam/model.hpp"
#include "ssfam/optim.hpp"

namespace ssfam {

// ---------------------------------------------------------------------------
// Parameter partition

struct ParamPartition {
    std::vector<Parameter*> frozen;
    std::map<Modality, std::vector<Parameter*>> modulator;  // theta_M by modality
    std::vector<Parameter*> decoder_prompt;
    std::vector<Parameter*> decoder_noprompt;
    std::vector<Parameter*> prompt_trainable;

    std::vector<Parameter*> modulators() const {
        std::vector<Parameter*> out;
        for (const auto& [m, ps] : modulator) out.insert(out.end(), ps.begin(), ps.end());
        return out;
    }
    /// Prompt-branch trainables: modulators, prompt decoder, label embeddings.
    std::vector<Parameter*> omega_pt() const {
        std::vector<Parameter*> out = modulators();
        out.insert(out.end(), decoder_prompt.begin(), decoder_prompt.end());
        out.insert(out.end(), prompt_trainable.begin(), prompt_trainable.end());
        return out;
    }
    /// No-prompt-branch trainables: modulators and the no-prompt decoder.
    std::vector<Parameter*> omega_nt() const {
        std::vector<Parameter*> out = modulators();
        out.insert(out.end(), decoder_noprompt.begin(), decoder_noprompt.end());
        return out;
    }
    std::vector<Parameter*> trainable() const {
        std::vector<Parameter*> out = omega_pt();
        out.insert(out.end(), decoder_noprompt.begin(), decoder_noprompt.end());
        return out;
    }
};

/// Assigns every parameter to exactly one partition cell. Modulators must
/// belong to a modality of the configured set.
inline ParamPartition partition_params(ParameterStore& store, const ModalitySet& modalities, ModulatorKind kind) {
    modalities.validate();
    ParamPartition part;
    for (Parameter* p : store.all()) {
        switch (p->group) {
            case ParamGroup::encoder_frozen:
            case ParamGroup::prompt_encoder_frozen: part.frozen.push_back(p); break;
            case ParamGroup::modulator:
                if (!p->modality) throw PartitionError("modulator parameter '" + p->name + "' has no modality");
                if (!modalities.contains(*p->modality)) {
                    throw PartitionError("modulator parameter '" + p->name + "' belongs to modality '" +
                                         modality_tag(*p->modality) + "' outside the set " + modalities.to_string());
                }
                part.modulator[*p->modality].push_back(p);
                break;
            case ParamGroup::decoder_prompt: part.decoder_prompt.push_back(p); break;
            case ParamGroup::decoder_noprompt: part.decoder_noprompt.push_back(p); break;
            case ParamGroup::prompt_encoder_trainable: part.prompt_trainable.push_back(p); break;
            case ParamGroup::unassigned: throw PartitionError("parameter '" + p->name + "' is not assigned to any group");
        }
    }
    if (kind != ModulatorKind::none) {
        for (Modality m : modalities.members()) {
            if (!part.modulator.contains(m)) {
                throw PartitionError(std::string("no modulator parameters for modality '") + modality_tag(m) + "'");
            }
        }
    } else if (!part.modulator.empty()) {
        throw PartitionError("modulator parameters present although the modulator kind is none");
    }
    return part;
}

inline ParamPartition partition_params(Model& model) {
    return partition_params(model.store(), model.config().modalities, model.config().modulator);
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    double lr = 5e-5;
    int epochs = 20;
    int batch = 1;
    std::uint64_t seed = 0;
    int image_side = 1024;
    int prompt_k = 10;
    ModalitySet modalities{Modality::visible, Modality::depth, Modality::thermal};
    ModulatedFraction fraction = ModulatedFraction::half;
    ModulatorKind modulator = ModulatorKind::lora;
    std::int64_t max_steps = 0;     // 0: no cap beyond epochs
    bool resample_prompts = true;   // false: one fixed draw per sample
    bool save_epoch_checkpoints = true;
    LossConfig loss;

    void validate() const {
        if (batch < 1) throw ConfigError("batch must be >= 1, got " + std::to_string(batch));
        if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
        if (prompt_k < 1) throw ConfigError("prompt_k must be >= 1, got " + std::to_string(prompt_k));
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
        modalities.validate();
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"seed", c.seed},
            {"image_side", c.image_side},
            {"prompt_k", c.prompt_k},
            {"modalities", c.modalities.to_string()},
            {"fraction", fraction_name(c.fraction)},
            {"modulator", modulator_name(c.modulator)},
            {"max_steps", c.max_steps},
            {"resample_prompts", c.resample_prompts}};
}

/// Architecture `arch` specialised by the run-level fields of `cfg`.
inline ModelConfig model_config_for(const TrainConfig& cfg, ModelConfig arch) {
    arch.encoder.image_side = cfg.image_side;
    arch.encoder.fraction = cfg.fraction;
    arch.modalities = cfg.modalities;
    arch.modulator = cfg.modulator;
    arch.seed = cfg.seed;
    return arch;
}

// ---------------------------------------------------------------------------
// Training state

inline constexpr std::uint64_t kPromptStream = 0x70726f6d7074ULL;
inline constexpr std::uint64_t kShuffleStream = 0x73687566666cULL;

struct Trainer {
    Model model;
    ParamPartition partition;
    Adam adam;
    TrainConfig config;
    std::int64_t step = 0;

    Trainer(const ModelConfig& arch, const TrainConfig& cfg)
        : model((cfg.validate(), model_config_for(cfg, arch))), config(cfg) {
        partition = partition_params(model);
        adam = Adam(partition.trainable(), AdamConfig{cfg.lr});
    }

    /// Rebuilds model, optimizer and step counter from a checkpoint.
    void resume(const Checkpoint& ck) {
        restore_parameters(model, ck);
        adam.load_state(ck.adam, ck.adam_step);
        step = ck.train_state.value("step", std::int64_t{0});
    }
};

inline std::uint64_t prompt_seed(const TrainConfig& cfg, std::int64_t step, int slot, std::size_t sample_index) {
    const std::uint64_t base = derive_seed(cfg.seed, kPromptStream);
    if (!cfg.resample_prompts) return derive_seed(base, sample_index);
    return derive_seed(base, static_cast<std::uint64_t>(step) * 1024u + static_cast<std::uint64_t>(slot));
}

/// Forward + objective for one preprocessed sample on a fresh tape.
struct StepOutputs {
    SiameseOutput out;
    ObjectiveTerms terms;
};

inline StepOutputs forward_objective(Tape& t, const Model& model, const Sample& s, const PointPrompts& prompts,
                                     const LossConfig& loss) {
    const FeatureMap f = model.encode(t, s);
    StepOutputs r;
    r.out = model.siamese_forward(t, f, prompts);
    r.terms = objective(r.out, s.scribble, s.guide, loss);
    return r;
}

/// One optimizer step over `batch` (losses averaged). Gradients of the
/// scribble loss reach only the prompt-branch trainables and those of the
/// consistency loss only the no-prompt trainables, by construction of the
/// detached target.
inline LossBreakdown train_step(Trainer& tr, const std::vector<const Sample*>& batch,
                                const std::vector<std::size_t>& sample_indices = {}) {
    if (batch.empty()) throw PreconditionError("empty batch");
    tr.model.store().zero_grad();
    LossBreakdown mean;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Sample& s = *batch[i];
        if (s.scribble.empty()) throw PreconditionError("training sample '" + s.id + "' has no scribble");
        const std::size_t index = i < sample_indices.size() ? sample_indices[i] : i;
        const PointPrompts prompts =
            sample_points(s.scribble, tr.config.prompt_k, prompt_seed(tr.config, tr.step, static_cast<int>(i), index));
        Tape t(true);
        StepOutputs r = forward_objective(t, tr.model, s, prompts, tr.config.loss);
        if (!r.terms.values.finite()) {
            throw NumericsError("non-finite loss at step " + std::to_string(tr.step) + " on sample '" + s.id +
                                "': " + to_json(r.terms.values).dump());
        }
        if (r.terms.values.pce_warning) log::warn("sample '" + s.id + "' has no labelled scribble pixel after resizing");
        t.backward(batch.size() == 1 ? r.terms.total : ag::scale(r.terms.total, static_cast<float>(inv)));
        mean.pce += r.terms.values.pce * inv;
        mean.lsc += r.terms.values.lsc * inv;
        mean.sl += r.terms.values.sl * inv;
        mean.wbce += r.terms.values.wbce * inv;
        mean.wiou += r.terms.values.wiou * inv;
        mean.pce_warning = mean.pce_warning || r.terms.values.pce_warning;
    }
    mean.total = mean.scribble() + mean.consistency();
    for (Parameter* p : tr.adam.parameters()) {
        if (p->has_grad && !p->grad.all_finite()) {
            throw NumericsError("non-finite gradient for '" + p->name + "' at step " + std::to_string(tr.step) +
                                ", losses " + to_json(mean).dump());
        }
    }
    tr.adam.step();
    ++tr.step;
    return mean;
}

// ---------------------------------------------------------------------------
// fit

/// Deterministic per-epoch order of sample indices.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(derive_seed(seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    return order;
}

inline std::vector<Sample> load_preprocessed(const DatasetManifest& manifest, int side, int patch) {
    PreprocessConfig pc;
    pc.side = side;
    pc.patch = patch;
    std::vector<Sample> out;
    out.reserve(manifest.ids.size());
    for (const std::string& id : manifest.ids) out.push_back(preprocess(load_sample(manifest, id), pc));
    return out;
}

struct FitResult {
    fs::path last_checkpoint;
    fs::path best_checkpoint;
    std::vector<LossBreakdown> history;  // one entry per step run in this call
    std::int64_t steps = 0;              // global step count at exit
};

struct FitOptions {
    std::optional<fs::path> resume_from;
};

/// Runs the training loop: epochs of shuffled passes, one optimizer step per
/// batch. Writes epoch_XXX.ckpt, best.ckpt (lowest mean epoch loss),
/// last.ckpt and a JSON-lines step log to `out_dir`.
inline FitResult fit(const DatasetManifest& manifest, const TrainConfig& cfg, const ModelConfig& arch,
                     const fs::path& out_dir, const FitOptions& opts = {}) {
    cfg.validate();
    if (manifest.split != Split::train) throw PreconditionError("fit requires a train split manifest");
    if (manifest.ids.empty()) throw PreconditionError("training manifest lists no samples");
    for (Modality m : cfg.modalities.members()) {
        if (!manifest.modalities.contains(m)) {
            throw ConfigError(std::string("manifest lacks modality '") + modality_tag(m) + "' requested for training");
        }
    }
    Trainer tr(arch, cfg);
    double best = std::numeric_limits<double>::infinity();
    double epoch_sum = 0.0;
    std::int64_t epoch_count = 0;
    if (opts.resume_from) {
        const Checkpoint ck = load_checkpoint(*opts.resume_from);
        if (to_json(ck.model) != to_json(tr.model.config())) {
            throw ConfigError("checkpoint " + opts.resume_from->string() + " was trained with a different model config");
        }
        tr.resume(ck);
        best = ck.train_state.value("best_loss", best);
        epoch_sum = ck.train_state.value("epoch_sum", 0.0);
        epoch_count = ck.train_state.value("epoch_count", std::int64_t{0});
    }
    const std::vector<Sample> samples = load_preprocessed(manifest, cfg.image_side, tr.model.config().encoder.patch);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    std::ofstream log_file(out_dir / "train_log.jsonl", opts.resume_from ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot write training log in " + out_dir.string());

    const std::int64_t n = static_cast<std::int64_t>(samples.size());
    const std::int64_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const std::int64_t budget = static_cast<std::int64_t>(cfg.epochs) * per_epoch;
    const std::int64_t stop = cfg.max_steps > 0 ? std::min(budget, cfg.max_steps) : budget;

    FitResult result;
    result.best_checkpoint = out_dir / "best.ckpt";
    auto state_json = [&](std::int64_t epoch) {
        return nlohmann::json{{"step", tr.step},           {"epoch", epoch},
                              {"best_loss", best},          {"epoch_sum", epoch_sum},
                              {"epoch_count", epoch_count}, {"train_config", to_json(cfg)}};
    };
    while (tr.step < stop) {
        const std::int64_t epoch = tr.step / per_epoch;
        const std::int64_t pos = tr.step % per_epoch;
        const auto order = epoch_order(samples.size(), cfg.seed, epoch);
        std::vector<const Sample*> batch;
        std::vector<std::size_t> indices;
        for (std::int64_t i = pos * cfg.batch; i < std::min(n, (pos + 1) * cfg.batch); ++i) {
            indices.push_back(order[static_cast<std::size_t>(i)]);
            batch.push_back(&samples[indices.back()]);
        }
        const std::int64_t step_no = tr.step;
        const LossBreakdown lb = train_step(tr, batch, indices);
        result.history.push_back(lb);
        nlohmann::json line = to_json(lb);
        line["step"] = step_no;
        line["epoch"] = epoch;
        nlohmann::json ids = nlohmann::json::array();
        for (const Sample* s : batch) ids.push_back(s->id);
        line["ids"] = ids;
        log_file << line.dump() << '\n';
        log::debug(line.dump());
        epoch_sum += lb.total;
        ++epoch_count;

        const bool epoch_done = tr.step % per_epoch == 0;
        if (epoch_done) {
            const double mean = epoch_sum / static_cast<double>(epoch_count);
            log::info("epoch " + std::to_string(epoch + 1) + " mean loss " + std::to_string(mean));
            if (mean < best) {
                best = mean;
                save_checkpoint(result.best_checkpoint, tr.model, &tr.adam, state_json(epoch + 1));
            }
            if (cfg.save_epoch_checkpoints) {
                char name[32];
                std::snprintf(name, sizeof name, "epoch_%03lld.ckpt", static_cast<long long>(epoch + 1));
                save_checkpoint(out_dir / name, tr.model, &tr.adam, state_json(epoch + 1));
            }
            epoch_sum = 0.0;
            epoch_count = 0;
        }
    }
    log_file.flush();
    result.last_checkpoint = out_dir / "last.ckpt";
    save_checkpoint(result.last_checkpoint, tr.model, &tr.adam, state_json(tr.step / per_epoch));
    if (!fs::exists(result.best_checkpoint)) result.best_checkpoint = result.last_checkpoint;
    result.steps = tr.step;
    return result;
}

// ---------------------------------------------------------------------------
// Inference

/// No-prompt probability map of a preprocessed sample at model resolution.
inline Raster<float> predict_sample(const Model& model, const Sample& s, Tape& t) {
    const FeatureMap f = model.encode(t, s);
    return to_raster(model.predict(t, f).value(), model.image_side());
}

/// Predicts every manifest sample with the no-prompt branch and writes
/// <id>.png at the original resolution into out_dir.
inline std::vector<fs::path> infer(const Model& model, const DatasetManifest& manifest, const fs::path& out_dir) {
    for (Modality m : model.config().modalities.members()) {
        if (!manifest.modalities.contains(m)) {
            throw ConfigError(std::string("checkpoint requires modality '") + modality_tag(m) + "' which the manifest (" +
                              manifest.modalities.to_string() + ") does not provide");
        }
    }
    PreprocessConfig pc;
    pc.side = model.image_side();
    pc.patch = model.config().encoder.patch;
    std::vector<fs::path> written;
    for (const std::string& id : manifest.ids) {
        const Sample s = preprocess(load_sample(manifest, id), pc);
        Tape t(false);
        const Raster<float> prob = predict_sample(model, s, t);
        const Raster<float> full = resize_bilinear(prob, s.source_height, s.source_width);
        const fs::path out = out_dir / (id + ".png");
        io::write_png8(out, io::quantize_probability(full));
        written.push_back(out);
    }
    return written;
}

inline std::vector<fs::path> infer(const fs::path& checkpoint, const DatasetManifest& manifest, const fs::path& out_dir) {
    const Model model = load_model(checkpoint);
    return infer(model, manifest, out_dir);
}

}  // namespace ssfam
