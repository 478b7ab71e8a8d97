#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "json.hpp"
#include "ssfam/decoder.hpp"
#include "ssfam/encoder.hpp"
#include "ssfam/prompts.hpp"

namespace ssfam {

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    ModulatorKind modulator = ModulatorKind::lora;
    ModalitySet modalities{Modality::visible, Modality::depth, Modality::thermal};
    std::uint64_t seed = 0;  // initialisation seed

    static ModelConfig toy() { return {}; }

    static ModelConfig vit_l() {
        ModelConfig c;
        c.encoder = EncoderConfig::vit_l();
        c.decoder = DecoderConfig::sam_scale();
        return c;
    }

    void validate() const {
        encoder.validate();
        decoder.validate();
        modalities.validate();
        if (decoder.dim != encoder.out_dim) {
            throw ConfigError("decoder width " + std::to_string(decoder.dim) + " must equal encoder neck width " +
                              std::to_string(encoder.out_dim));
        }
        // Logit grid after upsampling must not exceed the image.
        if ((encoder.grid() << decoder.upsample_stages) > encoder.image_side) {
            throw ConfigError("too many upsampling stages for a " + std::to_string(encoder.grid()) + "-cell feature grid");
        }
    }
};

inline nlohmann::json to_json(const ModelConfig& c) {
    const EncoderConfig& e = c.encoder;
    const DecoderConfig& d = c.decoder;
    return {
        {"encoder",
         {{"depth", e.depth}, {"embed_dim", e.embed_dim}, {"heads", e.heads}, {"patch", e.patch},
          {"image_side", e.image_side}, {"mlp_ratio", e.mlp_ratio}, {"out_dim", e.out_dim}, {"lora_rank", e.lora_rank},
          {"lora_alpha", e.lora_alpha}, {"adapter_dim", e.adapter_dim}, {"fraction", fraction_name(e.fraction)}}},
        {"decoder",
         {{"dim", d.dim}, {"heads", d.heads}, {"cross_attn_layers", d.cross_attn_layers}, {"mask_tokens", d.mask_tokens},
          {"upsample_stages", d.upsample_stages}, {"mlp_dim", d.mlp_dim}, {"null_prompt_token", d.null_prompt_token}}},
        {"modulator", modulator_name(c.modulator)},
        {"modalities", c.modalities.to_string()},
        {"seed", c.seed},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        const auto& e = j.at("encoder");
        c.encoder.depth = e.at("depth");
        c.encoder.embed_dim = e.at("embed_dim");
        c.encoder.heads = e.at("heads");
        c.encoder.patch = e.at("patch");
        c.encoder.image_side = e.at("image_side");
        c.encoder.mlp_ratio = e.at("mlp_ratio");
        c.encoder.out_dim = e.at("out_dim");
        c.encoder.lora_rank = e.at("lora_rank");
        c.encoder.lora_alpha = e.at("lora_alpha");
        c.encoder.adapter_dim = e.at("adapter_dim");
        c.encoder.fraction = parse_fraction(e.at("fraction").get<std::string>());
        const auto& d = j.at("decoder");
        c.decoder.dim = d.at("dim");
        c.decoder.heads = d.at("heads");
        c.decoder.cross_attn_layers = d.at("cross_attn_layers");
        c.decoder.mask_tokens = d.at("mask_tokens");
        c.decoder.upsample_stages = d.at("upsample_stages");
        c.decoder.mlp_dim = d.at("mlp_dim");
        c.decoder.null_prompt_token = d.at("null_prompt_token");
        c.modulator = parse_modulator(j.at("modulator").get<std::string>());
        c.modalities = ModalitySet::parse(j.at("modalities").get<std::string>());
        c.seed = j.at("seed");
        return c;
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("malformed model config: ") + ex.what());
    }
}

/// Trainable/frozen parameter counts per group.
struct ParamCount {
    std::size_t encoder_frozen = 0;
    std::size_t prompt_encoder_frozen = 0;
    std::size_t modulator = 0;
    std::size_t decoder_prompt = 0;
    std::size_t decoder_noprompt = 0;
    std::size_t prompt_encoder_trainable = 0;

    std::size_t frozen() const { return encoder_frozen + prompt_encoder_frozen; }
    std::size_t trainable() const { return modulator + decoder_prompt + decoder_noprompt + prompt_encoder_trainable; }
    std::size_t total() const { return frozen() + trainable(); }
    friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

inline nlohmann::json to_json(const ParamCount& c) {
    return {{"encoder_frozen", c.encoder_frozen},
            {"prompt_encoder_frozen", c.prompt_encoder_frozen},
            {"modulator", c.modulator},
            {"decoder_prompt", c.decoder_prompt},
            {"decoder_noprompt", c.decoder_noprompt},
            {"prompt_encoder_trainable", c.prompt_encoder_trainable},
            {"frozen", c.frozen()},
            {"trainable", c.trainable()},
            {"total", c.total()}};
}

/// Counts from the configuration alone, without allocating the model.
inline ParamCount count_params(const ModelConfig& cfg) {
    ParamCount c;
    c.encoder_frozen = encoder_frozen_param_count(cfg.encoder);
    c.prompt_encoder_frozen = static_cast<std::size_t>(cfg.decoder.dim);  // 2 x dim/2 basis
    c.modulator = modulator_param_count(cfg.encoder, cfg.modulator, cfg.modalities.size());
    c.decoder_prompt = decoder_param_count(cfg.decoder);
    c.decoder_noprompt = c.decoder_prompt;
    c.prompt_encoder_trainable = 2 * static_cast<std::size_t>(cfg.decoder.dim);
    return c;
}

/// Counts by walking every allocated parameter.
inline ParamCount enumerate_params(const ParameterStore& store) {
    ParamCount c;
    for (const Parameter* p : store.all()) {
        switch (p->group) {
            case ParamGroup::encoder_frozen: c.encoder_frozen += p->numel(); break;
            case ParamGroup::prompt_encoder_frozen: c.prompt_encoder_frozen += p->numel(); break;
            case ParamGroup::modulator: c.modulator += p->numel(); break;
            case ParamGroup::decoder_prompt: c.decoder_prompt += p->numel(); break;
            case ParamGroup::decoder_noprompt: c.decoder_noprompt += p->numel(); break;
            case ParamGroup::prompt_encoder_trainable: c.prompt_encoder_trainable += p->numel(); break;
            case ParamGroup::unassigned: throw PartitionError("parameter '" + p->name + "' has no group");
        }
    }
    return c;
}

inline constexpr const char* kPromptDecoderPrefix = "decoder_prompt";
inline constexpr const char* kNoPromptDecoderPrefix = "decoder_noprompt";

/// Frozen encoder + per-modality modulators + prompt encoder + siamese
/// decoder pair. Every component draws from its own seed stream, so the
/// frozen weights do not depend on the modulator kind.
class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng enc_rng(derive_seed(cfg.seed, 1));
        Rng prompt_rng(derive_seed(cfg.seed, 2));
        Rng dec_rng(derive_seed(cfg.seed, 3));
        encoder_ = ImageEncoder(store_, cfg.encoder, cfg.modalities, cfg.modulator, enc_rng);
        prompt_encoder_ = PromptEncoder(store_, cfg.decoder.dim, prompt_rng);
        decoder_prompt_ = MaskDecoder(store_, kPromptDecoderPrefix, ParamGroup::decoder_prompt, cfg.decoder,
                                      cfg.encoder.grid(), cfg.encoder.image_side, dec_rng);
        Rng unused(0);
        decoder_noprompt_ = MaskDecoder(store_, kNoPromptDecoderPrefix, ParamGroup::decoder_noprompt, cfg.decoder,
                                        cfg.encoder.grid(), cfg.encoder.image_side, unused);
        copy_prompt_to_noprompt();
        image_pe_ = prompt_encoder_.dense_pe(cfg.encoder.grid());
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return cfg_; }
    int image_side() const { return cfg_.encoder.image_side; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }
    const ImageEncoder& encoder() const { return encoder_; }
    const PromptEncoder& prompt_encoder() const { return prompt_encoder_; }
    const MaskDecoder& prompt_decoder() const { return decoder_prompt_; }
    const MaskDecoder& noprompt_decoder() const { return decoder_noprompt_; }
    const Matrix& image_pe() const { return image_pe_; }

    /// The no-prompt branch starts as an exact copy of the prompt branch.
    void copy_prompt_to_noprompt() {
        const std::string from = std::string(kPromptDecoderPrefix) + ".";
        for (Parameter* p : store_.all()) {
            if (p->group != ParamGroup::decoder_noprompt) continue;
            const std::string suffix = p->name.substr(std::string(kNoPromptDecoderPrefix).size() + 1);
            p->value = store_.get(from + suffix).value;
        }
    }

    /// Per-modality encoding followed by summation fusion.
    FeatureMap encode(Tape& t, const Sample& s) const {
        std::map<Modality, FeatureMap> per;
        for (Modality m : cfg_.modalities.members()) {
            auto it = s.modalities.find(m);
            if (it == s.modalities.end()) {
                throw ConfigError(std::string("sample '") + s.id + "' lacks modality '" + modality_tag(m) +
                                  "' required by the model (" + cfg_.modalities.to_string() + ")");
            }
            per.emplace(m, encoder_.encode(t, it->second, m));
        }
        return fuse_modalities(per);
    }

    SiameseOutput siamese_forward(Tape& t, const FeatureMap& features, const PointPrompts& prompts) const {
        const Var sparse = prompt_encoder_.encode(t, prompts, image_side());
        SiameseOutput out;
        out.pred_prompt = decoder_prompt_.decode(t, features, image_pe_, &sparse);
        out.pred_noprompt = decoder_noprompt_.decode(t, features, image_pe_, nullptr);
        return out;
    }

    /// Test-time path: the no-prompt branch alone.
    Var predict(Tape& t, const FeatureMap& features) const {
        return decoder_noprompt_.decode(t, features, image_pe_, nullptr);
    }

    /// Replaces frozen weights with externally supplied tensors (for example
    /// converted pretrained encoder weights). Shapes must match.
    void import_frozen(const std::map<std::string, Matrix>& tensors) {
        for (const auto& [name, value] : tensors) {
            if (!store_.contains(name)) throw ConfigError("no parameter named '" + name + "'");
            Parameter& p = store_.get(name);
            if (!is_frozen(p.group)) throw ConfigError("parameter '" + name + "' is trainable, not frozen");
            if (!p.value.same_shape(value)) {
                throw ShapeError("parameter '" + name + "' is " + p.value.shape_string() + ", import is " + value.shape_string());
            }
            p.value = value;
        }
        refresh_derived();
    }

    /// Recomputes cached tensors derived from frozen weights.
    void refresh_derived() { image_pe_ = prompt_encoder_.dense_pe(cfg_.encoder.grid()); }

private:
    ModelConfig cfg_;
    ParameterStore store_;
    ImageEncoder encoder_;
    PromptEncoder prompt_encoder_;
    MaskDecoder decoder_prompt_;
    MaskDecoder decoder_noprompt_;
    Matrix image_pe_;
};

}  // namespace ssfam
