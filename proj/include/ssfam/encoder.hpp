#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssfam/autograd.hpp"
#include "ssfam/data.hpp"
#include "ssfam/error.hpp"
#include "ssfam/modality.hpp"
#include "ssfam/nn.hpp"
#include "ssfam/parameters.hpp"

namespace ssfam {

enum class ModulatorKind { lora, adapter, none };

inline const char* modulator_name(ModulatorKind k) {
    switch (k) {
        case ModulatorKind::lora: return "lora";
        case ModulatorKind::adapter: return "adapter";
        case ModulatorKind::none: return "none";
    }
    return "?";
}

inline ModulatorKind parse_modulator(std::string_view s) {
    if (s == "lora") return ModulatorKind::lora;
    if (s == "adapter") return ModulatorKind::adapter;
    if (s == "none") return ModulatorKind::none;
    throw ConfigError("unknown modulator kind '" + std::string(s) + "' (lora, adapter, none)");
}

/// Share of the encoder depth, counted from the output end, that carries
/// modality modulators.
enum class ModulatedFraction { third, half, two_thirds };

inline const char* fraction_name(ModulatedFraction f) {
    switch (f) {
        case ModulatedFraction::third: return "1/3";
        case ModulatedFraction::half: return "1/2";
        case ModulatedFraction::two_thirds: return "2/3";
    }
    return "?";
}

inline ModulatedFraction parse_fraction(std::string_view s) {
    if (s == "1/3") return ModulatedFraction::third;
    if (s == "1/2") return ModulatedFraction::half;
    if (s == "2/3") return ModulatedFraction::two_thirds;
    throw ConfigError("modulated fraction must be 1/3, 1/2 or 2/3, got '" + std::string(s) + "'");
}

struct EncoderConfig {
    int depth = 8;
    int embed_dim = 96;
    int heads = 4;
    int patch = 16;
    int image_side = 64;
    int mlp_ratio = 4;
    int out_dim = 96;  // neck width, equals the decoder width
    int lora_rank = 4;
    double lora_alpha = 0.0;  // <= 0 means alpha = rank (unit scale)
    int adapter_dim = 16;
    ModulatedFraction fraction = ModulatedFraction::half;

    /// Toy scale used for desk runs and tests.
    static EncoderConfig toy() { return {}; }

    /// ViT-L geometry: 24 blocks, width 1024, 16 heads, 256-wide neck.
    static EncoderConfig vit_l() {
        EncoderConfig c;
        c.depth = 24;
        c.embed_dim = 1024;
        c.heads = 16;
        c.patch = 16;
        c.image_side = 1024;
        c.out_dim = 256;
        c.lora_rank = 10;
        c.adapter_dim = 64;
        return c;
    }

    int grid() const { return image_side / patch; }
    int tokens() const { return grid() * grid(); }
    float lora_scale() const {
        return static_cast<float>((lora_alpha > 0.0 ? lora_alpha : lora_rank) / static_cast<double>(lora_rank));
    }

    int modulated_count() const {
        switch (fraction) {
            case ModulatedFraction::third: return depth / 3;
            case ModulatedFraction::half: return depth / 2;
            case ModulatedFraction::two_thirds: return (2 * depth) / 3;
        }
        return 0;
    }
    int first_modulated() const { return depth - modulated_count(); }
    bool is_modulated(int layer) const { return layer >= first_modulated() && layer < depth; }

    void validate() const {
        if (depth < 1) throw ConfigError("encoder depth must be >= 1");
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
            throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of heads " +
                              std::to_string(heads));
        }
        if (patch < 1 || image_side < patch || image_side % patch != 0) {
            throw ConfigError("image side " + std::to_string(image_side) + " is not divisible by patch " + std::to_string(patch));
        }
        if (lora_rank < 1) throw ConfigError("LoRA rank must be >= 1, got " + std::to_string(lora_rank));
        if (lora_rank > embed_dim / 4) {
            throw ConfigError("LoRA rank " + std::to_string(lora_rank) + " exceeds embed_dim/4 = " + std::to_string(embed_dim / 4));
        }
        if (adapter_dim < 1) throw ConfigError("adapter bottleneck must be >= 1");
        if (mlp_ratio < 1 || out_dim < 1) throw ConfigError("mlp_ratio and out_dim must be positive");
    }
};

/// Flattened (grid*grid) x channels feature grid.
struct FeatureMap {
    int grid = 0;
    Var tokens;

    int channels() const { return tokens.cols(); }
};

/// Low-rank factors of one projection: delta W = A * B^T, A and B are d x r.
struct LoraFactors {
    Parameter* a = nullptr;
    Parameter* b = nullptr;
};

struct LoraOnTape {
    Var a;
    Var b;
    float scale = 1.0f;
};

/// x * (W + scale * A * B^T)^T (+ bias), computed without forming the
/// d x d update: x W^T + scale * (x B) A^T.
inline Var attn_projection(Var x, Var weight, const Var* bias, const LoraOnTape* lora) {
    const Matrix& w = weight.value();
    if (x.cols() != w.cols()) {
        throw ShapeError("projection input has " + std::to_string(x.cols()) + " features, weight is " + w.shape_string());
    }
    Var y = ag::matmul_nt(x, weight);
    if (lora != nullptr) {
        const Matrix& a = lora->a.value();
        const Matrix& b = lora->b.value();
        if (a.rows() != w.rows() || b.rows() != w.cols() || a.cols() != b.cols()) {
            throw ShapeError("LoRA factors " + a.shape_string() + " / " + b.shape_string() + " do not fit weight " +
                             w.shape_string());
        }
        Var delta = ag::matmul_nt(ag::matmul(x, lora->b), lora->a);
        if (lora->scale != 1.0f) delta = ag::scale(delta, lora->scale);
        y = ag::add(y, delta);
    }
    if (bias != nullptr) y = ag::add_row(y, *bias);
    return y;
}

/// Layer-aware overload: rejects factors on a block outside the modulated set.
inline Var attn_projection(const EncoderConfig& cfg, int layer, Var x, Var weight, const Var* bias,
                           const LoraOnTape* lora) {
    if (lora != nullptr && !cfg.is_modulated(layer)) {
        throw ConfigError("LoRA factors supplied to block " + std::to_string(layer) + ", modulated blocks are " +
                          std::to_string(cfg.first_modulated()) + ".." + std::to_string(cfg.depth - 1));
    }
    return attn_projection(x, weight, bias, lora);
}

/// Per-modality modulator parameters for one block.
struct BlockModulator {
    LoraFactors q, k, v;        // lora
    nn::Linear down, up;        // adapter
};

/// Frozen ViT-style encoder plus its per-modality modulators. Parameters live
/// in an external store; this class only records which ones it uses.
class ImageEncoder {
public:
    ImageEncoder() = default;

    ImageEncoder(ParameterStore& store, const EncoderConfig& cfg, const ModalitySet& modalities, ModulatorKind kind,
                 Rng& rng)
        : cfg_(cfg), modalities_(modalities), kind_(kind) {
        cfg.validate();
        modalities.validate();
        const ParamGroup fz = ParamGroup::encoder_frozen;
        const int d = cfg.embed_dim;
        patch_embed_ = nn::make_linear(store, "encoder.patch_embed", fz, cfg.patch * cfg.patch * 3, d, rng);
        pos_embed_ = &store.add("encoder.pos_embed", fz, init::normal(cfg.tokens(), d, 0.02, rng));
        for (int l = 0; l < cfg.depth; ++l) {
            const std::string p = "encoder.blocks." + std::to_string(l);
            Block b;
            b.norm1 = nn::make_norm(store, p + ".norm1", fz, d);
            b.attn = nn::make_attention(store, p + ".attn", fz, d, cfg.heads, rng);
            b.norm2 = nn::make_norm(store, p + ".norm2", fz, d);
            b.mlp = nn::make_mlp(store, p + ".mlp", fz, d, d * cfg.mlp_ratio, rng);
            blocks_.push_back(b);
        }
        final_norm_ = nn::make_norm(store, "encoder.norm", fz, d);
        neck_ = nn::make_linear(store, "encoder.neck", fz, d, cfg.out_dim, rng);
        neck_norm_ = nn::make_norm(store, "encoder.neck_norm", fz, cfg.out_dim);

        if (kind == ModulatorKind::none) return;
        for (Modality m : modalities.members()) {
            auto& per_block = modulators_[m];
            for (int l = cfg.first_modulated(); l < cfg.depth; ++l) {
                const std::string p = std::string("modulator.") + modality_tag(m) + ".blocks." + std::to_string(l);
                BlockModulator bm;
                if (kind == ModulatorKind::lora) {
                    auto make = [&](const char* proj) {
                        LoraFactors f;
                        f.a = &store.add(p + "." + proj + ".lora_a", ParamGroup::modulator,
                                         init::normal(d, cfg.lora_rank, 0.02, rng), m);
                        f.b = &store.add(p + "." + proj + ".lora_b", ParamGroup::modulator,
                                         init::zeros(d, cfg.lora_rank), m);
                        return f;
                    };
                    bm.q = make("q");
                    bm.k = make("k");
                    bm.v = make("v");
                } else {
                    bm.down = nn::make_linear(store, p + ".adapter.down", ParamGroup::modulator, d, cfg.adapter_dim, rng,
                                              true, m);
                    bm.up.weight = &store.add(p + ".adapter.up.weight", ParamGroup::modulator,
                                              init::zeros(d, cfg.adapter_dim), m);
                    bm.up.bias = &store.add(p + ".adapter.up.bias", ParamGroup::modulator, init::zeros(1, d), m);
                }
                per_block.emplace(l, bm);
            }
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    const ModalitySet& modalities() const { return modalities_; }
    ModulatorKind modulator_kind() const { return kind_; }

    /// Patch embedding -> blocks (modality-m modulators in the modulated
    /// set) -> final norm -> neck.
    FeatureMap encode(Tape& t, const ImageF& image, Modality m) const {
        if (!modalities_.contains(m)) {
            throw ConfigError(std::string("modality '") + modality_tag(m) + "' is not configured (model has " +
                              modalities_.to_string() + ")");
        }
        if (image.height() != cfg_.image_side || image.width() != cfg_.image_side || image.channels() != 3) {
            throw ShapeError("encoder expects " + std::to_string(cfg_.image_side) + "x" + std::to_string(cfg_.image_side) +
                             "x3 input, got " + geometry_string(image.height(), image.width()) + "x" +
                             std::to_string(image.channels()));
        }
        Var x = nn::linear(t, t.constant(patchify(image)), patch_embed_);
        x = ag::add(x, t.param(*pos_embed_));
        const std::map<int, BlockModulator>* mods = nullptr;
        if (auto it = modulators_.find(m); it != modulators_.end()) mods = &it->second;
        for (int l = 0; l < cfg_.depth; ++l) {
            const BlockModulator* bm = nullptr;
            if (mods) {
                if (auto it = mods->find(l); it != mods->end()) bm = &it->second;
            }
            x = block(t, x, l, bm);
        }
        x = nn::norm(t, x, final_norm_);
        x = nn::norm(t, nn::linear(t, x, neck_), neck_norm_);
        if (!x.value().all_finite()) throw NumericsError("encoder produced non-finite features");
        return {cfg_.grid(), x};
    }

    /// The modulator parameters of one modality (empty for kind none).
    std::vector<Parameter*> modulator_parameters(Modality m) const {
        std::vector<Parameter*> out;
        auto it = modulators_.find(m);
        if (it == modulators_.end()) return out;
        for (const auto& [l, bm] : it->second) {
            for (Parameter* p : {bm.q.a, bm.q.b, bm.k.a, bm.k.b, bm.v.a, bm.v.b, bm.down.weight, bm.down.bias,
                                 bm.up.weight, bm.up.bias})
                if (p) out.push_back(p);
        }
        return out;
    }

    /// (tokens) x (patch*patch*3) matrix of raster patches, row-major over the
    /// patch grid, (py, px, channel) inside a patch.
    Matrix patchify(const ImageF& image) const {
        const int p = cfg_.patch, g = cfg_.grid();
        Matrix out(g * g, p * p * 3);
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                float* row = out.row(gy * g + gx).data();
                int k = 0;
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        for (int c = 0; c < 3; ++c) row[k++] = image(gy * p + py, gx * p + px, c);
            }
        return out;
    }

private:
    struct Block {
        nn::LayerNorm norm1, norm2;
        nn::Attention attn;
        nn::Mlp mlp;
    };

    Var block(Tape& t, Var x, int layer, const BlockModulator* bm) const {
        const Block& b = blocks_[static_cast<std::size_t>(layer)];
        Var h = nn::norm(t, x, b.norm1);
        auto project = [&](const nn::Linear& lin, const LoraFactors* lf) {
            Var w = t.param(*lin.weight);
            Var bias = t.param(*lin.bias);
            if (lf && lf->a) {
                LoraOnTape lora{t.param(*lf->a), t.param(*lf->b), cfg_.lora_scale()};
                return attn_projection(cfg_, layer, h, w, &bias, &lora);
            }
            return attn_projection(cfg_, layer, h, w, &bias, nullptr);
        };
        const bool lora = bm != nullptr && kind_ == ModulatorKind::lora;
        Var q = project(b.attn.q, lora ? &bm->q : nullptr);
        Var k = project(b.attn.k, lora ? &bm->k : nullptr);
        Var v = project(b.attn.v, lora ? &bm->v : nullptr);
        Var a = nn::linear(t, nn::multi_head(q, k, v, b.attn.heads), b.attn.o);
        x = ag::add(x, a);
        x = ag::add(x, nn::mlp(t, nn::norm(t, x, b.norm2), b.mlp));
        if (bm != nullptr && kind_ == ModulatorKind::adapter) {
            x = ag::add(x, nn::linear(t, ag::gelu(nn::linear(t, x, bm->down)), bm->up));
        }
        return x;
    }

    EncoderConfig cfg_;
    ModalitySet modalities_;
    ModulatorKind kind_ = ModulatorKind::lora;
    nn::Linear patch_embed_;
    Parameter* pos_embed_ = nullptr;
    std::vector<Block> blocks_;
    nn::LayerNorm final_norm_;
    nn::Linear neck_;
    nn::LayerNorm neck_norm_;
    std::map<Modality, std::map<int, BlockModulator>> modulators_;
};

/// Element-wise sum of per-modality feature grids.
inline FeatureMap fuse_modalities(const std::map<Modality, FeatureMap>& features) {
    if (features.empty()) throw PreconditionError("fuse_modalities needs at least one feature map");
    const FeatureMap& first = features.begin()->second;
    FeatureMap out = first;
    bool is_first = true;
    for (const auto& [m, f] : features) {
        if (f.grid != first.grid || !f.tokens.value().same_shape(first.tokens.value())) {
            throw ShapeError(std::string("feature map of modality '") + modality_tag(m) + "' is " +
                             f.tokens.value().shape_string() + ", expected " + first.tokens.value().shape_string());
        }
        if (is_first) {
            is_first = false;
            continue;
        }
        out.tokens = ag::add(out.tokens, f.tokens);
    }
    return out;
}

/// Closed-form parameter counts of the encoder side.
inline std::size_t modulator_param_count(const EncoderConfig& cfg, ModulatorKind kind, std::size_t n_modalities) {
    const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
    const std::size_t layers = static_cast<std::size_t>(cfg.modulated_count());
    switch (kind) {
        case ModulatorKind::lora: return 2 * d * static_cast<std::size_t>(cfg.lora_rank) * 3 * layers * n_modalities;
        case ModulatorKind::adapter: {
            const std::size_t b = static_cast<std::size_t>(cfg.adapter_dim);
            return (b * d + b + d * b + d) * layers * n_modalities;
        }
        case ModulatorKind::none: return 0;
    }
    return 0;
}

inline std::size_t encoder_frozen_param_count(const EncoderConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
    const std::size_t p = static_cast<std::size_t>(cfg.patch);
    const std::size_t hidden = d * static_cast<std::size_t>(cfg.mlp_ratio);
    const std::size_t o = static_cast<std::size_t>(cfg.out_dim);
    const std::size_t per_block = 2 * d + (4 * d * d + 4 * d) + 2 * d + (d * hidden + hidden + hidden * d + d);
    return (p * p * 3 * d + d) + static_cast<std::size_t>(cfg.tokens()) * d +
           per_block * static_cast<std::size_t>(cfg.depth) + 2 * d + (d * o + o) + 2 * o;
}

}  // namespace ssfam
