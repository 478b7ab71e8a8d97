#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ssfam/autograd.hpp"
#include "ssfam/encoder.hpp"
#include "ssfam/nn.hpp"
#include "ssfam/parameters.hpp"
#include "ssfam/prompts.hpp"

namespace ssfam {

struct DecoderConfig {
    int dim = 96;
    int heads = 4;
    int cross_attn_layers = 2;
    int mask_tokens = 1;
    int upsample_stages = 2;
    int mlp_dim = 192;
    bool null_prompt_token = false;  // learned stand-in token for the no-prompt branch

    static DecoderConfig toy() { return {}; }

    /// Width and depth of the SAM mask decoder.
    static DecoderConfig sam_scale() {
        DecoderConfig c;
        c.dim = 256;
        c.heads = 8;
        c.mlp_dim = 2048;
        return c;
    }

    int upsampled_dim() const { return dim >> upsample_stages; }

    void validate() const {
        if (dim < 2 || heads < 1 || dim % heads != 0) {
            throw ConfigError("decoder dim " + std::to_string(dim) + " must be a multiple of heads " + std::to_string(heads));
        }
        if (dim % 2 != 0) throw ConfigError("decoder dim must be even");
        if (mask_tokens < 1) throw ConfigError("decoder needs at least one mask token");
        if (cross_attn_layers < 1) throw ConfigError("decoder needs at least one cross-attention layer");
        if (upsample_stages < 0 || upsampled_dim() < 1 || (upsampled_dim() << upsample_stages) != dim) {
            throw ConfigError("decoder dim " + std::to_string(dim) + " cannot be halved " + std::to_string(upsample_stages) +
                              " times");
        }
        if (mlp_dim < 1) throw ConfigError("decoder mlp_dim must be positive");
    }
};

/// Bilinear (half-pixel) resampling of a flattened in_side^2 grid to out_side^2.
inline std::shared_ptr<const RowMap> bilinear_row_map(int in_side, int out_side) {
    auto map = std::make_shared<RowMap>();
    map->in_rows = in_side * in_side;
    map->out_rows = out_side * out_side;
    const double s = static_cast<double>(in_side) / out_side;
    std::vector<std::pair<int, double>> taps(static_cast<std::size_t>(out_side) * 2);
    for (int o = 0; o < out_side; ++o) {
        const double f = std::max(0.0, (o + 0.5) * s - 0.5);
        const int i0 = std::min(static_cast<int>(f), in_side - 1);
        const int i1 = std::min(i0 + 1, in_side - 1);
        const double w = f - i0;
        taps[static_cast<std::size_t>(2 * o)] = {i0, 1.0 - w};
        taps[static_cast<std::size_t>(2 * o + 1)] = {i1, w};
    }
    for (int oy = 0; oy < out_side; ++oy)
        for (int ox = 0; ox < out_side; ++ox)
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    const auto [iy, wy] = taps[static_cast<std::size_t>(2 * oy + a)];
                    const auto [ix, wx] = taps[static_cast<std::size_t>(2 * ox + b)];
                    const double w = wy * wx;
                    if (w == 0.0) continue;
                    map->entries.push_back({oy * out_side + ox, iy * in_side + ix, static_cast<float>(w)});
                }
    return map;
}

/// Index map of a 2x pixel shuffle: (g*g) x (4c) -> (2g*2g) x c.
inline std::shared_ptr<const std::vector<int>> pixel_shuffle_index(int grid, int channels) {
    auto idx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(4) * grid * grid * channels);
    const int out_side = 2 * grid;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    for (int c = 0; c < channels; ++c) {
                        const int out_row = (2 * gy + dy) * out_side + 2 * gx + dx;
                        const int in_flat = (gy * grid + gx) * 4 * channels + (dy * 2 + dx) * channels + c;
                        (*idx)[static_cast<std::size_t>(out_row) * channels + c] = in_flat;
                    }
    return idx;
}

/// Two-way transformer mask decoder. A mask token (plus optional prompt
/// tokens) attends to the feature grid and back; the mask token is then
/// projected against the upsampled grid to give per-pixel logits.
class MaskDecoder {
public:
    MaskDecoder() = default;

    MaskDecoder(ParameterStore& store, const std::string& prefix, ParamGroup group, const DecoderConfig& cfg,
                int feature_grid, int image_side, Rng& rng)
        : cfg_(cfg), group_(group), grid_(feature_grid), image_side_(image_side) {
        cfg.validate();
        const int d = cfg.dim;
        mask_tokens_ = &store.add(prefix + ".mask_tokens", group, init::normal(cfg.mask_tokens, d, 1.0, rng));
        if (cfg.null_prompt_token) null_token_ = &store.add(prefix + ".null_token", group, init::normal(1, d, 1.0, rng));
        for (int l = 0; l < cfg.cross_attn_layers; ++l) {
            const std::string p = prefix + ".layers." + std::to_string(l);
            Layer layer;
            layer.self_attn = nn::make_attention(store, p + ".self_attn", group, d, cfg.heads, rng);
            layer.norm1 = nn::make_norm(store, p + ".norm1", group, d);
            layer.token_to_image = nn::make_attention(store, p + ".token_to_image", group, d, cfg.heads, rng);
            layer.norm2 = nn::make_norm(store, p + ".norm2", group, d);
            layer.mlp = nn::make_mlp(store, p + ".mlp", group, d, cfg.mlp_dim, rng);
            layer.norm3 = nn::make_norm(store, p + ".norm3", group, d);
            layer.image_to_token = nn::make_attention(store, p + ".image_to_token", group, d, cfg.heads, rng);
            layer.norm4 = nn::make_norm(store, p + ".norm4", group, d);
            layers_.push_back(layer);
        }
        final_attn_ = nn::make_attention(store, prefix + ".final_attn", group, d, cfg.heads, rng);
        final_norm_ = nn::make_norm(store, prefix + ".final_norm", group, d);
        int c = d;
        int g = feature_grid;
        for (int s = 0; s < cfg.upsample_stages; ++s) {
            const std::string p = prefix + ".upscale." + std::to_string(s);
            Stage st;
            st.proj = nn::make_linear(store, p + ".proj", group, c, 2 * c, rng);  // 4 * (c / 2) outputs
            if (s + 1 < cfg.upsample_stages) st.norm = nn::make_norm(store, p + ".norm", group, c / 2);
            st.shuffle = pixel_shuffle_index(g, c / 2);
            stages_.push_back(std::move(st));
            c /= 2;
            g *= 2;
        }
        hyper_ = {nn::make_linear(store, prefix + ".hyper.fc1", group, d, d, rng),
                  nn::make_linear(store, prefix + ".hyper.fc2", group, d, cfg.upsampled_dim(), rng)};
        logit_grid_ = g;
        upsample_ = bilinear_row_map(logit_grid_, image_side);
    }

    const DecoderConfig& config() const { return cfg_; }
    ParamGroup group() const { return group_; }
    int image_side() const { return image_side_; }

    /// Probability column (image_side^2 x 1). `sparse` holds prompt tokens;
    /// nullptr runs the unconditioned path.
    Var decode(Tape& t, const FeatureMap& features, const Matrix& image_pe, const Var* sparse) const {
        if (features.grid != grid_ || features.tokens.rows() != grid_ * grid_) {
            throw ShapeError("decoder expects a " + std::to_string(grid_) + "x" + std::to_string(grid_) + " feature grid");
        }
        if (features.channels() != cfg_.dim) {
            throw ShapeError("feature width " + std::to_string(features.channels()) + " does not match decoder width " +
                             std::to_string(cfg_.dim));
        }
        if (!image_pe.same_shape(features.tokens.value())) throw ShapeError("image positional encoding has the wrong shape");
        std::vector<Var> token_parts{t.param(*mask_tokens_)};
        if (sparse != nullptr) {
            if (sparse->rows() == 0) throw PreconditionError("prompt branch requires at least one sparse token");
            if (sparse->cols() != cfg_.dim) {
                throw ShapeError("prompt tokens are " + std::to_string(sparse->cols()) + " wide, decoder expects " +
                                 std::to_string(cfg_.dim));
            }
            token_parts.push_back(*sparse);
        } else if (null_token_ != nullptr) {
            token_parts.push_back(t.param(*null_token_));
        }
        const Var query_pe = token_parts.size() == 1 ? token_parts[0] : ag::concat_rows(token_parts);
        Var tokens = query_pe;
        Var src = features.tokens;
        const Var pe = t.constant(image_pe);

        for (const Layer& l : layers_) {
            Var q = ag::add(tokens, query_pe);
            tokens = nn::norm(t, ag::add(tokens, nn::attention(t, q, q, tokens, l.self_attn)), l.norm1);
            q = ag::add(tokens, query_pe);
            Var k = ag::add(src, pe);
            tokens = nn::norm(t, ag::add(tokens, nn::attention(t, q, k, src, l.token_to_image)), l.norm2);
            tokens = nn::norm(t, ag::add(tokens, nn::mlp(t, tokens, l.mlp)), l.norm3);
            q = ag::add(tokens, query_pe);
            k = ag::add(src, pe);
            src = nn::norm(t, ag::add(src, nn::attention(t, k, q, tokens, l.image_to_token)), l.norm4);
        }
        {
            Var q = ag::add(tokens, query_pe);
            Var k = ag::add(src, pe);
            tokens = nn::norm(t, ag::add(tokens, nn::attention(t, q, k, src, final_attn_)), final_norm_);
        }

        Var up = src;
        for (const Stage& st : stages_) {
            const int rows = up.rows() * 4;
            const int cols = up.cols() / 2;
            up = ag::gather(nn::linear(t, up, st.proj), rows, cols, st.shuffle);
            if (st.norm.gamma) up = nn::norm(t, up, st.norm);
            up = ag::gelu(up);
        }
        Var hyper = nn::mlp(t, ag::slice_rows(tokens, 0, 1), hyper_);
        Var logits = ag::matmul_nt(up, hyper);
        return ag::sigmoid(ag::map_rows(logits, upsample_));
    }

    std::vector<Parameter*> parameters(ParameterStore& store) const {
        std::vector<Parameter*> out;
        for (Parameter* p : store.all())
            if (p->group == group_) out.push_back(p);
        return out;
    }

private:
    struct Layer {
        nn::Attention self_attn, token_to_image, image_to_token;
        nn::LayerNorm norm1, norm2, norm3, norm4;
        nn::Mlp mlp;
    };
    struct Stage {
        nn::Linear proj;
        nn::LayerNorm norm;
        std::shared_ptr<const std::vector<int>> shuffle;
    };

    DecoderConfig cfg_;
    ParamGroup group_ = ParamGroup::unassigned;
    int grid_ = 0;
    int image_side_ = 0;
    int logit_grid_ = 0;
    Parameter* mask_tokens_ = nullptr;
    Parameter* null_token_ = nullptr;
    std::vector<Layer> layers_;
    nn::Attention final_attn_;
    nn::LayerNorm final_norm_;
    std::vector<Stage> stages_;
    nn::Mlp hyper_;
    std::shared_ptr<const RowMap> upsample_;
};

inline std::size_t decoder_param_count(const DecoderConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    const std::size_t m = static_cast<std::size_t>(cfg.mlp_dim);
    const std::size_t attn = 4 * d * d + 4 * d;
    const std::size_t layer = 3 * attn + 4 * 2 * d + (d * m + m + m * d + d);
    std::size_t n = static_cast<std::size_t>(cfg.mask_tokens) * d + (cfg.null_prompt_token ? d : 0) +
                    layer * static_cast<std::size_t>(cfg.cross_attn_layers) + attn + 2 * d;
    std::size_t c = d;
    for (int s = 0; s < cfg.upsample_stages; ++s) {
        n += c * 2 * c + 2 * c;
        if (s + 1 < cfg.upsample_stages) n += 2 * (c / 2);
        c /= 2;
    }
    n += d * d + d + d * c + c;
    return n;
}

/// Prompt-branch and no-prompt-branch probability columns.
struct SiameseOutput {
    Var pred_prompt;
    Var pred_noprompt;
};

/// Column vector (side^2 x 1) to a side x side raster.
inline Raster<float> to_raster(const Matrix& column, int side) {
    if (column.size() != static_cast<std::size_t>(side) * side) throw ShapeError("prediction size does not match side");
    Raster<float> out(side, side, 1);
    std::copy(column.storage().begin(), column.storage().end(), out.storage().begin());
    return out;
}

}  // namespace ssfam
