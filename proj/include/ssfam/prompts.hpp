#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssfam/autograd.hpp"
#include "ssfam/data.hpp"
#include "ssfam/error.hpp"
#include "ssfam/parameters.hpp"
#include "ssfam/rng.hpp"

namespace ssfam {

enum class PointLabel : std::uint8_t { negative = 0, positive = 1 };

struct PointPrompt {
    int x = 0;
    int y = 0;
    PointLabel label = PointLabel::positive;

    friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

struct PointPrompts {
    std::vector<PointPrompt> points;

    int k() const { return static_cast<int>(points.size()); }
    friend bool operator==(const PointPrompts&, const PointPrompts&) = default;
};

/// [[x, y, label], ...] with label 1 for positive, 0 for negative.
inline nlohmann::json to_json(const PointPrompts& p) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& pt : p.points) out.push_back({pt.x, pt.y, static_cast<int>(pt.label)});
    return out;
}

namespace detail {

/// Draws `quota` pixels from `pool`: without replacement when the pool is
/// large enough, otherwise the whole pool topped up by draws with replacement.
inline void draw_class(const std::vector<std::pair<int, int>>& pool, int quota, PointLabel label, Rng& rng,
                       std::vector<PointPrompt>& out) {
    if (quota <= 0 || pool.empty()) return;
    const std::size_t n = pool.size();
    if (static_cast<std::size_t>(quota) <= n) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (int i = 0; i < quota; ++i) {
            const std::size_t j = static_cast<std::size_t>(i) + rng.index(n - static_cast<std::size_t>(i));
            std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
            out.push_back({pool[idx[static_cast<std::size_t>(i)]].second, pool[idx[static_cast<std::size_t>(i)]].first, label});
        }
        return;
    }
    for (const auto& [y, x] : pool) out.push_back({x, y, label});
    for (std::size_t i = n; i < static_cast<std::size_t>(quota); ++i) {
        const auto& [y, x] = pool[rng.index(n)];
        out.push_back({x, y, label});
    }
}

}  // namespace detail

/// Samples k labelled points from the scribble. Foreground and background
/// quotas are proportional to their pixel counts, with at least one point per
/// non-empty class when k allows it. Positive points come first.
inline PointPrompts sample_points(const ScribbleMap& scribble, int k, std::uint64_t seed) {
    if (k < 1) throw PreconditionError("point count k must be >= 1, got " + std::to_string(k));
    std::vector<std::pair<int, int>> fg, bg;
    for (int y = 0; y < scribble.height(); ++y)
        for (int x = 0; x < scribble.width(); ++x) {
            const auto v = scribble(y, x);
            if (v == static_cast<std::uint8_t>(ScribbleCode::foreground)) fg.emplace_back(y, x);
            else if (v == static_cast<std::uint8_t>(ScribbleCode::background)) bg.emplace_back(y, x);
        }
    if (fg.empty() && bg.empty()) throw EmptyScribbleError("scribble has no labelled pixels");

    int k_fg = 0;
    if (bg.empty()) {
        k_fg = k;
    } else if (!fg.empty()) {
        const double share = static_cast<double>(fg.size()) / static_cast<double>(fg.size() + bg.size());
        k_fg = static_cast<int>(std::lround(share * k));
        if (k >= 2) k_fg = std::clamp(k_fg, 1, k - 1);
        else k_fg = share >= 0.5 ? 1 : 0;
    }
    const int k_bg = k - k_fg;

    Rng rng(seed);
    PointPrompts out;
    out.points.reserve(static_cast<std::size_t>(k));
    detail::draw_class(fg, k_fg, PointLabel::positive, rng, out.points);
    detail::draw_class(bg, k_bg, PointLabel::negative, rng, out.points);
    return out;
}

/// Sparse prompt encoder: random Fourier features of the normalised point
/// position (frozen) plus a learned per-label embedding.
class PromptEncoder {
public:
    PromptEncoder() = default;

    PromptEncoder(ParameterStore& store, int dim, Rng& rng) : dim_(dim) {
        if (dim < 2 || dim % 2 != 0) throw ConfigError("prompt embedding width must be even, got " + std::to_string(dim));
        basis_ = &store.add("prompt_encoder.pe_basis", ParamGroup::prompt_encoder_frozen, init::normal(2, dim / 2, 1.0, rng));
        positive_ = &store.add("prompt_encoder.label_embed.positive", ParamGroup::prompt_encoder_trainable,
                               init::normal(1, dim, 1.0, rng));
        negative_ = &store.add("prompt_encoder.label_embed.negative", ParamGroup::prompt_encoder_trainable,
                               init::normal(1, dim, 1.0, rng));
    }

    int dim() const { return dim_; }

    /// Fourier encoding of a position with coordinates already in [0, 1].
    void positional(double u, double v, std::span<float> out) const {
        const Matrix& g = basis_->value;
        const int half = dim_ / 2;
        const double cu = 2.0 * u - 1.0, cv = 2.0 * v - 1.0;
        for (int j = 0; j < half; ++j) {
            const double phase = 2.0 * std::numbers::pi * (cu * g(0, j) + cv * g(1, j));
            out[static_cast<std::size_t>(j)] = static_cast<float>(std::sin(phase));
            out[static_cast<std::size_t>(j + half)] = static_cast<float>(std::cos(phase));
        }
    }

    /// Dense positional encoding of a grid x grid feature map.
    Matrix dense_pe(int grid) const {
        Matrix pe(grid * grid, dim_);
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) positional((gx + 0.5) / grid, (gy + 0.5) / grid, pe.row(gy * grid + gx));
        return pe;
    }

    /// k x dim prompt tokens; throws RangeError for coordinates outside
    /// [0, image_side).
    Var encode(Tape& t, const PointPrompts& prompts, int image_side) const {
        if (prompts.points.empty()) throw PreconditionError("no points to encode");
        Matrix pe(prompts.k(), dim_);
        std::vector<Var> labels;
        labels.reserve(prompts.points.size());
        for (int i = 0; i < prompts.k(); ++i) {
            const PointPrompt& p = prompts.points[static_cast<std::size_t>(i)];
            if (p.x < 0 || p.y < 0 || p.x >= image_side || p.y >= image_side) {
                throw RangeError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") is outside [0, " +
                                 std::to_string(image_side) + ")");
            }
            positional((p.x + 0.5) / image_side, (p.y + 0.5) / image_side, pe.row(i));
            labels.push_back(t.param(p.label == PointLabel::positive ? *positive_ : *negative_));
        }
        t.param(*basis_);
        return ag::add(t.constant(std::move(pe)), ag::concat_rows(labels));
    }

    const Parameter& positive_embedding() const { return *positive_; }
    const Parameter& negative_embedding() const { return *negative_; }

private:
    int dim_ = 0;
    Parameter* basis_ = nullptr;
    Parameter* positive_ = nullptr;
    Parameter* negative_ = nullptr;
};

}  // namespace ssfam
