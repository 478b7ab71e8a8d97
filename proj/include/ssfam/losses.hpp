#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"
#include "ssfam/autograd.hpp"
#include "ssfam/data.hpp"
#include "ssfam/decoder.hpp"
#include "ssfam/error.hpp"

namespace ssfam {

struct LossConfig {
    double eps = 1e-6;           // probability clamp
    double sigma_xy = 3.0;       // spatial bandwidth of the coherence kernel, downsampled pixels
    double sigma_rgb = 0.1;      // colour bandwidth of the coherence kernel
    int lsc_radius = 5;
    int lsc_downsample = 4;
    double smooth_lambda = 10.0;
    int weight_pool = 31;        // odd box size of the boundary weighting
    double boundary_weight = 5.0;
};

/// Loss value with its gradient w.r.t. every prediction pixel.
template <std::floating_point T>
struct LossValue {
    T value{};
    std::vector<T> grad;
    bool warning = false;  // set when the loss is defined by convention (no labelled pixel)
};

namespace losses {

namespace detail {

inline void require_size(std::size_t n, int h, int w, const char* what) {
    if (n != static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {
        throw ShapeError(std::string(what) + ": buffer of " + std::to_string(n) + " values does not match " +
                         geometry_string(h, w));
    }
}

template <typename T>
T clamp_prob(T p, double eps) {
    return std::clamp(p, static_cast<T>(eps), static_cast<T>(1.0 - eps));
}

/// Box mean over the valid part of a k x k window (padding not counted).
inline std::vector<double> box_mean(std::span<const double> src, int h, int w, int k) {
    const int r = k / 2;
    std::vector<double> integral(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    auto I = [&](int y, int x) -> double& { return integral[static_cast<std::size_t>(y) * (w + 1) + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            I(y + 1, x + 1) = src[static_cast<std::size_t>(y) * w + x] + I(y, x + 1) + I(y + 1, x) - I(y, x);
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
            const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
            const double s = I(y1, x1) - I(y0, x1) - I(y1, x0) + I(y0, x0);
            out[static_cast<std::size_t>(y) * w + x] = s / ((y1 - y0) * (x1 - x0));
        }
    return out;
}

}  // namespace detail

/// Boundary-emphasising pixel weights 1 + c * |boxmean_k(target) - target|.
template <std::floating_point T>
std::vector<double> boundary_weights(std::span<const T> target, int h, int w, const LossConfig& cfg) {
    detail::require_size(target.size(), h, w, "boundary_weights");
    if (cfg.weight_pool < 1 || cfg.weight_pool % 2 == 0) throw ConfigError("weight pool size must be odd");
    std::vector<double> t(target.begin(), target.end());
    std::vector<double> m = detail::box_mean(t, h, w, cfg.weight_pool);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 1.0 + cfg.boundary_weight * std::abs(m[i] - t[i]);
    return m;
}

/// Partial cross entropy: mean BCE over scribble-labelled pixels only.
template <std::floating_point T>
LossValue<T> pce(std::span<const T> pred, const ScribbleMap& scribble, const LossConfig& cfg = {}) {
    const int h = scribble.height(), w = scribble.width();
    detail::require_size(pred.size(), h, w, "pce");
    LossValue<T> out;
    out.grad.assign(pred.size(), T{});
    std::size_t labelled = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto code = scribble.raster().data()[i];
        if (code == 0) continue;
        ++labelled;
        const double p = detail::clamp_prob(static_cast<double>(pred[i]), cfg.eps);
        sum += code == 1 ? -std::log(p) : -std::log(1.0 - p);
    }
    if (labelled == 0) {
        out.warning = true;
        return out;
    }
    out.value = static_cast<T>(sum / labelled);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto code = scribble.raster().data()[i];
        if (code == 0) continue;
        const double raw = pred[i];
        if (raw < cfg.eps || raw > 1.0 - cfg.eps) continue;  // clamped: flat
        out.grad[i] = static_cast<T>((code == 1 ? -1.0 / raw : 1.0 / (1.0 - raw)) / labelled);
    }
    return out;
}

/// Local saliency coherence: kernel-weighted |p_i - p_j| over a window,
/// evaluated on average-pooled prediction and colour.
template <std::floating_point T>
LossValue<T> lsc(std::span<const T> pred, int h, int w, const ImageF& rgb, const LossConfig& cfg = {}) {
    detail::require_size(pred.size(), h, w, "lsc");
    if (rgb.height() != h || rgb.width() != w || rgb.channels() != 3) throw ShapeError("lsc: colour guide does not match prediction");
    const int f = cfg.lsc_downsample;
    if (f < 1 || h % f != 0 || w % f != 0) {
        throw ShapeError("lsc: " + geometry_string(h, w) + " is not divisible by the downsampling factor " + std::to_string(f));
    }
    const int hd = h / f, wd = w / f;
    const double inv_area = 1.0 / (f * f);
    std::vector<double> p(static_cast<std::size_t>(hd) * wd, 0.0);
    std::vector<double> c(static_cast<std::size_t>(hd) * wd * 3, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t di = static_cast<std::size_t>(y / f) * wd + x / f;
            p[di] += pred[static_cast<std::size_t>(y) * w + x] * inv_area;
            for (int ch = 0; ch < 3; ++ch) c[di * 3 + ch] += rgb(y, x, ch) * inv_area;
        }
    const int r = cfg.lsc_radius;
    const double sx2 = 2.0 * cfg.sigma_xy * cfg.sigma_xy;
    const double sc2 = 2.0 * cfg.sigma_rgb * cfg.sigma_rgb;
    std::vector<double> gd(p.size(), 0.0);
    double sum = 0.0;
    std::size_t pairs = 0;
    for (int y = 0; y < hd; ++y)
        for (int x = 0; x < wd; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * wd + x;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= hd || xx >= wd) continue;
                    const std::size_t j = static_cast<std::size_t>(yy) * wd + xx;
                    double dc = 0.0;
                    for (int ch = 0; ch < 3; ++ch) dc += (c[i * 3 + ch] - c[j * 3 + ch]) * (c[i * 3 + ch] - c[j * 3 + ch]);
                    const double k = std::exp(-(dy * dy + dx * dx) / sx2) * std::exp(-dc / sc2);
                    const double diff = p[i] - p[j];
                    sum += k * std::abs(diff);
                    const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                    gd[i] += k * s;
                    gd[j] -= k * s;
                    ++pairs;
                }
        }
    LossValue<T> out;
    out.grad.assign(pred.size(), T{});
    if (pairs == 0) return out;
    out.value = static_cast<T>(sum / pairs);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t di = static_cast<std::size_t>(y / f) * wd + x / f;
            out.grad[static_cast<std::size_t>(y) * w + x] = static_cast<T>(gd[di] * inv_area / pairs);
        }
    return out;
}

/// Edge-aware smoothness: mean over forward-difference pairs of
/// |dp| * exp(-lambda * |dI|), I the channel mean of the colour guide.
template <std::floating_point T>
LossValue<T> smoothness(std::span<const T> pred, int h, int w, const ImageF& rgb, const LossConfig& cfg = {}) {
    detail::require_size(pred.size(), h, w, "smoothness");
    if (rgb.height() != h || rgb.width() != w || rgb.channels() != 3) {
        throw ShapeError("smoothness: colour guide does not match prediction");
    }
    std::vector<double> intensity(pred.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            intensity[static_cast<std::size_t>(y) * w + x] = (static_cast<double>(rgb(y, x, 0)) + rgb(y, x, 1) + rgb(y, x, 2)) / 3.0;
    LossValue<T> out;
    out.grad.assign(pred.size(), T{});
    const std::size_t pairs = static_cast<std::size_t>(h) * (w - 1) + static_cast<std::size_t>(h - 1) * w;
    if (h < 1 || w < 1 || pairs == 0) return out;
    double sum = 0.0;
    std::vector<double> g(pred.size(), 0.0);
    auto visit = [&](std::size_t a, std::size_t b) {
        const double dp = static_cast<double>(pred[b]) - static_cast<double>(pred[a]);
        const double k = std::exp(-cfg.smooth_lambda * std::abs(intensity[b] - intensity[a]));
        sum += std::abs(dp) * k;
        const double s = dp > 0.0 ? 1.0 : (dp < 0.0 ? -1.0 : 0.0);
        g[b] += k * s;
        g[a] -= k * s;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) visit(static_cast<std::size_t>(y) * w + x, static_cast<std::size_t>(y) * w + x + 1);
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) visit(static_cast<std::size_t>(y) * w + x, static_cast<std::size_t>(y + 1) * w + x);
    out.value = static_cast<T>(sum / pairs);
    for (std::size_t i = 0; i < g.size(); ++i) out.grad[i] = static_cast<T>(g[i] / pairs);
    return out;
}

/// Boundary-weighted binary cross entropy against a soft, constant target.
template <std::floating_point T>
LossValue<T> wbce(std::span<const T> pred, std::span<const T> target, int h, int w, const LossConfig& cfg = {}) {
    detail::require_size(pred.size(), h, w, "wbce");
    detail::require_size(target.size(), h, w, "wbce target");
    const std::vector<double> wt = boundary_weights(target, h, w, cfg);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = detail::clamp_prob(static_cast<double>(pred[i]), cfg.eps);
        const double g = target[i];
        num += wt[i] * -(g * std::log(p) + (1.0 - g) * std::log(1.0 - p));
        den += wt[i];
    }
    LossValue<T> out;
    out.grad.assign(pred.size(), T{});
    out.value = static_cast<T>(num / den);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double raw = pred[i];
        if (raw < cfg.eps || raw > 1.0 - cfg.eps) continue;
        const double g = target[i];
        out.grad[i] = static_cast<T>(wt[i] * (-g / raw + (1.0 - g) / (1.0 - raw)) / den);
    }
    return out;
}

/// Boundary-weighted soft IoU loss, 1 - sum(w p g) / sum(w (p + g - p g)).
template <std::floating_point T>
LossValue<T> wiou(std::span<const T> pred, std::span<const T> target, int h, int w, const LossConfig& cfg = {}) {
    detail::require_size(pred.size(), h, w, "wiou");
    detail::require_size(target.size(), h, w, "wiou target");
    const std::vector<double> wt = boundary_weights(target, h, w, cfg);
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i], g = target[i];
        inter += wt[i] * p * g;
        uni += wt[i] * (p + g - p * g);
    }
    LossValue<T> out;
    out.grad.assign(pred.size(), T{});
    if (uni <= 1e-12) return out;  // both empty: perfect overlap
    out.value = static_cast<T>(1.0 - inter / uni);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double g = target[i];
        out.grad[i] = static_cast<T>(-(wt[i] * g * uni - inter * wt[i] * (1.0 - g)) / (uni * uni));
    }
    return out;
}

}  // namespace losses

struct LossBreakdown {
    double pce = 0, lsc = 0, sl = 0, wbce = 0, wiou = 0, total = 0;
    bool pce_warning = false;

    double scribble() const { return pce + lsc + sl; }
    double consistency() const { return wbce + wiou; }
    bool finite() const {
        return std::isfinite(pce) && std::isfinite(lsc) && std::isfinite(sl) && std::isfinite(wbce) && std::isfinite(wiou) &&
               std::isfinite(total);
    }
};

inline nlohmann::json to_json(const LossBreakdown& b) {
    return {{"pce", b.pce}, {"lsc", b.lsc}, {"sl", b.sl}, {"wbce", b.wbce}, {"wiou", b.wiou}, {"total", b.total}};
}

/// Scalar tape nodes of the training objective.
struct ObjectiveTerms {
    Var scribble;     // pce + lsc + sl on the prompt branch
    Var consistency;  // wbce + wiou of the no-prompt branch against the detached prompt branch
    Var total;
    LossBreakdown values;
};

namespace detail {

inline Matrix grad_column(const std::vector<double>& g) {
    Matrix m(static_cast<int>(g.size()), 1);
    for (std::size_t i = 0; i < g.size(); ++i) m[i] = static_cast<float>(g[i]);
    return m;
}

inline std::vector<double> column_values(const Var& v) {
    const auto& s = v.value().storage();
    return {s.begin(), s.end()};
}

}  // namespace detail

inline ObjectiveTerms objective(const SiameseOutput& out, const ScribbleMap& scribble, const ImageF& guide,
                                const LossConfig& cfg = {}) {
    const int h = scribble.height(), w = scribble.width();
    if (guide.height() != h || guide.width() != w) throw ShapeError("objective: guide image does not match scribble");
    const std::vector<double> pp = detail::column_values(out.pred_prompt);
    const std::vector<double> pn = detail::column_values(out.pred_noprompt);
    losses::detail::require_size(pp.size(), h, w, "objective prompt branch");
    losses::detail::require_size(pn.size(), h, w, "objective no-prompt branch");

    ObjectiveTerms t;
    const auto l_pce = losses::pce<double>(pp, scribble, cfg);
    const auto l_lsc = losses::lsc<double>(pp, h, w, guide, cfg);
    const auto l_sl = losses::smoothness<double>(pp, h, w, guide, cfg);
    const Var target = ag::detach(out.pred_prompt);
    const std::vector<double> tv = detail::column_values(target);
    const auto l_wbce = losses::wbce<double>(pn, tv, h, w, cfg);
    const auto l_wiou = losses::wiou<double>(pn, tv, h, w, cfg);

    t.scribble = ag::add(ag::add(ag::scalar_from(out.pred_prompt, l_pce.value, detail::grad_column(l_pce.grad)),
                                 ag::scalar_from(out.pred_prompt, l_lsc.value, detail::grad_column(l_lsc.grad))),
                         ag::scalar_from(out.pred_prompt, l_sl.value, detail::grad_column(l_sl.grad)));
    t.consistency = ag::add(ag::scalar_from(out.pred_noprompt, l_wbce.value, detail::grad_column(l_wbce.grad)),
                            ag::scalar_from(out.pred_noprompt, l_wiou.value, detail::grad_column(l_wiou.grad)));
    t.total = ag::add(t.scribble, t.consistency);
    t.values.pce = l_pce.value;
    t.values.lsc = l_lsc.value;
    t.values.sl = l_sl.value;
    t.values.wbce = l_wbce.value;
    t.values.wiou = l_wiou.value;
    t.values.total = t.values.scribble() + t.values.consistency();
    t.values.pce_warning = l_pce.warning;
    return t;
}

}  // namespace ssfam
