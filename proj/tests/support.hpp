#pragma once
// Shared test helpers and slow reference implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "ssfam/ssfam.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh scratch directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ssfam_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

inline std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::vector<double> uniform_vector(std::size_t n, double lo, double hi, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(gen);
    return v;
}

inline ssfam::ImageF random_rgb(int h, int w, std::uint64_t seed) {
    ssfam::ImageF img(h, w, 3);
    const auto v = uniform_vector(static_cast<std::size_t>(h) * w * 3, 0.0, 1.0, seed);
    std::copy(v.begin(), v.end(), img.storage().begin());
    return img;
}

inline ssfam::ScribbleMap random_scribble(int h, int w, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> d(0, 2);
    ssfam::Mask8 m(h, w, 1);
    for (auto& v : m.storage()) v = static_cast<std::uint8_t>(d(gen));
    return ssfam::ScribbleMap(std::move(m));
}

/// Preprocessed-looking sample with random normalised modalities, an RGB
/// guide in [0,1], a random scribble and a rectangle gt.
inline ssfam::Sample random_sample(int side, const ssfam::ModalitySet& mods, std::uint64_t seed) {
    ssfam::Sample s;
    s.id = "rand_" + std::to_string(seed);
    s.guide = random_rgb(side, side, seed * 7 + 1);
    for (ssfam::Modality m : mods.members()) {
        ssfam::ImageF img = random_rgb(side, side, seed * 7 + 2 + static_cast<std::uint64_t>(m));
        for (auto& v : img.storage()) v = 2.0f * v - 1.0f;
        s.modalities.emplace(m, std::move(img));
    }
    s.scribble = random_scribble(side, side, seed * 7 + 5);
    ssfam::Mask8 gt(side, side, 1, 0);
    for (int y = side / 4; y < 3 * side / 4; ++y)
        for (int x = side / 4; x < side / 2; ++x) gt(y, x) = 1;
    s.gt = gt;
    s.source_height = side;
    s.source_width = side;
    s.normalized = true;
    return s;
}

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheck {
    double fraction_within = 0.0;  // share of coordinates with rel error <= tol
    double worst = 0.0;            // worst relative error
};

/// Central differences of `f` at `x`, compared coordinate-wise to `analytic`.
inline GradCheck check_gradient(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                const std::vector<double>& analytic, double step = 1e-4, double tol = 1e-3) {
    std::size_t ok = 0;
    GradCheck r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double up = f(x);
        x[i] = orig - step;
        const double down = f(x);
        x[i] = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max(std::abs(numeric), std::abs(analytic[i]));
        const double rel = denom < 1e-10 ? 0.0 : std::abs(numeric - analytic[i]) / denom;
        if (rel <= tol) ++ok;
        r.worst = std::max(r.worst, rel);
    }
    r.fraction_within = static_cast<double>(ok) / static_cast<double>(x.size());
    return r;
}

// ---------------------------------------------------------------------------
// Loss oracle

/// Partial cross entropy by an explicit per-pixel loop.
inline double pce_loop(const std::vector<double>& pred, const ssfam::ScribbleMap& s, double eps = 1e-6) {
    double sum = 0.0;
    int count = 0;
    for (int y = 0; y < s.height(); ++y)
        for (int x = 0; x < s.width(); ++x) {
            const int code = s(y, x);
            if (code == 0) continue;
            double p = pred[static_cast<std::size_t>(y * s.width() + x)];
            p = std::min(std::max(p, eps), 1.0 - eps);
            const double g = code == 1 ? 1.0 : 0.0;
            sum += -(g * std::log(p) + (1.0 - g) * std::log(1.0 - p));
            ++count;
        }
    return count == 0 ? 0.0 : sum / count;
}

// ---------------------------------------------------------------------------
// Metric oracles: direct transcriptions of the canonical definitions,
// written without the histogram machinery of the library.

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const ssfam::Raster<float>& r) {
    Grid g(static_cast<std::size_t>(r.height()), std::vector<double>(static_cast<std::size_t>(r.width())));
    for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) g[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = r(y, x);
    return g;
}

inline Grid to_grid(const ssfam::Mask8& r) {
    Grid g(static_cast<std::size_t>(r.height()), std::vector<double>(static_cast<std::size_t>(r.width())));
    for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) g[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = r(y, x) ? 1.0 : 0.0;
    return g;
}

inline double oracle_mae(const Grid& p, const Grid& g) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < p.size(); ++y)
        for (std::size_t x = 0; x < p[y].size(); ++x, ++n) s += std::fabs(p[y][x] - g[y][x]);
    return s / static_cast<double>(n);
}

inline double oracle_max_f(const Grid& p, const Grid& g, double beta2 = 0.3) {
    double best = 0.0;
    for (int k = 0; k <= 255; ++k) {
        const double t = k / 255.0;
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t y = 0; y < p.size(); ++y)
            for (std::size_t x = 0; x < p[y].size(); ++x) {
                const bool b = p[y][x] >= t;
                const bool gt = g[y][x] > 0.5;
                if (b && gt) tp += 1;
                if (b && !gt) fp += 1;
                if (!b && gt) fn += 1;
            }
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        const double f = (beta2 * prec + rec) > 0 ? (1 + beta2) * prec * rec / (beta2 * prec + rec) : 0.0;
        best = std::max(best, f);
    }
    return best;
}

/// Per-pixel alignment matrix, enhanced and averaged over N pixels.
inline double oracle_max_e(const Grid& p, const Grid& g) {
    const double eps = 2.220446049250313e-16;
    const std::size_t h = p.size(), w = p[0].size();
    const double n = static_cast<double>(h * w);
    double gsum = 0;
    for (const auto& row : g)
        for (double v : row) gsum += v > 0.5 ? 1 : 0;
    double best = 0.0;
    for (int k = 0; k <= 255; ++k) {
        const double t = k / 255.0;
        Grid fm(h, std::vector<double>(w));
        double fsum = 0;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                fm[y][x] = p[y][x] >= t ? 1.0 : 0.0;
                fsum += fm[y][x];
            }
        double total = 0;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double enhanced;
                const double gv = g[y][x] > 0.5 ? 1.0 : 0.0;
                if (gsum == 0) {
                    enhanced = 1.0 - fm[y][x];
                } else if (gsum == n) {
                    enhanced = fm[y][x];
                } else {
                    const double a = fm[y][x] - fsum / n;
                    const double b = gv - gsum / n;
                    const double align = 2 * a * b / (a * a + b * b + eps);
                    enhanced = (align + 1) * (align + 1) / 4;
                }
                total += enhanced;
            }
        best = std::max(best, total / n);
    }
    return best;
}

namespace sm_oracle {

inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double object_score(const std::vector<double>& v) {
    const double eps = 2.220446049250313e-16;
    if (v.empty()) return 0.0;
    const double m = mean(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return 2 * m / (m * m + 1 + sd + eps);
}

inline Grid crop(const Grid& a, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
    Grid out;
    for (std::size_t y = y0; y < y1; ++y) out.emplace_back(a[y].begin() + static_cast<std::ptrdiff_t>(x0), a[y].begin() + static_cast<std::ptrdiff_t>(x1));
    return out;
}

inline double ssim(const Grid& p, const Grid& g) {
    const double eps = 2.220446049250313e-16;
    std::vector<double> pv, gv;
    for (std::size_t y = 0; y < p.size(); ++y)
        for (std::size_t x = 0; x < p[y].size(); ++x) {
            pv.push_back(p[y][x]);
            gv.push_back(g[y][x]);
        }
    const std::size_t n = pv.size();
    if (n == 0) return 0.0;
    const double mx = mean(pv), my = mean(gv);
    double sx = 0, sy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += (pv[i] - mx) * (pv[i] - mx);
        sy += (gv[i] - my) * (gv[i] - my);
        sxy += (pv[i] - mx) * (gv[i] - my);
    }
    const double d = n > 1 ? static_cast<double>(n - 1) : 1.0;
    sx /= d;
    sy /= d;
    sxy /= d;
    const double alpha = 4 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sx + sy);
    if (alpha != 0) return alpha / (beta + eps);
    return beta == 0 ? 1.0 : 0.0;
}

}  // namespace sm_oracle

inline double oracle_s_measure(const Grid& p, const Grid& g, double alpha = 0.5) {
    using namespace sm_oracle;
    const std::size_t h = p.size(), w = p[0].size();
    std::vector<double> all_p, fg_p, bg_p;
    double gsum = 0, sy = 0, sx = 0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            all_p.push_back(p[y][x]);
            if (g[y][x] > 0.5) {
                fg_p.push_back(p[y][x]);
                gsum += 1;
                sy += static_cast<double>(y);
                sx += static_cast<double>(x);
            } else {
                bg_p.push_back(1.0 - p[y][x]);
            }
        }
    const double area = static_cast<double>(h * w);
    const double u = gsum / area;
    if (u == 0) return 1.0 - mean(all_p);
    if (u == 1) return mean(all_p);
    const double object = u * object_score(fg_p) + (1 - u) * object_score(bg_p);
    // numpy-style round (half to even) of the centroid, then +1.
    const auto X = static_cast<std::size_t>(std::nearbyint(sx / gsum)) + 1;
    const auto Y = static_cast<std::size_t>(std::nearbyint(sy / gsum)) + 1;
    const double w1 = static_cast<double>(X * Y) / area;
    const double w2 = static_cast<double>(Y * (w - X)) / area;
    const double w3 = static_cast<double>((h - Y) * X) / area;
    const double w4 = 1 - w1 - w2 - w3;
    const double region = w1 * ssim(crop(p, 0, Y, 0, X), crop(g, 0, Y, 0, X)) +
                          w2 * ssim(crop(p, 0, Y, X, w), crop(g, 0, Y, X, w)) +
                          w3 * ssim(crop(p, Y, h, 0, X), crop(g, Y, h, 0, X)) +
                          w4 * ssim(crop(p, Y, h, X, w), crop(g, Y, h, X, w));
    return std::max(0.0, alpha * object + (1 - alpha) * region);
}

/// Random prediction/gt pair; gt is a random rectangle union (occasionally
/// empty or full) so every metric branch is exercised.
inline std::pair<ssfam::Raster<float>, ssfam::Mask8> random_metric_pair(int side, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ssfam::Raster<float> p(side, side, 1);
    ssfam::Mask8 g(side, side, 1);
    const int mode = static_cast<int>(seed % 10);
    if (mode == 0) {
        // empty gt
    } else if (mode == 1) {
        for (auto& v : g.storage()) v = 1;
    } else {
        const int rects = 1 + static_cast<int>(u(gen) * 3);
        for (int r = 0; r < rects; ++r) {
            const int y0 = static_cast<int>(u(gen) * side), x0 = static_cast<int>(u(gen) * side);
            const int y1 = std::min(side, y0 + 1 + static_cast<int>(u(gen) * side / 2));
            const int x1 = std::min(side, x0 + 1 + static_cast<int>(u(gen) * side / 2));
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) g(y, x) = 1;
        }
    }
    const bool quantized = seed % 3 == 0;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            double v = 0.6 * u(gen) + 0.4 * g(y, x);
            if (quantized) v = std::round(v * 255.0) / 255.0;
            p(y, x) = static_cast<float>(std::min(1.0, v));
        }
    return {p, g};
}

}  // namespace testing_support
