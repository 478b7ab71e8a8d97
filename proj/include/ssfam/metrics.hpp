#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssfam/data.hpp"
#include "ssfam/error.hpp"
#include "ssfam/image_io.hpp"
#include "ssfam/raster.hpp"

namespace ssfam::metrics {

namespace fs = std::filesystem;

inline constexpr double kEps = 2.220446049250313e-16;  // double machine epsilon
inline constexpr int kThresholds = 256;

using Prob = Raster<float>;  // H x W x 1 in [0,1]
using Binary = Mask8;        // H x W x 1, nonzero = foreground

inline void require_pair(const Prob& pred, const Binary& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width() || pred.channels() != 1 || gt.channels() != 1) {
        throw ShapeError("prediction " + geometry_string(pred.height(), pred.width()) + " does not match ground truth " +
                         geometry_string(gt.height(), gt.width()));
    }
    if (pred.storage().empty()) throw ShapeError("empty raster");
}

inline double mae(const Prob& pred, const Binary& gt) {
    require_pair(pred, gt);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.storage().size(); ++i) s += std::abs(pred.storage()[i] - (gt.storage()[i] ? 1.0 : 0.0));
    return s / static_cast<double>(pred.storage().size());
}

// ---------------------------------------------------------------------------
// S-measure

namespace detail {

struct Region {
    std::vector<double> pred;
    std::vector<double> gt;
};

/// Object similarity 2x / (x^2 + 1 + sigma), x and sigma (ddof 1) over the mask.
inline double s_object(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sigma = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sigma + kEps);
}

inline double ssim(const Region& r) {
    const std::size_t n = r.pred.size();
    if (n == 0) return 0.0;
    double x = 0.0, y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x += r.pred[i];
        y += r.gt[i];
    }
    x /= static_cast<double>(n);
    y /= static_cast<double>(n);
    double sx = 0.0, sy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += (r.pred[i] - x) * (r.pred[i] - x);
        sy += (r.gt[i] - y) * (r.gt[i] - y);
        sxy += (r.pred[i] - x) * (r.gt[i] - y);
    }
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    const double alpha = 4.0 * x * y * sxy;
    const double beta = (x * x + y * y) * (sx + sy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    if (beta == 0.0) return 1.0;
    return 0.0;
}

}  // namespace detail

/// Structure measure alpha * S_object + (1 - alpha) * S_region, clamped at 0.
inline double s_measure(const Prob& pred, const Binary& gt, double alpha = 0.5) {
    require_pair(pred, gt);
    const int h = pred.height(), w = pred.width();
    const std::size_t n = pred.storage().size();
    std::size_t fg = 0;
    double pred_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        fg += gt.storage()[i] ? 1 : 0;
        pred_mean += pred.storage()[i];
    }
    pred_mean /= static_cast<double>(n);
    if (fg == 0) return 1.0 - pred_mean;
    if (fg == n) return pred_mean;

    // Object term.
    std::vector<double> fg_vals, bg_vals;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = pred.storage()[i];
        if (gt.storage()[i]) fg_vals.push_back(p);
        else bg_vals.push_back(1.0 - p);
    }
    const double u = static_cast<double>(fg) / static_cast<double>(n);
    const double object = u * detail::s_object(fg_vals) + (1.0 - u) * detail::s_object(bg_vals);

    // Region term: split at the gt centroid (rounded half to even, +1).
    double cy = 0.0, cx = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (gt(y, x)) {
                cy += y;
                cx += x;
            }
    const int X = static_cast<int>(std::nearbyint(cx / static_cast<double>(fg))) + 1;
    const int Y = static_cast<int>(std::nearbyint(cy / static_cast<double>(fg))) + 1;
    std::array<detail::Region, 4> parts;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int q = (y < Y ? 0 : 2) + (x < X ? 0 : 1);
            parts[static_cast<std::size_t>(q)].pred.push_back(pred(y, x));
            parts[static_cast<std::size_t>(q)].gt.push_back(gt(y, x) ? 1.0 : 0.0);
        }
    const double area = static_cast<double>(h) * w;
    const double w1 = static_cast<double>(X) * Y / area;
    const double w2 = static_cast<double>(Y) * (w - X) / area;
    const double w3 = static_cast<double>(h - Y) * X / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    const double region = w1 * detail::ssim(parts[0]) + w2 * detail::ssim(parts[1]) + w3 * detail::ssim(parts[2]) +
                          w4 * detail::ssim(parts[3]);
    return std::max(0.0, alpha * object + (1.0 - alpha) * region);
}

// ---------------------------------------------------------------------------
// Threshold sweeps

/// Per-threshold counts for t_k = k / 255: predicted positives (p >= t_k)
/// and true positives among them.
struct ThresholdCounts {
    std::array<std::size_t, kThresholds> positive{};
    std::array<std::size_t, kThresholds> true_positive{};
    std::size_t gt_fg = 0;
    std::size_t total = 0;
};

/// Largest k with p >= k / 255, or -1.
inline int top_threshold(double p) {
    if (!(p >= 0.0)) return -1;
    int k = static_cast<int>(std::floor(p * 255.0));
    k = std::clamp(k, 0, kThresholds - 1);
    while (k + 1 < kThresholds && p >= (k + 1) / 255.0) ++k;
    while (k >= 0 && p < k / 255.0) --k;
    return k;
}

inline ThresholdCounts threshold_counts(const Prob& pred, const Binary& gt) {
    require_pair(pred, gt);
    std::array<std::size_t, kThresholds> hist_all{}, hist_fg{};
    ThresholdCounts c;
    c.total = pred.storage().size();
    for (std::size_t i = 0; i < c.total; ++i) {
        const bool g = gt.storage()[i] != 0;
        c.gt_fg += g ? 1 : 0;
        const int k = top_threshold(pred.storage()[i]);
        if (k < 0) continue;
        ++hist_all[static_cast<std::size_t>(k)];
        if (g) ++hist_fg[static_cast<std::size_t>(k)];
    }
    std::size_t acc_all = 0, acc_fg = 0;
    for (int k = kThresholds - 1; k >= 0; --k) {
        acc_all += hist_all[static_cast<std::size_t>(k)];
        acc_fg += hist_fg[static_cast<std::size_t>(k)];
        c.positive[static_cast<std::size_t>(k)] = acc_all;
        c.true_positive[static_cast<std::size_t>(k)] = acc_fg;
    }
    return c;
}

inline double f_beta(std::size_t tp, std::size_t positive, std::size_t gt_fg, double beta2) {
    if (positive == 0 || gt_fg == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(positive);
    const double recall = static_cast<double>(tp) / static_cast<double>(gt_fg);
    const double denom = beta2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta2) * precision * recall / denom;
}

inline double max_f(const Prob& pred, const Binary& gt, double beta2 = 0.3) {
    const ThresholdCounts c = threshold_counts(pred, gt);
    double best = 0.0;
    for (int k = 0; k < kThresholds; ++k)
        best = std::max(best, f_beta(c.true_positive[static_cast<std::size_t>(k)], c.positive[static_cast<std::size_t>(k)],
                                     c.gt_fg, beta2));
    return best;
}

/// Enhanced alignment for one binarisation, from the four confusion cells.
inline double e_measure_counts(std::size_t tp, std::size_t positive, std::size_t gt_fg, std::size_t total) {
    const double n = static_cast<double>(total);
    const std::size_t negative = total - positive;
    double sum = 0.0;
    if (gt_fg == 0) {
        sum = static_cast<double>(negative);
    } else if (gt_fg == total) {
        sum = static_cast<double>(positive);
    } else {
        const std::size_t fp = positive - tp;
        const std::size_t fn = gt_fg - tp;
        const std::size_t tn = negative - fn;
        const double mp = static_cast<double>(positive) / n;
        const double mg = static_cast<double>(gt_fg) / n;
        auto enhanced = [](double a, double b) {
            const double align = 2.0 * a * b / (a * a + b * b + kEps);
            return (align + 1.0) * (align + 1.0) / 4.0;
        };
        sum = enhanced(1.0 - mp, 1.0 - mg) * static_cast<double>(tp) + enhanced(1.0 - mp, -mg) * static_cast<double>(fp) +
              enhanced(-mp, 1.0 - mg) * static_cast<double>(fn) + enhanced(-mp, -mg) * static_cast<double>(tn);
    }
    return sum / n;
}

inline double max_e(const Prob& pred, const Binary& gt) {
    const ThresholdCounts c = threshold_counts(pred, gt);
    double best = 0.0;
    for (int k = 0; k < kThresholds; ++k)
        best = std::max(best, e_measure_counts(c.true_positive[static_cast<std::size_t>(k)],
                                               c.positive[static_cast<std::size_t>(k)], c.gt_fg, c.total));
    return best;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricValues {
    double s = 0.0;
    double max_f = 0.0;
    double max_e = 0.0;
    double mae = 0.0;
};

inline MetricValues evaluate_pair(const Prob& pred, const Binary& gt) {
    return {s_measure(pred, gt), max_f(pred, gt), max_e(pred, gt), mae(pred, gt)};
}

struct ImageMetrics {
    std::string id;
    MetricValues values;
};

struct MetricReport {
    std::string name;
    std::vector<ImageMetrics> per_image;
    MetricValues dataset;
    std::size_t count = 0;
    std::vector<std::pair<std::string, std::size_t>> components;  // filled for overall reports
};

inline nlohmann::json to_json(const MetricValues& v) {
    return {{"S", v.s}, {"maxF", v.max_f}, {"maxE", v.max_e}, {"MAE", v.mae}};
}

inline nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json j = {{"name", r.name}, {"count", r.count}, {"metrics", to_json(r.dataset)}};
    if (!r.components.empty()) {
        nlohmann::json comps = nlohmann::json::array();
        for (const auto& [n, c] : r.components) comps.push_back({{"name", n}, {"count", c}});
        j["datasets"] = comps;
    }
    return j;
}

/// Mean of the per-image metrics.
inline MetricReport aggregate(std::string name, std::vector<ImageMetrics> per_image) {
    if (per_image.empty()) throw PreconditionError("no images to aggregate");
    MetricReport r;
    r.name = std::move(name);
    r.count = per_image.size();
    for (const auto& im : per_image) {
        r.dataset.s += im.values.s;
        r.dataset.max_f += im.values.max_f;
        r.dataset.max_e += im.values.max_e;
        r.dataset.mae += im.values.mae;
    }
    const double inv = 1.0 / static_cast<double>(r.count);
    r.dataset.s *= inv;
    r.dataset.max_f *= inv;
    r.dataset.max_e *= inv;
    r.dataset.mae *= inv;
    r.per_image = std::move(per_image);
    return r;
}

enum class OverallWeighting { image_count, dataset_mean };

/// Cross-dataset aggregate, weighted by image count or a plain mean.
inline MetricReport overall(const std::vector<MetricReport>& reports,
                            OverallWeighting weighting = OverallWeighting::image_count) {
    if (reports.empty()) throw PreconditionError("overall needs at least one report");
    MetricReport out;
    out.name = "overall";
    double wsum = 0.0;
    for (const MetricReport& r : reports) {
        if (r.count == 0) throw PreconditionError("report '" + r.name + "' has no images");
        const double wgt = weighting == OverallWeighting::image_count ? static_cast<double>(r.count) : 1.0;
        out.dataset.s += wgt * r.dataset.s;
        out.dataset.max_f += wgt * r.dataset.max_f;
        out.dataset.max_e += wgt * r.dataset.max_e;
        out.dataset.mae += wgt * r.dataset.mae;
        wsum += wgt;
        out.count += r.count;
        out.components.emplace_back(r.name, r.count);
    }
    out.dataset.s /= wsum;
    out.dataset.max_f /= wsum;
    out.dataset.max_e /= wsum;
    out.dataset.mae /= wsum;
    return out;
}

inline std::set<std::string> png_stems(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
    std::set<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.insert(e.path().stem().string());
    return out;
}

/// Scores every <id>.png of pred_dir against gt_dir/<id>.png. The two
/// directories must hold the same id set.
inline MetricReport evaluate(const fs::path& pred_dir, const fs::path& gt_dir, std::string name = "dataset") {
    const auto pred_ids = png_stems(pred_dir);
    const auto gt_ids = png_stems(gt_dir);
    if (pred_ids != gt_ids) {
        std::vector<std::string> only_pred, only_gt;
        std::set_difference(pred_ids.begin(), pred_ids.end(), gt_ids.begin(), gt_ids.end(), std::back_inserter(only_pred));
        std::set_difference(gt_ids.begin(), gt_ids.end(), pred_ids.begin(), pred_ids.end(), std::back_inserter(only_gt));
        auto first = [](const std::vector<std::string>& v) { return v.empty() ? std::string("-") : v.front(); };
        throw ManifestError("prediction and ground-truth ids differ: " + std::to_string(only_pred.size()) +
                            " only in predictions (e.g. " + first(only_pred) + "), " + std::to_string(only_gt.size()) +
                            " only in ground truth (e.g. " + first(only_gt) + ")");
    }
    if (pred_ids.empty()) throw PreconditionError("no PNG files in " + pred_dir.string());
    std::vector<ImageMetrics> per;
    for (const std::string& id : pred_ids) {
        const Mask8 p8 = io::read_gray8(pred_dir / (id + ".png"));
        Mask8 g = io::read_gray8(gt_dir / (id + ".png"));
        for (auto& v : g.storage()) v = v > 127 ? 1 : 0;
        Prob p(p8.height(), p8.width(), 1);
        for (std::size_t i = 0; i < p.storage().size(); ++i) p.storage()[i] = p8.storage()[i] / 255.0f;
        per.push_back({id, evaluate_pair(p, g)});
    }
    return aggregate(std::move(name), std::move(per));
}

inline void write_csv(const MetricReport& r, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os.precision(10);
    os << "id,S,maxF,maxE,MAE\n";
    for (const auto& im : r.per_image)
        os << im.id << ',' << im.values.s << ',' << im.values.max_f << ',' << im.values.max_e << ',' << im.values.mae << '\n';
}

}  // namespace ssfam::metrics
