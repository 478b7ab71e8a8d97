#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssfam/error.hpp"
#include "ssfam/image_io.hpp"
#include "ssfam/modality.hpp"
#include "ssfam/raster.hpp"
#include "ssfam/rng.hpp"

namespace ssfam {

namespace fs = std::filesystem;

/// Scribble label codes.
enum class ScribbleCode : std::uint8_t { unknown = 0, foreground = 1, background = 2 };

/// Tri-valued annotation raster: 0 unlabeled, 1 foreground, 2 background.
class ScribbleMap {
public:
    ScribbleMap() = default;
    ScribbleMap(int height, int width) : values_(height, width, 1, 0) {}

    /// Throws EncodingError if any pixel is outside {0, 1, 2}.
    explicit ScribbleMap(Mask8 values) : values_(std::move(values)) {
        if (values_.channels() != 1) throw EncodingError("scribble raster must be single-channel");
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (values_.data()[i] > 2) {
                const int y = static_cast<int>(i / values_.width());
                const int x = static_cast<int>(i % values_.width());
                throw EncodingError("scribble value " + std::to_string(values_.data()[i]) +
                                    " at (" + std::to_string(x) + ", " + std::to_string(y) +
                                    ") is outside {0, 1, 2}");
            }
        }
    }

    int height() const { return values_.height(); }
    int width() const { return values_.width(); }
    bool empty() const { return values_.empty(); }

    std::uint8_t operator()(int y, int x) const { return values_(y, x); }
    void set(int y, int x, ScribbleCode code) { values_(y, x) = static_cast<std::uint8_t>(code); }

    const Mask8& raster() const { return values_; }

    std::size_t count(ScribbleCode code) const {
        return static_cast<std::size_t>(
            std::count(values_.data().begin(), values_.data().end(), static_cast<std::uint8_t>(code)));
    }

    friend bool operator==(const ScribbleMap&, const ScribbleMap&) = default;

private:
    Mask8 values_;
};

/// Aligned multimodal rasters plus annotations. After `preprocess` the
/// modality rasters are normalised and `guide` holds the resized RGB in [0,1].
struct Sample {
    std::string id;
    std::map<Modality, ImageF> modalities;
    ScribbleMap scribble;
    std::optional<Mask8> gt;  // binary 0/1
    ImageF guide;
    int source_height = 0;
    int source_width = 0;
    bool normalized = false;

    int height() const { return guide.height(); }
    int width() const { return guide.width(); }

    ModalitySet modality_set() const {
        ModalitySet set;
        for (const auto& [m, _] : modalities) set.insert(m);
        return set;
    }
};

enum class Split { train, test };

inline std::string split_name(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + std::string(s) + "'");
}

struct DatasetManifest {
    fs::path root;
    Split split = Split::train;
    ModalitySet modalities{Modality::visible};
    std::vector<std::string> ids;

    std::size_t count() const { return ids.size(); }

    fs::path modality_path(Modality m, const std::string& id) const {
        return root / modality_dir(m) / (id + ".png");
    }
    fs::path scribble_path(const std::string& id) const { return root / "scribble" / (id + ".png"); }
    fs::path gt_path(const std::string& id) const { return root / "gt" / (id + ".png"); }
};

inline nlohmann::json to_json(const DatasetManifest& m) {
    return {{"root", m.root.string()},
            {"split", split_name(m.split)},
            {"modalities", m.modalities.to_string()},
            {"ids", m.ids},
            {"count", m.count()}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        m.root = j.at("root").get<std::string>();
        m.split = parse_split(j.at("split").get<std::string>());
        m.modalities = ModalitySet::parse(j.at("modalities").get<std::string>());
        m.ids = j.at("ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(std::string("malformed manifest: ") + e.what());
    }
    if (j.contains("count") && j["count"].get<std::size_t>() != m.ids.size()) {
        throw ManifestError("manifest count does not match the number of ids");
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& file) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write manifest " + file.string());
    out << to_json(m).dump(2) << '\n';
}

/// Reads `file`, or `file/manifest.json` when a directory is given. A relative
/// root is resolved against the manifest's directory.
inline DatasetManifest load_manifest(fs::path file) {
    if (fs::is_directory(file)) file /= "manifest.json";
    std::ifstream in(file);
    if (!in) throw IoError("cannot read manifest " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("manifest " + file.string() + " is not valid JSON: " + e.what());
    }
    DatasetManifest m = manifest_from_json(j);
    if (m.root.is_relative()) m.root = file.parent_path() / m.root;
    return m;
}

inline ImageF to_unit_float(const Mask8& src) {
    ImageF out(src.height(), src.width(), src.channels());
    for (std::size_t i = 0; i < src.size(); ++i) out.data()[i] = src.data()[i] / 255.0f;
    return out;
}

inline Mask8 to_byte_image(const ImageF& src) {
    Mask8 out(src.height(), src.width(), src.channels());
    for (std::size_t i = 0; i < src.size(); ++i) {
        out.data()[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(src.data()[i], 0.0f, 1.0f)));
    }
    return out;
}

inline ImageF replicate_to_rgb(const ImageF& gray) {
    if (gray.channels() == 3) return gray;
    ImageF out(gray.height(), gray.width(), 3);
    for (int y = 0; y < gray.height(); ++y)
        for (int x = 0; x < gray.width(); ++x)
            for (int c = 0; c < 3; ++c) out(y, x, c) = gray(y, x, 0);
    return out;
}

/// Loads one sample: colour rasters kept as 3 channels, single-channel
/// depth/thermal replicated, intensities scaled to [0,1].
inline Sample load_sample(const DatasetManifest& manifest, const std::string& id) {
    if (std::find(manifest.ids.begin(), manifest.ids.end(), id) == manifest.ids.end()) {
        throw PreconditionError("id '" + id + "' is not listed in the manifest");
    }
    Sample s;
    s.id = id;
    auto check_alignment = [&](int h, int w, const std::string& what) {
        if (s.source_height == 0 && s.source_width == 0) {
            s.source_height = h;
            s.source_width = w;
        } else if (h != s.source_height || w != s.source_width) {
            throw AlignmentError(what + " of '" + id + "' is " + geometry_string(h, w) + ", expected " +
                                 geometry_string(s.source_height, s.source_width));
        }
    };
    for (Modality m : manifest.modalities.members()) {
        const fs::path p = manifest.modality_path(m, id);
        if (!fs::exists(p)) {
            throw MissingModality("sample '" + id + "' has no " + modality_dir(m) + " file " + p.string());
        }
        ImageF img = io::png_channels(p) == 3 ? to_unit_float(io::read_rgb8(p))
                                              : replicate_to_rgb(to_unit_float(io::read_gray8(p)));
        check_alignment(img.height(), img.width(), modality_dir(m));
        s.modalities.emplace(m, std::move(img));
    }
    const fs::path scribble = manifest.scribble_path(id);
    if (fs::exists(scribble)) {
        Mask8 raw = io::read_gray8(scribble);
        check_alignment(raw.height(), raw.width(), "scribble");
        s.scribble = ScribbleMap(std::move(raw));
    } else if (manifest.split == Split::train) {
        throw MissingModality("training sample '" + id + "' has no scribble file " + scribble.string());
    }
    const fs::path gt = manifest.gt_path(id);
    if (fs::exists(gt)) {
        Mask8 raw = io::read_gray8(gt);
        check_alignment(raw.height(), raw.width(), "gt");
        for (auto& v : raw.storage()) v = v > 127 ? 1 : 0;
        s.gt = std::move(raw);
    }
    s.guide = s.modalities.at(Modality::visible);
    return s;
}

struct PreprocessConfig {
    int side = 1024;
    int patch = 16;
    std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> stddev{0.5f, 0.5f, 0.5f};

    void validate() const {
        static constexpr std::array<int, 5> kSides{64, 128, 256, 512, 1024};
        if (patch < 1) throw ConfigError("patch size must be positive");
        if (std::find(kSides.begin(), kSides.end(), side) == kSides.end()) {
            throw ConfigError("image side " + std::to_string(side) + " is not one of 64, 128, 256, 512, 1024");
        }
        if (side % patch != 0) {
            throw ConfigError("image side " + std::to_string(side) + " is not divisible by patch size " +
                              std::to_string(patch));
        }
        for (float s : stddev)
            if (!(s > 0.0f)) throw ConfigError("normalisation std must be positive");
    }
};

/// Resizes to side x side (bilinear for images, nearest for labels) and
/// normalises every modality channel-wise.
inline Sample preprocess(const Sample& sample, const PreprocessConfig& cfg) {
    cfg.validate();
    if (sample.normalized) throw PreconditionError("sample '" + sample.id + "' is already preprocessed");
    Sample out;
    out.id = sample.id;
    out.source_height = sample.source_height;
    out.source_width = sample.source_width;
    for (const auto& [m, img] : sample.modalities) {
        for (float v : img.data()) {
            if (!std::isfinite(v)) {
                throw PreconditionError("sample '" + sample.id + "' has a non-finite " + modality_dir(m) + " pixel");
            }
        }
        if (img.channels() != 3) throw ShapeError(modality_dir(m) + " raster must have 3 channels");
        ImageF resized = resize_bilinear(img, cfg.side, cfg.side);
        if (m == Modality::visible) out.guide = resized;
        for (int y = 0; y < cfg.side; ++y)
            for (int x = 0; x < cfg.side; ++x)
                for (int c = 0; c < 3; ++c) resized(y, x, c) = (resized(y, x, c) - cfg.mean[c]) / cfg.stddev[c];
        out.modalities.emplace(m, std::move(resized));
    }
    if (!out.modalities.contains(Modality::visible)) {
        throw MissingModality("sample '" + sample.id + "' has no visible image");
    }
    if (!sample.scribble.empty()) {
        out.scribble = ScribbleMap(resize_nearest(sample.scribble.raster(), cfg.side, cfg.side));
    }
    if (sample.gt) out.gt = resize_nearest(*sample.gt, cfg.side, cfg.side);
    out.normalized = true;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
    int n = 8;
    int side = 64;
    ModalitySet modalities{Modality::visible, Modality::depth, Modality::thermal};
    std::uint64_t seed = 7;
    Split split = Split::train;
};

namespace detail {

struct Shape {
    int kind;  // 0 ellipse, 1 rectangle
    double cy, cx, ry, rx, angle;
    std::array<double, 3> color;
    double heat;

    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (c * dx + s * dy) / rx;
        const double v = (-s * dx + c * dy) / ry;
        return kind == 0 ? (u * u + v * v <= 1.0) : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
    }
};

/// Two-pass chamfer distance (unit / sqrt(2) steps) to the nearest set pixel.
inline std::vector<double> chamfer_distance(const Mask8& mask) {
    const int h = mask.height(), w = mask.width();
    const double big = 1e9, diag = std::numbers::sqrt2;
    std::vector<double> d(static_cast<std::size_t>(h) * w);
    auto at = [&](int y, int x) -> double& { return d[static_cast<std::size_t>(y) * w + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) at(y, x) = mask(y, x) ? 0.0 : big;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = at(y, x);
            if (x > 0) v = std::min(v, at(y, x - 1) + 1.0);
            if (y > 0) {
                v = std::min(v, at(y - 1, x) + 1.0);
                if (x > 0) v = std::min(v, at(y - 1, x - 1) + diag);
                if (x + 1 < w) v = std::min(v, at(y - 1, x + 1) + diag);
            }
            at(y, x) = v;
        }
    for (int y = h - 1; y >= 0; --y)
        for (int x = w - 1; x >= 0; --x) {
            double v = at(y, x);
            if (x + 1 < w) v = std::min(v, at(y, x + 1) + 1.0);
            if (y + 1 < h) {
                v = std::min(v, at(y + 1, x) + 1.0);
                if (x + 1 < w) v = std::min(v, at(y + 1, x + 1) + diag);
                if (x > 0) v = std::min(v, at(y + 1, x - 1) + diag);
            }
            at(y, x) = v;
        }
    return d;
}

inline ImageF box_blur(const ImageF& src, int radius) {
    ImageF tmp(src.height(), src.width(), src.channels());
    ImageF out(src.height(), src.width(), src.channels());
    const int h = src.height(), w = src.width();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < src.channels(); ++c) {
                double acc = 0;
                int n = 0;
                for (int k = std::max(0, x - radius); k <= std::min(w - 1, x + radius); ++k, ++n) acc += src(y, k, c);
                tmp(y, x, c) = static_cast<float>(acc / n);
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < src.channels(); ++c) {
                double acc = 0;
                int n = 0;
                for (int k = std::max(0, y - radius); k <= std::min(h - 1, y + radius); ++k, ++n) acc += tmp(k, x, c);
                out(y, x, c) = static_cast<float>(acc / n);
            }
    return out;
}

/// Random-walk stroke with a 3x3 brush. Brush pixels are only stamped where
/// `allowed` holds, so the stroke never leaves its region.
template <typename Allowed, typename Centre>
void draw_stroke(ScribbleMap& scribble, Rng& rng, int start_y, int start_x, int length, ScribbleCode code,
                 Allowed allowed, Centre centre_ok) {
    double y = start_y, x = start_x;
    double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const int h = scribble.height(), w = scribble.width();
    for (int step = 0; step < length; ++step) {
        const int cy = static_cast<int>(std::lround(y)), cx = static_cast<int>(std::lround(x));
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int py = cy + dy, px = cx + dx;
                if (py < 0 || px < 0 || py >= h || px >= w) continue;
                if (allowed(py, px)) scribble.set(py, px, code);
            }
        bool moved = false;
        for (int attempt = 0; attempt < 8 && !moved; ++attempt) {
            theta += 0.35 * rng.normal();
            const double ny = y + std::sin(theta), nx = x + std::cos(theta);
            const int iy = static_cast<int>(std::lround(ny)), ix = static_cast<int>(std::lround(nx));
            if (iy >= 0 && ix >= 0 && iy < h && ix < w && centre_ok(iy, ix)) {
                y = ny;
                x = nx;
                moved = true;
            } else {
                theta += std::numbers::pi * rng.uniform(0.5, 1.5);
            }
        }
        if (!moved) break;
    }
}

struct SynthSample {
    ImageF rgb, depth, thermal;
    Mask8 gt;
    ScribbleMap scribble;
};

inline SynthSample synth_one(int side, std::uint64_t seed) {
    Rng rng(seed);
    SynthSample s;
    const double S = side;

    std::array<double, 3> bg;
    for (auto& c : bg) c = rng.uniform(0.15, 0.85);
    const double f1 = rng.uniform(2.0, 6.0), f2 = rng.uniform(2.0, 6.0);
    const double p1 = rng.uniform(0.0, 6.3), p2 = rng.uniform(0.0, 6.3);

    const int n_shapes = rng.integer(1, 3);
    std::vector<Shape> shapes;
    for (int k = 0; k < n_shapes; ++k) {
        Shape sh;
        sh.kind = rng.integer(0, 1);
        sh.cy = rng.uniform(0.25, 0.75) * S;
        sh.cx = rng.uniform(0.25, 0.75) * S;
        sh.ry = rng.uniform(0.10, 0.22) * S;
        sh.rx = rng.uniform(0.10, 0.22) * S;
        sh.angle = rng.uniform(0.0, std::numbers::pi);
        double dist = 0.0;
        for (int attempt = 0; attempt < 32 && dist < 0.45; ++attempt) {
            for (auto& c : sh.color) c = rng.uniform(0.0, 1.0);
            dist = std::sqrt((sh.color[0] - bg[0]) * (sh.color[0] - bg[0]) +
                             (sh.color[1] - bg[1]) * (sh.color[1] - bg[1]) +
                             (sh.color[2] - bg[2]) * (sh.color[2] - bg[2]));
        }
        sh.heat = rng.uniform(0.65, 1.0);
        shapes.push_back(sh);
    }

    s.rgb = ImageF(side, side, 3);
    s.gt = Mask8(side, side, 1, 0);
    ImageF heat(side, side, 1, 0.2f);
    std::vector<Mask8> shape_masks(shapes.size(), Mask8(side, side, 1, 0));
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double tex = 0.07 * std::sin(2 * std::numbers::pi * f1 * x / S + p1) *
                               std::cos(2 * std::numbers::pi * f2 * y / S + p2);
            std::array<double, 3> px{bg[0] + tex, bg[1] + tex, bg[2] + tex};
            for (std::size_t k = 0; k < shapes.size(); ++k) {
                if (shapes[k].contains(y + 0.5, x + 0.5)) {
                    px = shapes[k].color;
                    s.gt(y, x) = 1;
                    shape_masks[k](y, x) = 1;
                    heat(y, x) = static_cast<float>(shapes[k].heat);
                }
            }
            for (int c = 0; c < 3; ++c) {
                s.rgb(y, x, c) = static_cast<float>(std::clamp(px[c] + 0.03 * rng.normal(), 0.0, 1.0));
            }
        }

    const std::vector<double> dist = chamfer_distance(s.gt);
    const double max_d = std::max(1.0, *std::max_element(dist.begin(), dist.end()));
    s.depth = ImageF(side, side, 1);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double v = 1.0 - dist[static_cast<std::size_t>(y) * side + x] / max_d;
            s.depth(y, x) = static_cast<float>(std::clamp(v + 0.02 * rng.normal(), 0.0, 1.0));
        }

    s.thermal = box_blur(box_blur(heat, 2), 2);
    for (auto& v : s.thermal.storage()) v = static_cast<float>(std::clamp(v + 0.03 * rng.normal(), 0.0, 1.0));

    // Strokes: one per shape inside it, plus background strokes well away from gt.
    s.scribble = ScribbleMap(side, side);
    const int length = std::max(8, side / 3);
    for (std::size_t k = 0; k < shapes.size(); ++k) {
        const Mask8& mask = shape_masks[k];
        auto inside = [&](int y, int x) { return mask(y, x) != 0; };
        auto interior = [&](int y, int x) {
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int py = y + dy, px = x + dx;
                    if (py < 0 || px < 0 || py >= side || px >= side || !mask(py, px)) return false;
                }
            return true;
        };
        std::vector<std::pair<int, int>> starts;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                if (interior(y, x)) starts.emplace_back(y, x);
        if (starts.empty()) {
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x)
                    if (inside(y, x)) starts.emplace_back(y, x);
        }
        if (starts.empty()) continue;
        const auto [sy, sx] = starts[rng.index(starts.size())];
        draw_stroke(s.scribble, rng, sy, sx, length, ScribbleCode::foreground, inside, interior);
    }
    const double margin = std::max(3.0, side / 16.0);
    auto far_bg = [&](int y, int x) { return dist[static_cast<std::size_t>(y) * side + x] >= margin; };
    auto is_bg = [&](int y, int x) { return s.gt(y, x) == 0; };
    std::vector<std::pair<int, int>> bg_starts;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            if (far_bg(y, x)) bg_starts.emplace_back(y, x);
    if (bg_starts.empty()) {
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                if (is_bg(y, x)) bg_starts.emplace_back(y, x);
    }
    for (int stroke = 0; stroke < 2 && !bg_starts.empty(); ++stroke) {
        const auto [sy, sx] = bg_starts[rng.index(bg_starts.size())];
        draw_stroke(s.scribble, rng, sy, sx, length, ScribbleCode::background, is_bg, far_bg);
    }
    return s;
}

}  // namespace detail

inline std::string synth_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%04d", index);
    return buf;
}

/// Writes a deterministic synthetic dataset under `root` and returns its
/// manifest (also saved as root/manifest.json).
inline DatasetManifest synth_dataset(const fs::path& root, const SynthConfig& cfg) {
    if (cfg.n < 1) throw PreconditionError("synthetic dataset needs n >= 1, got " + std::to_string(cfg.n));
    if (cfg.side < 16) throw PreconditionError("synthetic side must be at least 16");
    cfg.modalities.validate();
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root)) throw IoError("cannot create dataset root " + root.string());
    for (const char* sub : {"rgb", "depth", "thermal", "scribble", "gt"}) {
        if (std::string(sub) == "depth" && !cfg.modalities.contains(Modality::depth)) continue;
        if (std::string(sub) == "thermal" && !cfg.modalities.contains(Modality::thermal)) continue;
        fs::create_directories(root / sub, ec);
        if (ec) throw IoError("cannot create " + (root / sub).string() + ": " + ec.message());
    }

    DatasetManifest manifest;
    manifest.root = root;
    manifest.split = cfg.split;
    manifest.modalities = cfg.modalities;
    for (int i = 0; i < cfg.n; ++i) {
        const std::string id = synth_id(i);
        const detail::SynthSample s = detail::synth_one(cfg.side, derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        io::write_png8(manifest.modality_path(Modality::visible, id), to_byte_image(s.rgb));
        if (cfg.modalities.contains(Modality::depth))
            io::write_png8(manifest.modality_path(Modality::depth, id), to_byte_image(s.depth));
        if (cfg.modalities.contains(Modality::thermal))
            io::write_png8(manifest.modality_path(Modality::thermal, id), to_byte_image(s.thermal));
        io::write_png8(manifest.scribble_path(id), s.scribble.raster());
        Mask8 gt = s.gt;
        for (auto& v : gt.storage()) v = v ? 255 : 0;
        io::write_png8(manifest.gt_path(id), gt);
        manifest.ids.push_back(id);
    }
    DatasetManifest on_disk = manifest;
    on_disk.root = ".";
    save_manifest(on_disk, root / "manifest.json");
    return manifest;
}

}  // namespace ssfam
