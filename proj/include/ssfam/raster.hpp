#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssfam/error.hpp"

namespace ssfam {

/// Row-major H x W x C image buffer, channels interleaved.
template <typename T>
class Raster {
public:
    using value_type = T;

    Raster() = default;
    Raster(int height, int width, int channels = 1, T fill = T{})
        : height_(height), width_(width), channels_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill) {
        if (height < 0 || width < 0 || channels < 1) {
            throw ShapeError("invalid raster shape " + std::to_string(height) + "x" +
                             std::to_string(width) + "x" + std::to_string(channels));
        }
    }

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const { return data_.empty(); }

    T& operator()(int y, int x, int c = 0) { return data_[offset(y, x, c)]; }
    const T& operator()(int y, int x, int c = 0) const { return data_[offset(y, x, c)]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    bool same_geometry(const Raster& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const Raster&, const Raster&) = default;

private:
    std::size_t offset(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 1;
    std::vector<T> data_;
};

using ImageF = Raster<float>;
using Mask8 = Raster<std::uint8_t>;

inline std::string geometry_string(int h, int w) {
    return std::to_string(h) + "x" + std::to_string(w);
}

/// Half-pixel-centred bilinear resampling (the OpenCV / align_corners=false
/// convention). Same-size resampling is an exact copy.
template <typename T>
Raster<T> resize_bilinear(const Raster<T>& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
    if (src.height() == out_h && src.width() == out_w) return src;
    Raster<T> dst(out_h, out_w, src.channels());
    const double sy = static_cast<double>(src.height()) / out_h;
    const double sx = static_cast<double>(src.width()) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), src.height() - 1);
        const int y1 = std::min(y0 + 1, src.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), src.width() - 1);
            const int x1 = std::min(x0 + 1, src.width() - 1);
            const double wx = fx - x0;
            for (int c = 0; c < src.channels(); ++c) {
                const double top = (1.0 - wx) * src(y0, x0, c) + wx * src(y0, x1, c);
                const double bot = (1.0 - wx) * src(y1, x0, c) + wx * src(y1, x1, c);
                dst(y, x, c) = static_cast<T>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return dst;
}

/// Nearest-neighbour resampling; output values are always copies of input
/// values, so label codes survive.
template <typename T>
Raster<T> resize_nearest(const Raster<T>& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
    if (src.height() == out_h && src.width() == out_w) return src;
    Raster<T> dst(out_h, out_w, src.channels());
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(static_cast<int>((y + 0.5) * src.height() / out_h), src.height() - 1);
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(static_cast<int>((x + 0.5) * src.width() / out_w), src.width() - 1);
            for (int c = 0; c < src.channels(); ++c) dst(y, x, c) = src(sy, sx, c);
        }
    }
    return dst;
}

}  // namespace ssfam
