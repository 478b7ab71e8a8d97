#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "ssfam/error.hpp"
#include "ssfam/raster.hpp"

namespace ssfam::io {

namespace fs = std::filesystem;

namespace detail {

struct PngImage {
    png_image image;
    PngImage() {
        std::memset(&image, 0, sizeof(image));
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

inline Raster<std::uint8_t> read_as(const fs::path& path, png_uint_32 format, int channels) {
    PngImage png;
    if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
        throw IoError("cannot decode PNG " + path.string() + ": " + png.image.message);
    }
    png.image.format = format;
    Raster<std::uint8_t> out(static_cast<int>(png.image.height), static_cast<int>(png.image.width), channels);
    if (!png_image_finish_read(&png.image, nullptr, out.data().data(), 0, nullptr)) {
        throw IoError("cannot decode PNG " + path.string() + ": " + png.image.message);
    }
    return out;
}

}  // namespace detail

/// Number of colour channels stored in the file (1 for grey, 3 for colour);
/// alpha is ignored.
inline int png_channels(const fs::path& path) {
    detail::PngImage png;
    if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
        throw IoError("cannot open PNG " + path.string() + ": " + png.image.message);
    }
    return (png.image.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
}

inline Raster<std::uint8_t> read_gray8(const fs::path& path) {
    return detail::read_as(path, PNG_FORMAT_GRAY, 1);
}

inline Raster<std::uint8_t> read_rgb8(const fs::path& path) {
    return detail::read_as(path, PNG_FORMAT_RGB, 3);
}

inline void write_png8(const fs::path& path, const Raster<std::uint8_t>& img) {
    if (img.channels() != 1 && img.channels() != 3) {
        throw ShapeError("PNG writer supports 1 or 3 channels, got " + std::to_string(img.channels()));
    }
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    detail::PngImage png;
    png.image.width = static_cast<png_uint_32>(img.width());
    png.image.height = static_cast<png_uint_32>(img.height());
    png.image.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png.image, path.c_str(), 0, img.data().data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + png.image.message);
    }
}

/// Probability raster to 8-bit grey, value = round(255 * p).
inline Raster<std::uint8_t> quantize_probability(const Raster<float>& prob) {
    Raster<std::uint8_t> out(prob.height(), prob.width(), 1);
    for (int y = 0; y < prob.height(); ++y)
        for (int x = 0; x < prob.width(); ++x) {
            const float p = std::clamp(prob(y, x), 0.0f, 1.0f);
            out(y, x) = static_cast<std::uint8_t>(std::lround(255.0 * p));
        }
    return out;
}

}  // namespace ssfam::io
