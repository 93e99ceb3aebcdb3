#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>
#include <nlohmann/json.hpp>

#include "ngsr/tensor.hpp"

namespace ngsr {

/// Unreadable, unwritable or malformed image and stats files.
class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ColorTag { RGB, Y };

/// Planar image with values in [0, 1]: data[c * H * W + y * W + x].
struct ImageBuffer {
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 3;
    ColorTag color = ColorTag::RGB;
    std::vector<float> data;

    ImageBuffer() = default;
    ImageBuffer(int64_t h, int64_t w, int64_t c, ColorTag tag = ColorTag::RGB, float fill = 0.0f)
        : height(h), width(w), channels(c), color(tag) {
        if (h <= 0 || w <= 0) throw ShapeError("image extents must be positive");
        if (c != 1 && c != 3) throw ShapeError("images have 1 or 3 channels");
        data.assign(static_cast<size_t>(h * w * c), fill);
    }

    float& at(int64_t c, int64_t y, int64_t x) { return data[static_cast<size_t>((c * height + y) * width + x)]; }
    float at(int64_t c, int64_t y, int64_t x) const {
        return data[static_cast<size_t>((c * height + y) * width + x)];
    }

    void clamp01() {
        for (float& v : data) v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
    }

    Tensor to_tensor() const { return Tensor({channels, height, width}, data); }

    static ImageBuffer from_tensor(const Tensor& t, ColorTag tag = ColorTag::RGB) {
        if (t.rank() != 3) throw ShapeError("image tensor must be [C,H,W]");
        ImageBuffer img(t.dim(1), t.dim(2), t.dim(0), tag);
        std::copy(t.data().begin(), t.data().end(), img.data.begin());
        return img;
    }

    friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

/// Per-channel normalization statistics of the training LR images.
struct NormStats {
    std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
    std::array<float, 3> std{1.0f, 1.0f, 1.0f};

    static NormStats neutral() { return {}; }

    void validate() const {
        for (float s : std)
            if (!(s > 0.0f) || !std::isfinite(s)) throw ImageError("normalization std must be positive and finite");
        for (float m : mean)
            if (!std::isfinite(m)) throw ImageError("normalization mean must be finite");
    }

    nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}}; }

    static NormStats from_json(const nlohmann::json& j) {
        NormStats s;
        try {
            s.mean = j.at("mean").get<std::array<float, 3>>();
            s.std = j.at("std").get<std::array<float, 3>>();
        } catch (const nlohmann::json::exception& e) {
            throw ImageError(std::string("bad stats file: ") + e.what());
        }
        s.validate();
        return s;
    }

    static NormStats load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ImageError("cannot open stats file '" + path + "'");
        try {
            return from_json(nlohmann::json::parse(f));
        } catch (const nlohmann::json::parse_error& e) {
            throw ImageError("stats file '" + path + "' is not JSON: " + e.what());
        }
    }
};

/// (x - mean) / std per channel, as a [3, H, W] tensor.
inline Tensor normalize(const ImageBuffer& img, const NormStats& s) {
    if (img.channels != 3) throw ShapeError("normalize expects an RGB image");
    s.validate();
    Tensor t = img.to_tensor();
    const int64_t plane = img.height * img.width;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < plane; ++i) t[c * plane + i] = (t[c * plane + i] - s.mean[c]) / s.std[c];
    return t;
}

/// Inverse of normalize. Values are not clamped here.
inline ImageBuffer denormalize(const Tensor& t, const NormStats& s) {
    if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("denormalize expects [3,H,W], got " + shape_str(t.shape()));
    s.validate();
    ImageBuffer img = ImageBuffer::from_tensor(t);
    const int64_t plane = img.height * img.width;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < plane; ++i)
            img.data[static_cast<size_t>(c * plane + i)] = img.data[static_cast<size_t>(c * plane + i)] * s.std[c] + s.mean[c];
    return img;
}

inline uint8_t to_u8(float v) {
    if (std::isnan(v)) return 0;
    return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Reads any PNG as 8-bit RGB (gray is replicated, alpha dropped, 16-bit stripped).
inline ImageBuffer read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageError("cannot open image '" + path + "'");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw ImageError("'" + path + "' is not a PNG");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw ImageError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageError("libpng init failed");
    }
    std::vector<uint8_t> pixels;
    png_uint_32 w = 0, h = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("corrupt PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("unsupported PNG layout in '" + path + "'");
    }
    pixels.resize(static_cast<size_t>(w) * h * 3);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageBuffer img(h, w, 3);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(pixels[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f;
    return img;
}

/// Writes 8-bit RGB (or gray for one channel). Values are clamped and rounded.
inline void write_png(const ImageBuffer& img, const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageError("cannot write image '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw ImageError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageError("libpng init failed");
    }
    const int64_t c = img.channels, w = img.width, h = img.height;
    std::vector<uint8_t> pixels(static_cast<size_t>(w * h * c));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < c; ++ch) pixels[static_cast<size_t>((y * w + x) * c + ch)] = to_u8(img.at(ch, y, x));
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int64_t y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = pixels.data() + y * w * c;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageError("failed writing PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace ngsr
