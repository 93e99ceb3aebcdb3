#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ngsr/image.hpp"
#include "ngsr/tensor.hpp"

namespace ngsr {

// ---------------------------------------------------------------------------
// MATLAB-style bicubic resampling

namespace detail {

inline double cubic(double x) {
    const double a = std::fabs(x), a2 = a * a, a3 = a2 * a;
    if (a <= 1.0) return 1.5 * a3 - 2.5 * a2 + 1.0;
    if (a <= 2.0) return -0.5 * a3 + 2.5 * a2 - 4.0 * a + 2.0;
    return 0.0;
}

/// Sparse resampling weights along one axis.
struct Contributions {
    int64_t taps = 0;
    std::vector<int64_t> index;  // out_len * taps, 0-based, already mirrored
    std::vector<double> weight;  // out_len * taps, rows sum to 1
};

inline Contributions contributions(int64_t in_len, int64_t out_len, double scale) {
    const bool shrink = scale < 1.0;
    const double width = shrink ? 4.0 / scale : 4.0;
    Contributions c;
    c.taps = static_cast<int64_t>(std::ceil(width)) + 2;
    c.index.resize(static_cast<size_t>(out_len * c.taps));
    c.weight.resize(static_cast<size_t>(out_len * c.taps));
    for (int64_t o = 0; o < out_len; ++o) {
        const double x = static_cast<double>(o + 1);
        const double u = x / scale + 0.5 * (1.0 - 1.0 / scale);
        const double left = std::floor(u - width / 2.0);
        double sum = 0.0;
        for (int64_t t = 0; t < c.taps; ++t) {
            const double idx = left + static_cast<double>(t);  // 1-based
            const double dist = u - idx;
            const double wv = shrink ? scale * cubic(scale * dist) : cubic(dist);
            c.weight[static_cast<size_t>(o * c.taps + t)] = wv;
            sum += wv;
            // symmetric boundary: 1..n, n..1, repeating
            const int64_t period = 2 * in_len;
            int64_t k = (static_cast<int64_t>(idx) - 1) % period;
            if (k < 0) k += period;
            c.index[static_cast<size_t>(o * c.taps + t)] = k < in_len ? k : period - 1 - k;
        }
        for (int64_t t = 0; t < c.taps; ++t) c.weight[static_cast<size_t>(o * c.taps + t)] /= sum;
    }
    return c;
}

}  // namespace detail

/// Resizes to out_h x out_w with the MATLAB bicubic kernel (a = -0.5),
/// antialiased when shrinking. Rows are resampled first, then columns.
/// `scale_h`/`scale_w` are the nominal factors used for kernel geometry.
inline ImageBuffer bicubic_resize_to(const ImageBuffer& img, int64_t out_h, int64_t out_w, double scale_h,
                                     double scale_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: target extent must be positive");
    if (!(scale_h > 0.0) || !(scale_w > 0.0)) throw ShapeError("bicubic_resize: scale must be positive");
    const int64_t ch = img.channels, h = img.height, w = img.width;
    const auto rows = detail::contributions(h, out_h, scale_h);
    const auto cols = detail::contributions(w, out_w, scale_w);
    ImageBuffer out(out_h, out_w, ch, img.color);
    std::vector<double> tmp(static_cast<size_t>(out_h * w));
    for (int64_t c = 0; c < ch; ++c) {
        for (int64_t o = 0; o < out_h; ++o)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int64_t t = 0; t < rows.taps; ++t)
                    acc += rows.weight[static_cast<size_t>(o * rows.taps + t)] *
                           static_cast<double>(img.at(c, rows.index[static_cast<size_t>(o * rows.taps + t)], x));
                tmp[static_cast<size_t>(o * w + x)] = acc;
            }
        for (int64_t y = 0; y < out_h; ++y)
            for (int64_t o = 0; o < out_w; ++o) {
                double acc = 0.0;
                for (int64_t t = 0; t < cols.taps; ++t)
                    acc += cols.weight[static_cast<size_t>(o * cols.taps + t)] *
                           tmp[static_cast<size_t>(y * w + cols.index[static_cast<size_t>(o * cols.taps + t)])];
                out.at(c, y, o) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
    }
    return out;
}

/// Resizes by `scale`; the output extent is ceil(extent * scale).
inline ImageBuffer bicubic_resize(const ImageBuffer& img, double scale) {
    if (!(scale > 0.0)) throw ShapeError("bicubic_resize: scale must be positive");
    // guard against 64 * (1/4) landing a hair above 16
    auto extent = [scale](int64_t n) {
        const double v = static_cast<double>(n) * scale;
        const double r = std::round(v);
        return static_cast<int64_t>(std::fabs(v - r) < 1e-9 ? r : std::ceil(v));
    };
    return bicubic_resize_to(img, extent(img.height), extent(img.width), scale, scale);
}

// ---------------------------------------------------------------------------
// Color and quality metrics

/// Studio-swing BT.601 luma, stored as Y255 / 255.
inline ImageBuffer rgb_to_y(const ImageBuffer& img) {
    if (img.channels != 3) throw ShapeError("rgb_to_y expects an RGB image");
    ImageBuffer y(img.height, img.width, 1, ColorTag::Y);
    for (int64_t i = 0; i < img.height; ++i)
        for (int64_t j = 0; j < img.width; ++j) {
            const double v = 65.481 * img.at(0, i, j) + 128.553 * img.at(1, i, j) + 24.966 * img.at(2, i, j) + 16.0;
            y.at(0, i, j) = static_cast<float>(v / 255.0);
        }
    return y;
}

namespace detail {

/// Y plane on the 8-bit scale, rounded half away from zero, border cropped.
inline std::vector<double> quantized_luma(const ImageBuffer& img, int64_t crop, int64_t& h, int64_t& w) {
    const ImageBuffer y = img.channels == 3 ? rgb_to_y(img) : img;
    h = y.height - 2 * crop;
    w = y.width - 2 * crop;
    std::vector<double> out(static_cast<size_t>(std::max<int64_t>(h, 0) * std::max<int64_t>(w, 0)));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            out[static_cast<size_t>(i * w + j)] = std::round(static_cast<double>(y.at(0, i + crop, j + crop)) * 255.0);
    return out;
}

inline void check_pair(const ImageBuffer& a, const ImageBuffer& b, int64_t crop) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw ShapeError("metric inputs differ in extent: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
    if (crop < 0 || 2 * crop >= a.height || 2 * crop >= a.width)
        throw ShapeError("crop " + std::to_string(crop) + " leaves no pixels");
}

}  // namespace detail

/// Y-channel PSNR in dB; +infinity for identical inputs.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b, int64_t crop) {
    detail::check_pair(a, b, crop);
    int64_t h, w;
    const auto ya = detail::quantized_luma(a, crop, h, w);
    const auto yb = detail::quantized_luma(b, crop, h, w);
    double se = 0.0;
    for (size_t i = 0; i < ya.size(); ++i) se += (ya[i] - yb[i]) * (ya[i] - yb[i]);
    const double mse = se / static_cast<double>(ya.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int64_t size = 11, double sigma = 1.5) {
    std::vector<double> g(static_cast<size_t>(size));
    double sum = 0.0;
    for (int64_t i = 0; i < size; ++i) {
        const double x = static_cast<double>(i - size / 2);
        g[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
        sum += g[static_cast<size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

/// Separable 'valid' filtering of an h x w plane with the window above.
inline std::vector<double> filter_valid(const std::vector<double>& x, int64_t h, int64_t w,
                                        const std::vector<double>& g) {
    const int64_t k = static_cast<int64_t>(g.size()), oh = h - k + 1, ow = w - k + 1;
    std::vector<double> tmp(static_cast<size_t>(oh * w)), out(static_cast<size_t>(oh * ow));
    for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t) acc += g[static_cast<size_t>(t)] * x[static_cast<size_t>((i + t) * w + j)];
            tmp[static_cast<size_t>(i * w + j)] = acc;
        }
    for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t) acc += g[static_cast<size_t>(t)] * tmp[static_cast<size_t>(i * w + j + t)];
            out[static_cast<size_t>(i * ow + j)] = acc;
        }
    return out;
}

}  // namespace detail

/// Y-channel SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// L = 255, averaged over valid window positions.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b, int64_t crop) {
    detail::check_pair(a, b, crop);
    int64_t h, w;
    const auto x = detail::quantized_luma(a, crop, h, w);
    const auto y = detail::quantized_luma(b, crop, h, w);
    if (h < 11 || w < 11) throw ShapeError("SSIM needs at least 11x11 pixels after cropping");
    const double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
    const auto g = detail::gaussian_window();
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
    const auto sxx = detail::filter_valid(xx, h, w, g), syy = detail::filter_valid(yy, h, w, g);
    const auto sxy = detail::filter_valid(xy, h, w, g);
    double total = 0.0;
    for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

/// Mean absolute difference.
inline double l1_loss(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("l1_loss shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return s / static_cast<double>(a.numel());
}

}  // namespace ngsr
