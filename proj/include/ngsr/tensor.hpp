#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ngsr/parallel.hpp"

namespace ngsr {

using Shape = std::vector<int64_t>;

/// Raised for shape, divisibility and argument contract violations.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
}

/// Dense row-major float32 tensor. Extents are always positive.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
    }

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    size_t rank() const noexcept { return shape_.size(); }
    int64_t dim(size_t i) const { return shape_.at(i); }
    int64_t numel() const noexcept { return static_cast<int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    float* ptr() noexcept { return data_.data(); }
    const float* ptr() const noexcept { return data_.data(); }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    float& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    float at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    float& at(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    float at(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    /// Bitwise equality of shape and payload.
    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ &&
               std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
    }

private:
    void check_extents() const {
        for (auto e : shape_)
            if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<float> data_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    float m = 0.0f;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline bool all_finite(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Kernels

struct Conv2dOptions {
    int64_t stride = 1;
    int64_t pad = 0;
    int64_t groups = 1;
};

/// Grouped 2-D cross-correlation with zero padding.
/// input [C_in,H,W], weight [C_out, C_in/groups, k, k], bias [C_out] or null.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, Conv2dOptions opt = {}) {
    if (input.rank() != 3 || weight.rank() != 4)
        throw ShapeError("conv2d expects input [C,H,W] and weight [Co,Ci/g,k,k], got " + shape_str(input.shape()) +
                         " and " + shape_str(weight.shape()));
    const int64_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int64_t cout = weight.dim(0), cpg = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    const int64_t g = opt.groups;
    if (g < 1 || cin % g != 0 || cout % g != 0)
        throw ShapeError("conv2d groups " + std::to_string(g) + " must divide C_in " + std::to_string(cin) +
                         " and C_out " + std::to_string(cout));
    if (cpg != cin / g)
        throw ShapeError("conv2d weight expects " + std::to_string(cpg) + " channels per group, input gives " +
                         std::to_string(cin / g));
    if (kh != kw) throw ShapeError("conv2d expects square kernels");
    if (opt.stride < 1 || opt.pad < 0) throw ShapeError("conv2d stride must be >= 1 and pad >= 0");
    if (h + 2 * opt.pad < kh || w + 2 * opt.pad < kw)
        throw ShapeError("conv2d kernel larger than padded input");
    if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) throw ShapeError("conv2d bias must be [C_out]");

    const int64_t oh = (h + 2 * opt.pad - kh) / opt.stride + 1;
    const int64_t ow = (w + 2 * opt.pad - kw) / opt.stride + 1;
    const int64_t cout_pg = cout / g;
    Tensor out({cout, oh, ow});

    parallel_for(cout, [&](int64_t oc) {
        const int64_t grp = oc / cout_pg;
        // double accumulator keeps large fan-in outputs correctly rounded
        std::vector<double> acc(static_cast<size_t>(oh * ow), bias ? static_cast<double>((*bias)[oc]) : 0.0);
        double* dst = acc.data();
        for (int64_t ci = 0; ci < cpg; ++ci) {
            const float* src = input.ptr() + (grp * cpg + ci) * h * w;
            for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                    const float wv = weight[((oc * cpg + ci) * kh + ky) * kw + kx];
                    for (int64_t oy = 0; oy < oh; ++oy) {
                        const int64_t iy = oy * opt.stride - opt.pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        double* drow = dst + oy * ow;
                        const float* srow = src + iy * w;
                        for (int64_t ox = 0; ox < ow; ++ox) {
                            const int64_t ix = ox * opt.stride - opt.pad + kx;
                            if (ix < 0 || ix >= w) continue;
                            drow[ox] += static_cast<double>(wv) * srow[ix];
                        }
                    }
                }
            }
        }
        std::transform(acc.begin(), acc.end(), out.ptr() + oc * oh * ow, [](double v) { return static_cast<float>(v); });
    });
    return out;
}

/// Affine map over the last dimension: x [..., in] -> [..., out] with weight [out, in].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
    if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.dim(1))
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    if (bias && (bias->rank() != 1 || bias->dim(0) != weight.dim(0)))
        throw ShapeError("linear: bias must be [out]");
    const int64_t in = weight.dim(1), outf = weight.dim(0);
    const int64_t rows = x.numel() / in;
    // transpose once so the inner loop runs over contiguous outputs
    std::vector<float> wt(static_cast<size_t>(in * outf));
    for (int64_t o = 0; o < outf; ++o)
        for (int64_t i = 0; i < in; ++i) wt[static_cast<size_t>(i * outf + o)] = weight[o * in + i];
    Shape os = x.shape();
    os.back() = outf;
    Tensor out(os);
    parallel_for(rows, [&](int64_t r) {
        float* dst = out.ptr() + r * outf;
        const float* src = x.ptr() + r * in;
        for (int64_t o = 0; o < outf; ++o) dst[o] = bias ? (*bias)[o] : 0.0f;
        for (int64_t i = 0; i < in; ++i) {
            const float xv = src[i];
            const float* wrow = wt.data() + i * outf;
            for (int64_t o = 0; o < outf; ++o) dst[o] += xv * wrow[o];
        }
    });
    return out;
}

/// Numerically stable softmax over the last dimension (in place).
inline void softmax_inplace(std::span<float> row) {
    float m = row[0];
    for (float v : row) m = std::max(m, v);
    float sum = 0.0f;
    for (float& v : row) {
        v = std::exp(v - m);
        sum += v;
    }
    for (float& v : row) v /= sum;
}

inline Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("softmax on scalar");
    Tensor out = x;
    const int64_t n = x.shape().back();
    for (int64_t r = 0; r < x.numel() / n; ++r) softmax_inplace(out.data().subspan(static_cast<size_t>(r * n), static_cast<size_t>(n)));
    return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f) {
    const int64_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d)
        throw ShapeError("layer_norm affine size " + std::to_string(gamma.numel()) + " vs feature dim " +
                         std::to_string(d));
    Tensor out(x.shape());
    for (int64_t r = 0; r < x.numel() / d; ++r) {
        const float* src = x.ptr() + r * d;
        float* dst = out.ptr() + r * d;
        float mean = 0.0f;
        for (int64_t i = 0; i < d; ++i) mean += src[i];
        mean /= static_cast<float>(d);
        float var = 0.0f;
        for (int64_t i = 0; i < d; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= static_cast<float>(d);
        const float inv = 1.0f / std::sqrt(var + eps);
        for (int64_t i = 0; i < d; ++i) dst[i] = (src[i] - mean) * inv * gamma[i] + beta[i];
    }
    return out;
}

inline Tensor gelu(Tensor x) {
    for (float& v : x.data()) v = 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752f));
    return x;
}

inline Tensor leaky_relu(Tensor x, float slope = 0.01f) {
    for (float& v : x.data()) v = v >= 0.0f ? v : slope * v;
    return x;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

/// [C*s*s, H, W] -> [C, sH, sW]; out(c, s*i+di, s*j+dj) = in(c*s*s + di*s + dj, i, j).
inline Tensor pixel_shuffle(const Tensor& x, int64_t s) {
    if (x.rank() != 3 || s < 1 || x.dim(0) % (s * s) != 0)
        throw ShapeError("pixel_shuffle: channels of " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(s * s));
    const int64_t c = x.dim(0) / (s * s), h = x.dim(1), w = x.dim(2);
    Tensor out({c, h * s, w * s});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t di = 0; di < s; ++di)
            for (int64_t dj = 0; dj < s; ++dj)
                for (int64_t i = 0; i < h; ++i)
                    for (int64_t j = 0; j < w; ++j)
                        out.at(ch, i * s + di, j * s + dj) = x.at(ch * s * s + di * s + dj, i, j);
    return out;
}

inline Tensor pixel_unshuffle(const Tensor& x, int64_t s) {
    if (x.rank() != 3 || s < 1 || x.dim(1) % s != 0 || x.dim(2) % s != 0)
        throw ShapeError("pixel_unshuffle: extents of " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(s));
    const int64_t c = x.dim(0), h = x.dim(1) / s, w = x.dim(2) / s;
    Tensor out({c * s * s, h, w});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t di = 0; di < s; ++di)
            for (int64_t dj = 0; dj < s; ++dj)
                for (int64_t i = 0; i < h; ++i)
                    for (int64_t j = 0; j < w; ++j)
                        out.at(ch * s * s + di * s + dj, i, j) = x.at(ch, i * s + di, j * s + dj);
    return out;
}

enum class PoolMode { Max, Avg };

/// Non-overlapping k x k pooling over [C,H,W].
inline Tensor pool2d(const Tensor& x, int64_t k, PoolMode mode) {
    if (x.rank() != 3 || k < 1 || x.dim(1) % k != 0 || x.dim(2) % k != 0)
        throw ShapeError("pool2d: extents of " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
    const int64_t c = x.dim(0), h = x.dim(1) / k, w = x.dim(2) / k;
    Tensor out({c, h, w});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                float acc = mode == PoolMode::Max ? x.at(ch, i * k, j * k) : 0.0f;
                for (int64_t di = 0; di < k; ++di)
                    for (int64_t dj = 0; dj < k; ++dj) {
                        const float v = x.at(ch, i * k + di, j * k + dj);
                        acc = mode == PoolMode::Max ? std::max(acc, v) : acc + v;
                    }
                out.at(ch, i, j) = mode == PoolMode::Max ? acc : acc / static_cast<float>(k * k);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Layout conversions between token maps [h,w,D] and channel-planar [D,h,w].

inline Tensor hwc_to_chw(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("hwc_to_chw expects rank 3, got " + shape_str(x.shape()));
    const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    Tensor out({c, h, w});
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t ch = 0; ch < c; ++ch) out.at(ch, i, j) = x.at(i, j, ch);
    return out;
}

inline Tensor chw_to_hwc(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("chw_to_hwc expects rank 3, got " + shape_str(x.shape()));
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({h, w, c});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) out.at(i, j, ch) = x.at(ch, i, j);
    return out;
}

/// Concatenates [C_k, H, W] tensors along channels.
inline Tensor concat_channels(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    const int64_t h = parts[0].dim(1), w = parts[0].dim(2);
    int64_t c = 0;
    for (const auto& p : parts) {
        if (p.rank() != 3 || p.dim(1) != h || p.dim(2) != w)
            throw ShapeError("concat_channels extent mismatch at " + shape_str(p.shape()));
        c += p.dim(0);
    }
    std::vector<float> data;
    data.reserve(static_cast<size_t>(c * h * w));
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Tensor({c, h, w}, std::move(data));
}

}  // namespace ngsr
