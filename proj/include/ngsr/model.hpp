#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ngsr/config.hpp"
#include "ngsr/image.hpp"
#include "ngsr/nstb.hpp"
#include "ngsr/tensor.hpp"
#include "ngsr/weights.hpp"

namespace ngsr {

/// 2 x 2 max pooling of a token map [h, w, D].
inline Tensor maxpool2_tokens(const Tensor& x) { return chw_to_hwc(pool2d(hwc_to_chw(x), 2, PoolMode::Max)); }

/// Concatenation along the last axis of token maps with equal extents.
inline Tensor concat_tokens(std::span<const Tensor> parts) {
    std::vector<Tensor> planar;
    planar.reserve(parts.size());
    for (const auto& p : parts) planar.push_back(hwc_to_chw(p));
    return chw_to_hwc(concat_channels(planar));
}

/// 2 x 2 neighborhoods stacked to 4D channels, layer-normalized, then
/// projected to D without bias. Neighborhood order: (0,0), (1,0), (0,1), (1,1).
inline Tensor patch_merging(const Tensor& x, const Tensor& norm_w, const Tensor& norm_b, const Tensor& reduction) {
    if (x.rank() != 3 || x.dim(0) % 2 || x.dim(1) % 2)
        throw ShapeError("patch_merging needs even extents, got " + shape_str(x.shape()));
    const int64_t h = x.dim(0) / 2, w = x.dim(1) / 2, d = x.dim(2);
    Tensor stacked({h, w, 4 * d});
    constexpr int64_t offs[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t q = 0; q < 4; ++q) {
                const float* src = x.ptr() + ((2 * i + offs[q][0]) * x.dim(1) + 2 * j + offs[q][1]) * d;
                std::copy(src, src + d, stacked.ptr() + (i * w + j) * 4 * d + q * d);
            }
    return linear(layer_norm(stacked, norm_w, norm_b), reduction, nullptr);
}

/// Max-pools every earlier feature down to the resolution of `current`,
/// concatenates [priors..., current] and projects back to D.
inline Tensor pooling_cascade(const Tensor& current, std::span<const Tensor> priors, const Tensor& weight,
                              const Tensor& bias) {
    if (priors.empty()) return current;
    std::vector<Tensor> parts;
    for (Tensor p : priors) {
        while (p.dim(0) > current.dim(0)) p = maxpool2_tokens(p);
        if (p.dim(0) != current.dim(0) || p.dim(1) != current.dim(1))
            throw ShapeError("cascade feature " + shape_str(p.shape()) + " cannot be pooled to " +
                             shape_str(current.shape()));
        parts.push_back(std::move(p));
    }
    parts.push_back(current);
    return linear(concat_tokens(parts), weight, &bias);
}

struct ScdpParams {
    Tensor dw_w, dw_b, pw_w, pw_b, norm_w, norm_b;
};

/// Multi-scale bottleneck. Stage i (0-based) output gets the shallow feature
/// max-pooled i times (through LeakyReLU) added, is pixel-shuffled by 2^i to
/// full resolution, and the concatenation passes a depth-wise 3x3 conv, GELU,
/// point-wise projection and LayerNorm.
inline Tensor scdp_bottleneck(const Tensor& z_s, const std::array<Tensor, 3>& z_enc, const ScdpParams& p) {
    if (z_s.dim(2) % 16) throw ShapeError("SCDP needs D divisible by 16");
    std::vector<Tensor> parts;
    Tensor pooled = z_s;
    for (size_t i = 0; i < 3; ++i) {
        if (i > 0) pooled = maxpool2_tokens(pooled);
        if (pooled.shape() != z_enc[i].shape())
            throw ShapeError("SCDP stage " + std::to_string(i + 1) + " feature " + shape_str(z_enc[i].shape()) +
                             " does not match pooled shallow feature " + shape_str(pooled.shape()));
        parts.push_back(pixel_shuffle(hwc_to_chw(add(z_enc[i], leaky_relu(pooled))), int64_t{1} << i));
    }
    const Tensor cat = concat_channels(parts);
    const Tensor dw = gelu(conv2d(cat, p.dw_w, &p.dw_b, {.stride = 1, .pad = 1, .groups = cat.dim(0)}));
    return layer_norm(linear(chw_to_hwc(dw), p.pw_w, &p.pw_b), p.norm_w, p.norm_b);
}

/// 3x3 conv D -> 3r^2, pixel shuffle by r, 3x3 conv 3 -> 3. Returns [3, rH, rW].
inline Tensor reconstruct(const Tensor& z, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2,
                          int64_t r) {
    if (r < 1 || w1.dim(0) != 3 * r * r) throw ShapeError("reconstruction weights do not match scale " + std::to_string(r));
    const Tensor up = pixel_shuffle(conv2d(hwc_to_chw(z), w1, &b1, {.stride = 1, .pad = 1}), r);
    return conv2d(up, w2, &b2, {.stride = 1, .pad = 1});
}

/// Reflect-pads a [C, H, W] tensor at the bottom and right to the given extents.
inline Tensor reflect_pad_to(const Tensor& x, int64_t th, int64_t tw) {
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (th == h && tw == w) return x;
    Tensor out({c, th, tw});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < th; ++i)
            for (int64_t j = 0; j < tw; ++j) out.at(ch, i, j) = x.at(ch, reflect_index(i, h), reflect_index(j, w));
    return out;
}

/// Intermediate features of one forward pass, token maps [h, w, D].
struct ForwardTrace {
    Tensor z_s;
    std::array<Tensor, 3> stage_input;
    std::array<Tensor, 3> z_enc;
    Tensor z_scdp;
    Tensor z_dec;
};

class NgswinModel {
public:
    NgswinModel(ModelConfig cfg, const WeightStore& w) : cfg_(cfg) {
        cfg_.validate();
        check_complete(w, cfg_);
        shallow_w_ = w.get("shallow.weight");
        shallow_b_ = w.get("shallow.bias");
        for (size_t s = 0; s < 4; ++s) {
            const std::string st = stage_name(s);
            for (int64_t k = 1; k <= cfg_.depths[s]; ++k)
                blocks_[s].push_back(bind_block(w, st + ".block" + std::to_string(k), cfg_, cfg_.heads[s]));
        }
        for (size_t s = 0; s < 2; ++s) {
            const std::string st = stage_name(s);
            merge_[s] = {w.get(st + ".merge.norm.weight"), w.get(st + ".merge.norm.bias"),
                         w.get(st + ".merge.reduction.weight")};
            cascade_[s] = {w.get(stage_name(s + 1) + ".cascade.weight"), w.get(stage_name(s + 1) + ".cascade.bias")};
        }
        scdp_ = {w.get("scdp.dw.weight"), w.get("scdp.dw.bias"), w.get("scdp.pw.weight"),
                 w.get("scdp.pw.bias"), w.get("scdp.norm.weight"), w.get("scdp.norm.bias")};
        dec_norm_w_ = w.get("dec.norm.weight");
        dec_norm_b_ = w.get("dec.norm.bias");
        recon_ = {w.get("recon.conv1.weight"), w.get("recon.conv1.bias"), w.get("recon.conv2.weight"),
                  w.get("recon.conv2.bias")};
    }

    const ModelConfig& config() const { return cfg_; }

    /// Normalized input [3, H, W] with H, W multiples of 4M -> [3, rH, rW] in normalized space.
    Tensor forward_tensor(const Tensor& x, ForwardTrace* trace = nullptr) const {
        const int64_t mult = cfg_.size_multiple();
        if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) % mult || x.dim(2) % mult)
            throw ShapeError("model input " + shape_str(x.shape()) + " must be [3,H,W] with H, W multiples of " +
                             std::to_string(mult));
        const Tensor z_s = chw_to_hwc(conv2d(x, shallow_w_, &shallow_b_, {.stride = 1, .pad = 1}));
        std::array<Tensor, 3> inputs, z_enc;
        Tensor merged0, merged1;
        for (size_t s = 0; s < 3; ++s) {
            Tensor cur;
            if (s == 0) {
                cur = z_s;
            } else if (s == 1) {
                const Tensor priors[] = {z_s};
                cur = pooling_cascade(merged0, priors, cascade_[0].w, cascade_[0].b);
            } else {
                const Tensor priors[] = {z_s, merged0};
                cur = pooling_cascade(merged1, priors, cascade_[1].w, cascade_[1].b);
            }
            inputs[s] = cur;
            cur = run_stage(s, cur);
            z_enc[s] = cur;
            if (s < 2) {
                Tensor m = patch_merging(add(inputs[s], cur), merge_[s].norm_w, merge_[s].norm_b, merge_[s].reduction);
                (s == 0 ? merged0 : merged1) = std::move(m);
            }
        }
        const Tensor z_scdp = scdp_bottleneck(z_s, z_enc, scdp_);
        const Tensor z_dec = layer_norm(run_stage(3, add(z_scdp, z_enc[0])), dec_norm_w_, dec_norm_b_);
        if (trace) *trace = {z_s, inputs, z_enc, z_scdp, z_dec};
        return reconstruct(add(z_s, z_dec), recon_.w1, recon_.b1, recon_.w2, recon_.b2, cfg_.scale);
    }

    /// LR image -> SR image of exactly r times its extent, clamped to [0, 1].
    /// Inputs whose extents are not multiples of 4M are reflect-padded and the output cropped.
    ImageBuffer forward(const ImageBuffer& lr, const NormStats& stats, ForwardTrace* trace = nullptr) const {
        const int64_t mult = cfg_.size_multiple(), r = cfg_.scale;
        const int64_t ph = (lr.height + mult - 1) / mult * mult, pw = (lr.width + mult - 1) / mult * mult;
        const Tensor out = forward_tensor(reflect_pad_to(normalize(lr, stats), ph, pw), trace);
        ImageBuffer sr = denormalize(out, stats);
        if (ph != lr.height || pw != lr.width) {
            ImageBuffer cropped(lr.height * r, lr.width * r, 3);
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < cropped.height; ++y)
                    for (int64_t x = 0; x < cropped.width; ++x) cropped.at(c, y, x) = sr.at(c, y, x);
            sr = std::move(cropped);
        }
        sr.clamp01();
        return sr;
    }

private:
    Tensor run_stage(size_t s, Tensor x) const {
        for (size_t k = 0; k < blocks_[s].size(); ++k) {
            const int64_t shift =
                block_shift(static_cast<int64_t>(k + 1), cfg_.shift, x.dim(0), x.dim(1), cfg_.window);
            x = nstb_forward(x, blocks_[s][k], shift);
        }
        return x;
    }

    struct Merge {
        Tensor norm_w, norm_b, reduction;
    };
    struct Cascade {
        Tensor w, b;
    };
    struct Recon {
        Tensor w1, b1, w2, b2;
    };

    ModelConfig cfg_;
    Tensor shallow_w_, shallow_b_;
    std::array<std::vector<NstbParams>, 4> blocks_;
    std::array<Merge, 2> merge_;
    std::array<Cascade, 2> cascade_;
    ScdpParams scdp_;
    Tensor dec_norm_w_, dec_norm_b_;
    Recon recon_;
};

}  // namespace ngsr
