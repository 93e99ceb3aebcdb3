#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ngsr/tensor.hpp"

namespace ngsr {

enum class AttentionMode { Cosine, DotProduct };

inline constexpr float kTauFloor = 0.01f;
inline constexpr float kCosineEps = 1e-8f;
inline constexpr float kMaskValue = -1e9f;

inline const char* to_string(AttentionMode m) { return m == AttentionMode::Cosine ? "cosine" : "dot-product"; }

/// Projections and bias table of one multi-head window attention.
///
/// The internal width is heads * floor(dim / heads); for the default network
/// this gives 60 channels at 6 heads and D = 64, with the output projection
/// mapping back to dim.
struct AttentionWeights {
    int64_t dim = 0;
    int64_t heads = 1;
    int64_t window = 1;  // tokens form a window x window patch
    Tensor qkv_w;        // [3 * width, dim]
    Tensor qkv_b;        // [3 * width]
    Tensor proj_w;       // [dim, width]
    Tensor proj_b;       // [dim]
    Tensor bias_table;   // [(2 * window - 1)^2, heads]
    Tensor tau;          // [heads], cosine mode only

    int64_t head_dim() const { return dim / heads; }
    int64_t width() const { return head_dim() * heads; }
};

inline int64_t attention_head_dim(int64_t dim, int64_t heads) {
    if (heads < 1 || dim < heads)
        throw ShapeError("attention with dim " + std::to_string(dim) + " cannot host " + std::to_string(heads) +
                         " heads");
    return dim / heads;
}

/// Temperature as used by the attention: stored value clamped from below.
inline float effective_tau(float stored) { return std::isnan(stored) ? kTauFloor : std::max(stored, kTauFloor); }

/// cos(Q, K) for Q [T, d] and K [S, d] -> [T, S]; norms are stabilized by kCosineEps.
inline Tensor cosine_similarity(const Tensor& q, const Tensor& k) {
    if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1))
        throw ShapeError("cosine_similarity expects [T,d] and [S,d], got " + shape_str(q.shape()) + " and " +
                         shape_str(k.shape()));
    const int64_t t = q.dim(0), s = k.dim(0), d = q.dim(1);
    auto norms = [d](const Tensor& m) {
        std::vector<float> n(static_cast<size_t>(m.dim(0)));
        for (int64_t i = 0; i < m.dim(0); ++i) {
            float acc = 0.0f;
            for (int64_t c = 0; c < d; ++c) acc += m.at(i, c) * m.at(i, c);
            n[static_cast<size_t>(i)] = std::sqrt(acc) + kCosineEps;
        }
        return n;
    };
    const auto nq = norms(q), nk = norms(k);
    Tensor out({t, s});
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < s; ++j) {
            float dot = 0.0f;
            for (int64_t c = 0; c < d; ++c) dot += (q.at(i, c) / nq[static_cast<size_t>(i)]) * (k.at(j, c) / nk[static_cast<size_t>(j)]);
            out.at(i, j) = dot;
        }
    return out;
}

/// Index into a (2M-1)^2 bias table for every ordered pixel pair of an M x M window.
inline std::vector<int32_t> relative_position_index(int64_t m) {
    if (m < 1) throw ShapeError("window size must be positive");
    const int64_t t = m * m;
    std::vector<int32_t> idx(static_cast<size_t>(t * t));
    for (int64_t a = 0; a < t; ++a)
        for (int64_t b = 0; b < t; ++b) {
            const int64_t dy = a / m - b / m, dx = a % m - b % m;
            idx[static_cast<size_t>(a * t + b)] = static_cast<int32_t>((dy + m - 1) * (2 * m - 1) + (dx + m - 1));
        }
    return idx;
}

/// Additive masks [nW, M^2, M^2] for windows over a map cyclically shifted by
/// `shift`. Pairs of pixels that came from different regions of the unshifted
/// map receive kMaskValue.
inline Tensor shifted_window_mask(int64_t h, int64_t w, int64_t m, int64_t shift) {
    if (h % m || w % m) throw ShapeError("mask extents must be multiples of the window size");
    const int64_t wh = h / m, ww = w / m, t = m * m;
    Tensor mask({wh * ww, t, t});
    if (shift == 0) return mask;
    auto region = [&](int64_t i, int64_t extent) { return i < extent - m ? 0 : (i < extent - shift ? 1 : 2); };
    for (int64_t a = 0; a < wh; ++a)
        for (int64_t b = 0; b < ww; ++b) {
            std::vector<int> label(static_cast<size_t>(t));
            for (int64_t p = 0; p < t; ++p)
                label[static_cast<size_t>(p)] = region(a * m + p / m, h) * 3 + region(b * m + p % m, w);
            float* dst = mask.ptr() + (a * ww + b) * t * t;
            for (int64_t p = 0; p < t; ++p)
                for (int64_t q = 0; q < t; ++q)
                    dst[p * t + q] = label[static_cast<size_t>(p)] == label[static_cast<size_t>(q)] ? 0.0f : kMaskValue;
        }
    return mask;
}

/// Multi-head window self-attention over windows [nW, T, dim] with T = window^2.
///
/// Cosine mode: softmax(cos(Q,K) / max(tau, 0.01) + B + mask) V.
/// Dot-product mode: softmax(Q K^T / sqrt(head_dim) + B + mask) V.
/// `mask` is [nW, T, T] or null. When `probs` is given it receives the
/// attention weights [nW, heads, T, T].
inline Tensor window_attention(const Tensor& windows, const AttentionWeights& p, AttentionMode mode,
                               const Tensor* mask = nullptr, Tensor* probs = nullptr) {
    if (windows.rank() != 3 || windows.dim(2) != p.dim || windows.dim(1) != p.window * p.window)
        throw ShapeError("window_attention input " + shape_str(windows.shape()) + " does not match dim " +
                         std::to_string(p.dim) + " and window " + std::to_string(p.window));
    const int64_t nw = windows.dim(0), t = windows.dim(1), heads = p.heads;
    const int64_t hd = attention_head_dim(p.dim, heads), width = hd * heads;
    if (mask && (mask->rank() != 3 || mask->dim(0) != nw || mask->dim(1) != t || mask->dim(2) != t))
        throw ShapeError("attention mask " + shape_str(mask->shape()) + " does not match windows");
    const auto rel = relative_position_index(p.window);

    Tensor qkv = linear(windows, p.qkv_w, &p.qkv_b);  // [nW, T, 3*width]
    Tensor ctx({nw, t, width});
    if (probs) *probs = Tensor({nw, heads, t, t});

    std::vector<float> taus(static_cast<size_t>(heads), 1.0f);
    if (mode == AttentionMode::Cosine)
        for (int64_t hh = 0; hh < heads; ++hh) taus[static_cast<size_t>(hh)] = effective_tau(p.tau[hh]);
    const float dot_scale = 1.0f / std::sqrt(static_cast<float>(hd));

    parallel_for(nw, [&](int64_t win) {
        const float* base = qkv.ptr() + win * t * 3 * width;
        std::vector<float> qn(static_cast<size_t>(t * hd)), kn(static_cast<size_t>(t * hd));
        std::vector<float> logits(static_cast<size_t>(t * t));
        for (int64_t hh = 0; hh < heads; ++hh) {
            for (int64_t i = 0; i < t; ++i) {
                const float* q = base + i * 3 * width + hh * hd;
                const float* k = q + width;
                float nq = 0.0f, nk = 0.0f;
                for (int64_t c = 0; c < hd; ++c) {
                    nq += q[c] * q[c];
                    nk += k[c] * k[c];
                }
                nq = mode == AttentionMode::Cosine ? std::sqrt(nq) + kCosineEps : 1.0f;
                nk = mode == AttentionMode::Cosine ? std::sqrt(nk) + kCosineEps : 1.0f;
                for (int64_t c = 0; c < hd; ++c) {
                    qn[static_cast<size_t>(i * hd + c)] = q[c] / nq;
                    kn[static_cast<size_t>(i * hd + c)] = k[c] / nk;
                }
            }
            const float scale = mode == AttentionMode::Cosine ? 1.0f / taus[static_cast<size_t>(hh)] : dot_scale;
            for (int64_t i = 0; i < t; ++i) {
                float* row = logits.data() + i * t;
                for (int64_t j = 0; j < t; ++j) {
                    float dot = 0.0f;
                    for (int64_t c = 0; c < hd; ++c) dot += qn[static_cast<size_t>(i * hd + c)] * kn[static_cast<size_t>(j * hd + c)];
                    float v = dot * scale + p.bias_table.at(rel[static_cast<size_t>(i * t + j)], hh);
                    if (mask) v += mask->at(win, i, j);
                    row[j] = v;
                }
                softmax_inplace(std::span<float>(row, static_cast<size_t>(t)));
                float* out = ctx.ptr() + (win * t + i) * width + hh * hd;
                for (int64_t c = 0; c < hd; ++c) out[c] = 0.0f;
                for (int64_t j = 0; j < t; ++j) {
                    const float* v = base + j * 3 * width + 2 * width + hh * hd;
                    for (int64_t c = 0; c < hd; ++c) out[c] += row[j] * v[c];
                }
                if (probs)
                    std::copy(row, row + t, probs->ptr() + ((win * heads + hh) * t + i) * t);
            }
        }
    });
    return linear(ctx, p.proj_w, &p.proj_b);
}

}  // namespace ngsr
