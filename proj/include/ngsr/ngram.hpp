#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ngsr/attention.hpp"
#include "ngsr/tensor.hpp"

namespace ngsr {

/// Non-overlapping M x M windows of an [h, w, D] token map.
struct WindowGrid {
    Tensor windows;  // [rows * cols, M*M, D], window (a,b) at index a*cols + b
    int64_t rows = 0;
    int64_t cols = 0;
    int64_t window = 0;
};

inline WindowGrid window_partition(const Tensor& x, int64_t m) {
    if (x.rank() != 3) throw ShapeError("window_partition expects [h,w,D], got " + shape_str(x.shape()));
    const int64_t h = x.dim(0), w = x.dim(1), d = x.dim(2);
    if (m < 1 || h % m || w % m)
        throw ShapeError("resolution " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by window size " + std::to_string(m));
    WindowGrid g{Tensor({(h / m) * (w / m), m * m, d}), h / m, w / m, m};
    for (int64_t a = 0; a < g.rows; ++a)
        for (int64_t b = 0; b < g.cols; ++b)
            for (int64_t py = 0; py < m; ++py) {
                const float* src = x.ptr() + ((a * m + py) * w + b * m) * d;
                float* dst = g.windows.ptr() + ((a * g.cols + b) * m * m + py * m) * d;
                std::copy(src, src + m * d, dst);
            }
    return g;
}

inline Tensor window_merge(const WindowGrid& g) {
    const int64_t m = g.window, d = g.windows.dim(2);
    Tensor x({g.rows * m, g.cols * m, d});
    const int64_t w = g.cols * m;
    for (int64_t a = 0; a < g.rows; ++a)
        for (int64_t b = 0; b < g.cols; ++b)
            for (int64_t py = 0; py < m; ++py) {
                const float* src = g.windows.ptr() + ((a * g.cols + b) * m * m + py * m) * d;
                float* dst = x.ptr() + ((a * m + py) * w + b * m) * d;
                std::copy(src, src + m * d, dst);
            }
    return x;
}

/// Torus roll of an [h, w, D] map by (-s, -s): out(i, j) = in(i + s, j + s).
/// A negative s rolls the other way, so cyclic_shift(cyclic_shift(x, s), -s) == x.
inline Tensor cyclic_shift(const Tensor& x, int64_t s) {
    if (x.rank() != 3) throw ShapeError("cyclic_shift expects [h,w,D]");
    const int64_t h = x.dim(0), w = x.dim(1), d = x.dim(2);
    Tensor out(x.shape());
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            const int64_t si = ((i + s) % h + h) % h, sj = ((j + s) % w + w) % w;
            std::copy(x.ptr() + (si * w + sj) * d, x.ptr() + (si * w + sj + 1) * d, out.ptr() + (i * w + j) * d);
        }
    return out;
}

enum class PadDirection { Forward, Backward };

/// Parameters of the N-Gram context branch of one block.
struct NGramParams {
    Tensor unigram_w;  // [D/2, 2, M, M], groups D/2
    Tensor unigram_b;  // [D/2]
    AttentionWeights attn;  // sliding-WSA at width D/2 over N x N patches, shared by both directions
    Tensor merge_w;    // [D, D, 1, 1]
    Tensor merge_b;    // [D]
    int64_t ngram = 2;
    AttentionMode mode = AttentionMode::Cosine;
};

/// Uni-Gram embedding: [h, w, D] -> [D/2, h/M, w/M] via an M x M stride-M
/// group convolution with D/2 groups.
inline Tensor unigram_embed(const Tensor& x, const NGramParams& p, int64_t m) {
    if (x.rank() != 3 || x.dim(2) % 2 != 0)
        throw ShapeError("unigram_embed expects [h,w,D] with even D, got " + shape_str(x.shape()));
    if (x.dim(0) % m || x.dim(1) % m) throw ShapeError("unigram_embed: resolution not divisible by window size");
    const int64_t d = x.dim(2);
    return conv2d(hwc_to_chw(x), p.unigram_w, &p.unigram_b, {.stride = m, .pad = 0, .groups = d / 2});
}

/// Reflect an out-of-range index back into [0, n) without repeating the edge
/// (numpy "reflect" semantics, folding as often as needed; n == 1 replicates).
inline int64_t reflect_index(int64_t i, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

/// Strict rejects grids with fewer than N windows per axis. Fold keeps
/// reflecting back and forth (a single window repeats itself), which the
/// model needs on the coarsest stage of small inputs.
enum class SmallGrid { Strict, Fold };

/// Window-granularity reflection padding of a uni-Gram grid [C, wh, ww] by
/// N-1 rows and columns: bottom/right for Forward, top/left for Backward.
inline Tensor seq_refl_win_pad(const Tensor& u, int64_t n, PadDirection dir, SmallGrid small = SmallGrid::Strict) {
    if (u.rank() != 3) throw ShapeError("seq_refl_win_pad expects [C, wh, ww]");
    if (n < 1) throw ShapeError("N-Gram size must be >= 1");
    const int64_t c = u.dim(0), gh = u.dim(1), gw = u.dim(2), p = n - 1;
    if (small == SmallGrid::Strict && (gh < n || gw < n))
        throw ShapeError("window grid " + std::to_string(gh) + "x" + std::to_string(gw) + " is smaller than N = " +
                         std::to_string(n));
    Tensor out({c, gh + p, gw + p});
    const int64_t off = dir == PadDirection::Forward ? 0 : p;
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < gh + p; ++i) {
            const int64_t si = reflect_index(i - off, gh);
            for (int64_t j = 0; j < gw + p; ++j) out.at(ch, i, j) = u.at(ch, si, reflect_index(j - off, gw));
        }
    return out;
}

/// Gathers every N x N patch of a padded grid [C, wh+N-1, ww+N-1] into
/// attention windows [wh*ww, N*N, C].
inline Tensor gather_ngram_patches(const Tensor& u_pad, int64_t n) {
    const int64_t c = u_pad.dim(0), gh = u_pad.dim(1) - n + 1, gw = u_pad.dim(2) - n + 1;
    if (gh < 1 || gw < 1) throw ShapeError("padded grid smaller than the N-Gram size");
    Tensor patches({gh * gw, n * n, c});
    for (int64_t a = 0; a < gh; ++a)
        for (int64_t b = 0; b < gw; ++b)
            for (int64_t dy = 0; dy < n; ++dy)
                for (int64_t dx = 0; dx < n; ++dx)
                    for (int64_t ch = 0; ch < c; ++ch)
                        patches.at(a * gw + b, dy * n + dx, ch) = u_pad.at(ch, a + dy, b + dx);
    return patches;
}

/// Sliding-WSA: self-attention inside every N x N patch of the padded grid,
/// followed by N x N average pooling of the attended tokens. Returns [wh, ww, C].
inline Tensor sliding_wsa(const Tensor& u_pad, const NGramParams& p) {
    const int64_t n = p.ngram;
    if (u_pad.rank() != 3 || u_pad.dim(0) != p.attn.dim)
        throw ShapeError("sliding_wsa input " + shape_str(u_pad.shape()) + " does not match attention width " +
                         std::to_string(p.attn.dim));
    const int64_t gh = u_pad.dim(1) - n + 1, gw = u_pad.dim(2) - n + 1, c = u_pad.dim(0);
    const Tensor attended = window_attention(gather_ngram_patches(u_pad, n), p.attn, p.mode);
    Tensor out({gh, gw, c});
    const float inv = 1.0f / static_cast<float>(n * n);
    for (int64_t pos = 0; pos < gh * gw; ++pos)
        for (int64_t ch = 0; ch < c; ++ch) {
            float acc = 0.0f;
            for (int64_t tok = 0; tok < n * n; ++tok) acc += attended.at(pos, tok, ch);
            out[pos * c + ch] = acc * inv;
        }
    return out;
}

/// Forward and backward N-Gram features [wh, ww, D/2] before merging.
struct NGramFeatures {
    Tensor forward;
    Tensor backward;
};

inline NGramFeatures ngram_features(const Tensor& x, const NGramParams& p, int64_t m) {
    const Tensor uni = unigram_embed(x, p, m);
    return {sliding_wsa(seq_refl_win_pad(uni, p.ngram, PadDirection::Forward, SmallGrid::Fold), p),
            sliding_wsa(seq_refl_win_pad(uni, p.ngram, PadDirection::Backward, SmallGrid::Fold), p)};
}

/// N-Gram context z_ng [D, h/M, w/M] of a token map [h, w, D].
inline Tensor ngram_context(const Tensor& x, const NGramParams& p, int64_t m) {
    const NGramFeatures f = ngram_features(x, p, m);
    const Tensor parts[] = {hwc_to_chw(f.forward), hwc_to_chw(f.backward)};
    return conv2d(concat_channels(parts), p.merge_w, &p.merge_b);
}

/// Adds z_ng[:, a, b] to every pixel of window (a, b).
inline WindowGrid windowwise_add(WindowGrid g, const Tensor& z_ng) {
    if (z_ng.rank() != 3 || z_ng.dim(0) != g.windows.dim(2) || z_ng.dim(1) != g.rows || z_ng.dim(2) != g.cols)
        throw ShapeError("N-Gram context " + shape_str(z_ng.shape()) + " does not match a " +
                         std::to_string(g.rows) + "x" + std::to_string(g.cols) + " window grid of dim " +
                         std::to_string(g.windows.dim(2)));
    const int64_t t = g.window * g.window, d = g.windows.dim(2);
    for (int64_t a = 0; a < g.rows; ++a)
        for (int64_t b = 0; b < g.cols; ++b) {
            float* win = g.windows.ptr() + (a * g.cols + b) * t * d;
            for (int64_t px = 0; px < t; ++px)
                for (int64_t ch = 0; ch < d; ++ch) win[px * d + ch] += z_ng.at(ch, a, b);
        }
    return g;
}

}  // namespace ngsr
