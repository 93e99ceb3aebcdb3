#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "ngsr/attention.hpp"
#include "ngsr/ngram.hpp"
#include "ngsr/tensor.hpp"
#include "ngsr/weights.hpp"

namespace ngsr {

struct NstbParams {
    NGramParams ngram;
    AttentionWeights attn;  // M x M window attention at width D
    Tensor norm1_w, norm1_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor norm2_w, norm2_b;
    AttentionMode mode = AttentionMode::Cosine;
    int64_t window = 8;
};

inline AttentionWeights bind_attention(const WeightStore& w, const std::string& p, int64_t dim, int64_t heads,
                                       int64_t window, AttentionMode mode) {
    AttentionWeights a;
    a.dim = dim;
    a.heads = heads;
    a.window = window;
    a.qkv_w = w.get(p + ".qkv.weight");
    a.qkv_b = w.get(p + ".qkv.bias");
    a.proj_w = w.get(p + ".proj.weight");
    a.proj_b = w.get(p + ".proj.bias");
    a.bias_table = w.get(p + ".bias_table");
    if (mode == AttentionMode::Cosine) a.tau = w.get(p + ".tau");
    return a;
}

inline NstbParams bind_block(const WeightStore& w, const std::string& p, const ModelConfig& c, int64_t heads) {
    NstbParams b;
    b.mode = c.mode;
    b.window = c.window;
    b.ngram.unigram_w = w.get(p + ".ngram.unigram.weight");
    b.ngram.unigram_b = w.get(p + ".ngram.unigram.bias");
    b.ngram.attn = bind_attention(w, p + ".ngram.attn", c.dim / 2, heads, c.ngram, c.mode);
    b.ngram.merge_w = w.get(p + ".ngram.merge.weight");
    b.ngram.merge_b = w.get(p + ".ngram.merge.bias");
    b.ngram.ngram = c.ngram;
    b.ngram.mode = c.mode;
    b.attn = bind_attention(w, p + ".attn", c.dim, heads, c.window, c.mode);
    b.norm1_w = w.get(p + ".norm1.weight");
    b.norm1_b = w.get(p + ".norm1.bias");
    b.ffn_w1 = w.get(p + ".ffn.w1");
    b.ffn_b1 = w.get(p + ".ffn.b1");
    b.ffn_w2 = w.get(p + ".ffn.w2");
    b.ffn_b2 = w.get(p + ".ffn.b2");
    b.norm2_w = w.get(p + ".norm2.weight");
    b.norm2_b = w.get(p + ".norm2.bias");
    return b;
}

/// Shift used by the k-th block (1-based) of a stage at resolution h x w.
/// Even blocks shift; maps no larger than one window never do.
inline int64_t block_shift(int64_t k, int64_t shift, int64_t h, int64_t w, int64_t m) {
    if (k % 2 != 0 || std::min(h, w) <= m) return 0;
    return shift;
}

/// The attention branch of a block before its residual: N-Gram context,
/// window attention (shifted and masked when shift > 0) and un-shift.
inline Tensor nstb_attention_branch(const Tensor& x, const NstbParams& p, int64_t shift) {
    const int64_t m = p.window, h = x.dim(0), w = x.dim(1);
    const Tensor xs = shift ? cyclic_shift(x, shift) : x;
    const Tensor z_ng = ngram_context(xs, p.ngram, m);
    const WindowGrid g = windowwise_add(window_partition(xs, m), z_ng);
    Tensor mask;
    if (shift) mask = shifted_window_mask(h, w, m, shift);
    WindowGrid attended = g;
    attended.windows = window_attention(g.windows, p.attn, p.mode, shift ? &mask : nullptr);
    const Tensor merged = window_merge(attended);
    return shift ? cyclic_shift(merged, -shift) : merged;
}

/// One block on a token map [h, w, D] with residual post-normalization:
/// x + LN(attn(x)), then x + LN(FFN(x)).
inline Tensor nstb_forward(const Tensor& x, const NstbParams& p, int64_t shift) {
    if (x.rank() != 3) throw ShapeError("nstb_forward expects [h,w,D], got " + shape_str(x.shape()));
    const Tensor y = add(x, layer_norm(nstb_attention_branch(x, p, shift), p.norm1_w, p.norm1_b));
    const Tensor hidden = gelu(linear(y, p.ffn_w1, &p.ffn_b1));
    return add(y, layer_norm(linear(hidden, p.ffn_w2, &p.ffn_b2), p.norm2_w, p.norm2_b));
}

}  // namespace ngsr
