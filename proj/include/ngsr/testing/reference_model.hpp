#pragma once

// Straight-line double-precision transcription of the full network, written
// pixel by pixel from the graph description. It reads the same WeightStore
// as the fast model but uses none of its kernels.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ngsr/config.hpp"
#include "ngsr/testing/oracles.hpp"
#include "ngsr/weights.hpp"

namespace ngsr::testing {

/// Feature map h x w x c, element (y, x, ch) at (y * w + x) * c + ch.
struct Map {
    int64_t h = 0, w = 0, c = 0;
    std::vector<double> v;
    Map() = default;
    Map(int64_t h_, int64_t w_, int64_t c_) : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_ * w_ * c_), 0.0) {}
    double& operator()(int64_t y, int64_t x, int64_t ch) { return v[static_cast<size_t>((y * w + x) * c + ch)]; }
    double operator()(int64_t y, int64_t x, int64_t ch) const { return v[static_cast<size_t>((y * w + x) * c + ch)]; }
};

class ReferenceModel {
public:
    ReferenceModel(ModelConfig cfg, const WeightStore& w) : c_(cfg), w_(w) { check_complete(w, cfg); }

    /// Normalized input [3, H, W] (H, W multiples of 4M) -> [3, rH, rW].
    Tensor forward(const Tensor& input) const {
        Map x(input.dim(1), input.dim(2), 3);
        for (int64_t y = 0; y < x.h; ++y)
            for (int64_t xx = 0; xx < x.w; ++xx)
                for (int64_t ch = 0; ch < 3; ++ch) x(y, xx, ch) = input.at(ch, y, xx);

        const Map zs = conv(x, "shallow", 3, 1, 1);

        // encoder stage 1
        Map e1 = zs;
        for (int64_t k = 1; k <= c_.depths[0]; ++k) e1 = block(e1, "enc1.block" + std::to_string(k), c_.heads[0], k);
        const Map m1 = merge(sum(zs, e1), "enc1.merge");

        // stage 2 entry: [pool(zs), m1]
        const Map in2 = dense(cat({pool(zs), m1}), "enc2.cascade", true);
        Map e2 = in2;
        for (int64_t k = 1; k <= c_.depths[1]; ++k) e2 = block(e2, "enc2.block" + std::to_string(k), c_.heads[1], k);
        const Map m2 = merge(sum(in2, e2), "enc2.merge");

        // stage 3 entry: [pool(pool(zs)), pool(m1), m2]
        const Map in3 = dense(cat({pool(pool(zs)), pool(m1), m2}), "enc3.cascade", true);
        Map e3 = in3;
        for (int64_t k = 1; k <= c_.depths[2]; ++k) e3 = block(e3, "enc3.block" + std::to_string(k), c_.heads[2], k);

        // SCDP
        const Map s1 = sum(e1, leaky(zs));
        const Map s2 = shuffle(sum(e2, leaky(pool(zs))), 2);
        const Map s3 = shuffle(sum(e3, leaky(pool(pool(zs)))), 4);
        const Map dw = gelu(conv(cat({s1, s2, s3}), "scdp.dw", 3, 1, c_.scdp_channels()));
        const Map scdp = norm(dense(dw, "scdp.pw", true), "scdp.norm");

        // decoder
        Map dec = sum(scdp, e1);
        for (int64_t k = 1; k <= c_.depths[3]; ++k) dec = block(dec, "dec.block" + std::to_string(k), c_.heads[3], k);
        dec = norm(dec, "dec.norm");

        // reconstruction
        const Map up = shuffle(conv(sum(zs, dec), "recon.conv1", 3, 1, 1), c_.scale);
        const Map out = conv(up, "recon.conv2", 3, 1, 1);
        Tensor t({3, out.h, out.w});
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t y = 0; y < out.h; ++y)
                for (int64_t xx = 0; xx < out.w; ++xx) t.at(ch, y, xx) = static_cast<float>(out(y, xx, ch));
        return t;
    }

private:
    const Tensor& P(const std::string& n) const { return w_.get(n); }

    static Map sum(const Map& a, const Map& b) {
        Map o = a;
        for (size_t i = 0; i < o.v.size(); ++i) o.v[i] += b.v[i];
        return o;
    }

    static Map leaky(Map a) {
        for (double& x : a.v) x = x >= 0 ? x : 0.01 * x;
        return a;
    }

    static Map gelu(Map a) {
        for (double& x : a.v) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
        return a;
    }

    static Map pool(const Map& a) {
        Map o(a.h / 2, a.w / 2, a.c);
        for (int64_t y = 0; y < o.h; ++y)
            for (int64_t x = 0; x < o.w; ++x)
                for (int64_t ch = 0; ch < a.c; ++ch)
                    o(y, x, ch) = std::max(std::max(a(2 * y, 2 * x, ch), a(2 * y, 2 * x + 1, ch)),
                                           std::max(a(2 * y + 1, 2 * x, ch), a(2 * y + 1, 2 * x + 1, ch)));
        return o;
    }

    static Map cat(const std::vector<Map>& parts) {
        int64_t c = 0;
        for (const auto& p : parts) c += p.c;
        Map o(parts[0].h, parts[0].w, c);
        for (int64_t y = 0; y < o.h; ++y)
            for (int64_t x = 0; x < o.w; ++x) {
                int64_t off = 0;
                for (const auto& p : parts) {
                    for (int64_t ch = 0; ch < p.c; ++ch) o(y, x, off + ch) = p(y, x, ch);
                    off += p.c;
                }
            }
        return o;
    }

    /// Channel block (c * s^2 + dy * s + dx) goes to sub-pixel (dy, dx) of channel c.
    static Map shuffle(const Map& a, int64_t s) {
        Map o(a.h * s, a.w * s, a.c / (s * s));
        for (int64_t y = 0; y < a.h; ++y)
            for (int64_t x = 0; x < a.w; ++x)
                for (int64_t ch = 0; ch < o.c; ++ch)
                    for (int64_t dy = 0; dy < s; ++dy)
                        for (int64_t dx = 0; dx < s; ++dx) o(y * s + dy, x * s + dx, ch) = a(y, x, ch * s * s + dy * s + dx);
        return o;
    }

    /// k x k convolution with "same" padding and a stride equal to `stride`,
    /// output channels from the weight, `groups` groups.
    Map conv(const Map& a, const std::string& name, int64_t k, int64_t stride, int64_t groups) const {
        const Tensor& wt = P(name + ".weight");
        const Tensor& b = P(name + ".bias");
        const int64_t cout = wt.dim(0), cpg = wt.dim(1), pad = stride == 1 ? k / 2 : 0;
        const int64_t oh = (a.h + 2 * pad - k) / stride + 1, ow = (a.w + 2 * pad - k) / stride + 1;
        const int64_t opg = cout / groups;
        Map o(oh, ow, cout);
        for (int64_t y = 0; y < oh; ++y)
            for (int64_t x = 0; x < ow; ++x)
                for (int64_t oc = 0; oc < cout; ++oc) {
                    double acc = b[oc];
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t iy = y * stride + ky - pad, ix = x * stride + kx - pad;
                            if (iy < 0 || ix < 0 || iy >= a.h || ix >= a.w) continue;
                            for (int64_t ci = 0; ci < cpg; ++ci)
                                acc += static_cast<double>(wt[((oc * cpg + ci) * k + ky) * k + kx]) *
                                       a(iy, ix, (oc / opg) * cpg + ci);
                        }
                    o(y, x, oc) = acc;
                }
        return o;
    }

    Map dense(const Map& a, const std::string& name, bool has_bias, const std::string& wname = ".weight",
              const std::string& bname = ".bias") const {
        const Tensor& wt = P(name + wname);
        const int64_t out = wt.dim(0), in = wt.dim(1);
        Map o(a.h, a.w, out);
        for (int64_t y = 0; y < a.h; ++y)
            for (int64_t x = 0; x < a.w; ++x)
                for (int64_t j = 0; j < out; ++j) {
                    double acc = has_bias ? static_cast<double>(P(name + bname)[j]) : 0.0;
                    for (int64_t i = 0; i < in; ++i) acc += static_cast<double>(wt.at(j, i)) * a(y, x, i);
                    o(y, x, j) = acc;
                }
        return o;
    }

    Map norm(const Map& a, const std::string& name) const {
        const Tensor& g = P(name + ".weight");
        const Tensor& b = P(name + ".bias");
        Map o(a.h, a.w, a.c);
        for (int64_t y = 0; y < a.h; ++y)
            for (int64_t x = 0; x < a.w; ++x) {
                double mean = 0.0, var = 0.0;
                for (int64_t ch = 0; ch < a.c; ++ch) mean += a(y, x, ch);
                mean /= static_cast<double>(a.c);
                for (int64_t ch = 0; ch < a.c; ++ch) var += (a(y, x, ch) - mean) * (a(y, x, ch) - mean);
                var /= static_cast<double>(a.c);
                for (int64_t ch = 0; ch < a.c; ++ch)
                    o(y, x, ch) = (a(y, x, ch) - mean) / std::sqrt(var + 1e-5) * g[ch] + b[ch];
            }
        return o;
    }

    Map merge(const Map& a, const std::string& name) const {
        Map s(a.h / 2, a.w / 2, 4 * a.c);
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x)
                for (int64_t ch = 0; ch < a.c; ++ch) {
                    s(y, x, ch) = a(2 * y, 2 * x, ch);
                    s(y, x, a.c + ch) = a(2 * y + 1, 2 * x, ch);
                    s(y, x, 2 * a.c + ch) = a(2 * y, 2 * x + 1, ch);
                    s(y, x, 3 * a.c + ch) = a(2 * y + 1, 2 * x + 1, ch);
                }
        return dense(norm(s, name + ".norm"), name + ".reduction", false);
    }

    AttentionWeights attn_weights(const std::string& p, int64_t dim, int64_t heads, int64_t window) const {
        AttentionWeights a;
        a.dim = dim;
        a.heads = heads;
        a.window = window;
        a.qkv_w = P(p + ".qkv.weight");
        a.qkv_b = P(p + ".qkv.bias");
        a.proj_w = P(p + ".proj.weight");
        a.proj_b = P(p + ".proj.bias");
        a.bias_table = P(p + ".bias_table");
        if (c_.mode == AttentionMode::Cosine) a.tau = P(p + ".tau");
        return a;
    }

    /// numpy-style reflect of index i into [0, n)
    static int64_t refl(int64_t i, int64_t n) {
        if (n == 1) return 0;
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
        return i;
    }

    /// N-Gram context of the (already shifted) map, [wh, ww, D].
    Map context(const Map& x, const std::string& p, int64_t heads) const {
        const int64_t m = c_.window, n = c_.ngram, d = c_.dim, gh = x.h / m, gw = x.w / m;
        const Tensor& uw = P(p + ".unigram.weight");
        const Tensor& ub = P(p + ".unigram.bias");
        // uni-Gram: output channel o reads input channels 2o and 2o+1 over the window
        Map uni(gh, gw, d / 2);
        for (int64_t a = 0; a < gh; ++a)
            for (int64_t b = 0; b < gw; ++b)
                for (int64_t o = 0; o < d / 2; ++o) {
                    double acc = ub[o];
                    for (int64_t q = 0; q < 2; ++q)
                        for (int64_t py = 0; py < m; ++py)
                            for (int64_t px = 0; px < m; ++px)
                                acc += static_cast<double>(uw[((o * 2 + q) * m + py) * m + px]) *
                                       x(a * m + py, b * m + px, 2 * o + q);
                    uni(a, b, o) = acc;
                }
        const AttentionWeights aw = attn_weights(p + ".attn", d / 2, heads, n);
        Map feats(gh, gw, d);  // [forward | backward]
        for (int dir = 0; dir < 2; ++dir) {
            const int64_t off = dir == 0 ? 0 : n - 1;
            for (int64_t a = 0; a < gh; ++a)
                for (int64_t b = 0; b < gw; ++b) {
                    std::vector<std::vector<double>> toks;
                    std::vector<std::pair<int64_t, int64_t>> pos;
                    for (int64_t dy = 0; dy < n; ++dy)
                        for (int64_t dx = 0; dx < n; ++dx) {
                            const int64_t sy = refl(a + dy - off, gh), sx = refl(b + dx - off, gw);
                            std::vector<double> t(static_cast<size_t>(d / 2));
                            for (int64_t ch = 0; ch < d / 2; ++ch) t[static_cast<size_t>(ch)] = uni(sy, sx, ch);
                            toks.push_back(std::move(t));
                            pos.emplace_back(dy, dx);
                        }
                    const auto att = attend_naive(toks, pos, aw, c_.mode, [](int64_t, int64_t) { return true; });
                    for (int64_t ch = 0; ch < d / 2; ++ch) {
                        double s = 0.0;
                        for (const auto& t : att) s += t[static_cast<size_t>(ch)];
                        feats(a, b, dir * (d / 2) + ch) = s / static_cast<double>(n * n);
                    }
                }
        }
        const Tensor& mw = P(p + ".merge.weight");
        const Tensor& mb = P(p + ".merge.bias");
        Map z(gh, gw, d);
        for (int64_t a = 0; a < gh; ++a)
            for (int64_t b = 0; b < gw; ++b)
                for (int64_t o = 0; o < d; ++o) {
                    double acc = mb[o];
                    for (int64_t i = 0; i < d; ++i) acc += static_cast<double>(mw[o * d + i]) * feats(a, b, i);
                    z(a, b, o) = acc;
                }
        return z;
    }

    Map block(const Map& x, const std::string& p, int64_t heads, int64_t k) const {
        const int64_t m = c_.window, d = c_.dim, h = x.h, w = x.w;
        const int64_t s = (k % 2 == 0 && std::min(h, w) > m) ? c_.shift : 0;
        // rolled map: xs(i, j) = x(i + s, j + s)
        Map xs(h, w, d);
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                for (int64_t ch = 0; ch < d; ++ch) xs(i, j, ch) = x((i + s) % h, (j + s) % w, ch);
        const Map z = context(xs, p + ".ngram", heads);
        const AttentionWeights aw = attn_weights(p + ".attn", d, heads, m);
        Map att(h, w, d);
        for (int64_t a = 0; a < h / m; ++a)
            for (int64_t b = 0; b < w / m; ++b) {
                std::vector<std::vector<double>> toks;
                std::vector<std::pair<int64_t, int64_t>> pos, orig;
                for (int64_t py = 0; py < m; ++py)
                    for (int64_t px = 0; px < m; ++px) {
                        const int64_t i = a * m + py, j = b * m + px;
                        std::vector<double> t(static_cast<size_t>(d));
                        for (int64_t ch = 0; ch < d; ++ch) t[static_cast<size_t>(ch)] = xs(i, j, ch) + z(a, b, ch);
                        toks.push_back(std::move(t));
                        pos.emplace_back(py, px);
                        orig.emplace_back((i + s) % h, (j + s) % w);
                    }
                // pixels that wrapped around the map never see each other
                const auto out = attend_naive(toks, pos, aw, c_.mode, [&](int64_t u, int64_t v) {
                    return s == 0 || (std::llabs(orig[u].first - orig[v].first) < m &&
                                      std::llabs(orig[u].second - orig[v].second) < m);
                });
                for (size_t t = 0; t < orig.size(); ++t)
                    for (int64_t ch = 0; ch < d; ++ch) att(orig[t].first, orig[t].second, ch) = out[t][static_cast<size_t>(ch)];
            }
        const Map y = sum(x, norm(att, p + ".norm1"));
        const Map hid = gelu(dense(y, p + ".ffn", true, ".w1", ".b1"));
        return sum(y, norm(dense(hid, p + ".ffn", true, ".w2", ".b2"), p + ".norm2"));
    }

    ModelConfig c_;
    const WeightStore& w_;
};

}  // namespace ngsr::testing
