#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <zlib.h>

#include "ngsr/config.hpp"
#include "ngsr/tensor.hpp"

namespace ngsr {

/// Missing, surplus, misshapen or corrupt weights.
class WeightError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class InitKind { TruncNormal, Zeros, Ones, Tau };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init;
};

inline constexpr float kInitStd = 0.02f;
inline constexpr float kInitTau = 0.1f;

namespace detail {

inline void attention_layout(std::vector<ParamSpec>& out, const std::string& p, int64_t dim, int64_t heads,
                             int64_t window, AttentionMode mode) {
    const int64_t width = attention_head_dim(dim, heads) * heads;
    out.push_back({p + ".qkv.weight", {3 * width, dim}, InitKind::TruncNormal});
    out.push_back({p + ".qkv.bias", {3 * width}, InitKind::Zeros});
    out.push_back({p + ".proj.weight", {dim, width}, InitKind::TruncNormal});
    out.push_back({p + ".proj.bias", {dim}, InitKind::Zeros});
    out.push_back({p + ".bias_table", {(2 * window - 1) * (2 * window - 1), heads}, InitKind::Zeros});
    if (mode == AttentionMode::Cosine) out.push_back({p + ".tau", {heads}, InitKind::Tau});
}

inline void norm_layout(std::vector<ParamSpec>& out, const std::string& p, int64_t dim) {
    out.push_back({p + ".weight", {dim}, InitKind::Ones});
    out.push_back({p + ".bias", {dim}, InitKind::Zeros});
}

inline void block_layout(std::vector<ParamSpec>& out, const std::string& p, const ModelConfig& c, int64_t heads) {
    const int64_t d = c.dim, m = c.window;
    out.push_back({p + ".ngram.unigram.weight", {d / 2, 2, m, m}, InitKind::TruncNormal});
    out.push_back({p + ".ngram.unigram.bias", {d / 2}, InitKind::Zeros});
    attention_layout(out, p + ".ngram.attn", d / 2, heads, c.ngram, c.mode);
    out.push_back({p + ".ngram.merge.weight", {d, d, 1, 1}, InitKind::TruncNormal});
    out.push_back({p + ".ngram.merge.bias", {d}, InitKind::Zeros});
    attention_layout(out, p + ".attn", d, heads, m, c.mode);
    norm_layout(out, p + ".norm1", d);
    out.push_back({p + ".ffn.w1", {c.ffn_hidden, d}, InitKind::TruncNormal});
    out.push_back({p + ".ffn.b1", {c.ffn_hidden}, InitKind::Zeros});
    out.push_back({p + ".ffn.w2", {d, c.ffn_hidden}, InitKind::TruncNormal});
    out.push_back({p + ".ffn.b2", {d}, InitKind::Zeros});
    norm_layout(out, p + ".norm2", d);
}

}  // namespace detail

inline std::string stage_name(size_t stage) { return stage < 3 ? "enc" + std::to_string(stage + 1) : "dec"; }

/// Every learnable tensor of the graph in definition order.
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
    c.validate();
    const int64_t d = c.dim, r = c.scale;
    std::vector<ParamSpec> out;
    out.push_back({"shallow.weight", {d, 3, 3, 3}, InitKind::TruncNormal});
    out.push_back({"shallow.bias", {d}, InitKind::Zeros});
    for (size_t s = 0; s < 4; ++s) {
        const std::string st = stage_name(s);
        if (s == 1 || s == 2) {
            out.push_back({st + ".cascade.weight", {d, static_cast<int64_t>(s + 1) * d}, InitKind::TruncNormal});
            out.push_back({st + ".cascade.bias", {d}, InitKind::Zeros});
        }
        for (int64_t k = 1; k <= c.depths[s]; ++k)
            detail::block_layout(out, st + ".block" + std::to_string(k), c, c.heads[s]);
        if (s < 2) {
            detail::norm_layout(out, st + ".merge.norm", 4 * d);
            out.push_back({st + ".merge.reduction.weight", {d, 4 * d}, InitKind::TruncNormal});
        }
        if (s == 2) {
            const int64_t sc = c.scdp_channels();
            out.push_back({"scdp.dw.weight", {sc, 1, 3, 3}, InitKind::TruncNormal});
            out.push_back({"scdp.dw.bias", {sc}, InitKind::Zeros});
            out.push_back({"scdp.pw.weight", {d, sc}, InitKind::TruncNormal});
            out.push_back({"scdp.pw.bias", {d}, InitKind::Zeros});
            detail::norm_layout(out, "scdp.norm", d);
        }
    }
    detail::norm_layout(out, "dec.norm", d);
    out.push_back({"recon.conv1.weight", {3 * r * r, d, 3, 3}, InitKind::TruncNormal});
    out.push_back({"recon.conv1.bias", {3 * r * r}, InitKind::Zeros});
    out.push_back({"recon.conv2.weight", {3, 3, 3, 3}, InitKind::TruncNormal});
    out.push_back({"recon.conv2.bias", {3}, InitKind::Zeros});
    return out;
}

/// Named tensors in insertion order.
class WeightStore {
public:
    void insert(std::string name, Tensor t) {
        if (index_.contains(name)) throw WeightError("duplicate weight '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(t));
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw WeightError("missing weight '" + name + "'");
        return entries_[it->second].second;
    }

    Tensor& get_mut(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw WeightError("missing weight '" + name + "'");
        return entries_[it->second].second;
    }

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& [_, t] : entries_) n += t.numel();
        return n;
    }

    friend bool operator==(const WeightStore& a, const WeightStore& b) { return a.entries_ == b.entries_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

/// Throws naming the first layout entry that is absent or misshapen, or the
/// first stored tensor the layout does not use.
inline void check_complete(const WeightStore& w, const ModelConfig& c) {
    const auto layout = parameter_layout(c);
    std::unordered_map<std::string, bool> expected;
    for (const auto& spec : layout) {
        if (!w.contains(spec.name)) throw WeightError("missing weight '" + spec.name + "'");
        const Tensor& t = w.get(spec.name);
        if (t.shape() != spec.shape)
            throw WeightError("weight '" + spec.name + "' has shape " + shape_str(t.shape()) + ", expected " +
                              shape_str(spec.shape));
        expected.emplace(spec.name, true);
    }
    for (const auto& [name, _] : w.entries())
        if (!expected.contains(name)) throw WeightError("unused weight '" + name + "'");
}

/// Seeded initialization: truncated normal (std 0.02, cut at 2 std) for
/// projections, zeros for biases and bias tables, unit LayerNorm scale, tau 0.1.
inline WeightStore init_weights(const ModelConfig& c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    WeightStore w;
    for (const auto& spec : parameter_layout(c)) {
        Tensor t(spec.shape);
        switch (spec.init) {
            case InitKind::TruncNormal:
                for (float& v : t.data()) {
                    float z;
                    do z = normal(rng);
                    while (std::fabs(z) > 2.0f);
                    v = z * kInitStd;
                }
                break;
            case InitKind::Ones: std::fill(t.data().begin(), t.data().end(), 1.0f); break;
            case InitKind::Tau: std::fill(t.data().begin(), t.data().end(), kInitTau); break;
            case InitKind::Zeros: break;
        }
        w.insert(spec.name, std::move(t));
    }
    return w;
}

// ---------------------------------------------------------------------------
// NGSW file format (little-endian):
//   "NGSW" | u32 version | u32 count | count x (u16 len, name, u8 rank, rank x u64, f32 data) | u32 crc32

inline constexpr uint32_t kNgswVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& buf, T v) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& buf, size_t end) : buf_(buf), end_(end) {}
    template <typename T>
    T get() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void floats(std::span<float> dst) {
        need(dst.size_bytes());
        std::memcpy(dst.data(), buf_.data() + pos_, dst.size_bytes());
        pos_ += dst.size_bytes();
    }
    size_t pos() const { return pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > end_) throw WeightError("weight file truncated at byte " + std::to_string(pos_));
    }
    const std::string& buf_;
    size_t end_;
    size_t pos_ = 0;
};

inline uint32_t crc32_of(const std::string& buf, size_t n) {
    return static_cast<uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n)));
}

}  // namespace detail

inline std::string serialize_weights(const WeightStore& w) {
    std::string buf = "NGSW";
    detail::put_le<uint32_t>(buf, kNgswVersion);
    detail::put_le<uint32_t>(buf, static_cast<uint32_t>(w.size()));
    for (const auto& [name, t] : w.entries()) {
        if (name.size() > 0xFFFF) throw WeightError("weight name too long: " + name.substr(0, 40) + "...");
        detail::put_le<uint16_t>(buf, static_cast<uint16_t>(name.size()));
        buf += name;
        detail::put_le<uint8_t>(buf, static_cast<uint8_t>(t.rank()));
        for (auto e : t.shape()) detail::put_le<uint64_t>(buf, static_cast<uint64_t>(e));
        buf.append(reinterpret_cast<const char*>(t.ptr()), static_cast<size_t>(t.numel()) * sizeof(float));
    }
    detail::put_le<uint32_t>(buf, detail::crc32_of(buf, buf.size()));
    return buf;
}

inline WeightStore deserialize_weights(const std::string& buf) {
    if (buf.size() < 16 || buf.compare(0, 4, "NGSW") != 0) throw WeightError("not an NGSW weight file");
    const size_t body = buf.size() - 4;
    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + body, 4);
    if (stored_crc != detail::crc32_of(buf, body)) throw WeightError("weight file checksum mismatch");
    detail::Reader rd(buf, body);
    rd.bytes(4);
    if (const auto v = rd.get<uint32_t>(); v != kNgswVersion)
        throw WeightError("unsupported weight file version " + std::to_string(v));
    const auto count = rd.get<uint32_t>();
    WeightStore w;
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = rd.bytes(rd.get<uint16_t>());
        const auto rank = rd.get<uint8_t>();
        Shape shape(rank);
        for (auto& e : shape) {
            const auto v = rd.get<uint64_t>();
            if (v == 0 || v > (uint64_t{1} << 40)) throw WeightError("weight '" + name + "' has an invalid extent");
            e = static_cast<int64_t>(v);
        }
        Tensor t(shape);
        rd.floats(t.data());
        w.insert(std::move(name), std::move(t));
    }
    if (rd.pos() != body) throw WeightError("trailing bytes after the last tensor");
    return w;
}

inline void save_weights(const WeightStore& w, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw WeightError("cannot open '" + path + "' for writing");
    const std::string buf = serialize_weights(w);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw WeightError("failed writing '" + path + "'");
}

inline WeightStore load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw WeightError("cannot open weight file '" + path + "'");
    const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_weights(buf);
}

}  // namespace ngsr
