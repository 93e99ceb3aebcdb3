#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngsr/config.hpp"
#include "ngsr/weights.hpp"

namespace ngsr {

inline constexpr const char* kCostConvention = "mac-v1";

struct LayerCost {
    std::string path;
    int64_t params = 0;
    int64_t mult_adds = 0;
};

struct CostReport {
    ModelConfig config;
    int64_t hr_w = 0, hr_h = 0;
    int64_t lr_w = 0, lr_h = 0;          // ceil(HR / r)
    int64_t padded_w = 0, padded_h = 0;  // LR rounded up to multiples of 4M
    std::vector<LayerCost> layers;
    int64_t total_params = 0;
    int64_t total_mult_adds = 0;

    bool padded() const { return padded_w != lr_w || padded_h != lr_h; }

    const LayerCost* find(const std::string& path) const {
        for (const auto& l : layers)
            if (l.path == path) return &l;
        return nullptr;
    }

    /// Sum over all records whose path starts with `prefix`.
    LayerCost sum_prefix(const std::string& prefix) const {
        LayerCost out{prefix, 0, 0};
        for (const auto& l : layers)
            if (l.path.starts_with(prefix)) {
                out.params += l.params;
                out.mult_adds += l.mult_adds;
            }
        return out;
    }
};

/// Omega(WSA) = 4 h w D^2 + 2 M^2 h w D.
inline int64_t wsa_complexity(int64_t h, int64_t w, int64_t d, int64_t m) {
    return 4 * h * w * d * d + 2 * m * m * h * w * d;
}

/// Rule-of-thumb cost of one first-stage block, in units of 1e9 Mult-Adds.
inline double nstb_multadds_estimate(int64_t hw, int64_t r) {
    if (r < 2 || r > 4) throw ConfigError("scale must be in {2,3,4}");
    const double half = static_cast<double>(r) / 2.0;
    return 10.0 * static_cast<double>(hw) / 4096.0 / (half * half);
}

namespace detail {

inline int64_t attention_params(int64_t dim, int64_t heads, int64_t window, AttentionMode mode) {
    const int64_t width = attention_head_dim(dim, heads) * heads;
    int64_t n = dim * 3 * width + 3 * width + width * dim + dim + (2 * window - 1) * (2 * window - 1) * heads;
    if (mode == AttentionMode::Cosine) n += heads;
    return n;
}

}  // namespace detail

/// Walks the graph of `cfg` in definition order for an HR target of hr_w x hr_h.
inline CostReport analyze_cost(const ModelConfig& cfg, int64_t hr_w, int64_t hr_h) {
    cfg.validate();
    if (hr_w < 1 || hr_h < 1) throw ConfigError("HR size must be positive");
    const int64_t d = cfg.dim, m = cfg.window, n = cfg.ngram, f = cfg.ffn_hidden, r = cfg.scale;
    const int64_t mult = cfg.size_multiple();

    CostReport rep;
    rep.config = cfg;
    rep.hr_w = hr_w;
    rep.hr_h = hr_h;
    rep.lr_w = (hr_w + r - 1) / r;
    rep.lr_h = (hr_h + r - 1) / r;
    rep.padded_w = (rep.lr_w + mult - 1) / mult * mult;
    rep.padded_h = (rep.lr_h + mult - 1) / mult * mult;
    const int64_t full = rep.padded_w * rep.padded_h;
    auto& L = rep.layers;

    L.push_back({"shallow", 27 * d + d, full * 27 * d});
    for (size_t s = 0; s < 4; ++s) {
        const std::string st = stage_name(s);
        const int64_t level = s < 3 ? static_cast<int64_t>(s) : 0;
        const int64_t hw = full >> (2 * level);
        const int64_t heads = cfg.heads[s];
        if (s == 1 || s == 2) {
            const int64_t cin = static_cast<int64_t>(s + 1) * d;
            L.push_back({st + ".cascade", cin * d + d, hw * cin * d});
        }
        for (int64_t k = 1; k <= cfg.depths[s]; ++k) {
            const std::string b = st + ".block" + std::to_string(k);
            const int64_t windows = hw / (m * m);
            const int64_t tokens = windows * n * n;
            L.push_back({b + ".ngram.unigram", (d / 2) * 2 * m * m + d / 2, windows * (d / 2) * 2 * m * m});
            // one set of weights, applied in both directions
            L.push_back({b + ".ngram.sliding_wsa", detail::attention_params(d / 2, heads, n, cfg.mode),
                         2 * (4 * tokens * (d / 2) * (d / 2) + 2 * n * n * tokens * (d / 2))});
            L.push_back({b + ".ngram.merge", d * d + d, windows * d * d});
            L.push_back({b + ".attn", detail::attention_params(d, heads, m, cfg.mode), 4 * hw * d * d + 2 * m * m * hw * d});
            L.push_back({b + ".norm1", 2 * d, 0});
            L.push_back({b + ".ffn", d * f + f + f * d + d, hw * 2 * d * f});
            L.push_back({b + ".norm2", 2 * d, 0});
        }
        if (s < 2) L.push_back({st + ".merge", 8 * d + 4 * d * d, (hw / 4) * 4 * d * d});
        if (s == 2) {
            const int64_t c = cfg.scdp_channels();
            L.push_back({"scdp.dw", 9 * c + c, full * 9 * c});
            L.push_back({"scdp.pw", c * d + d, full * c * d});
            L.push_back({"scdp.norm", 2 * d, 0});
        }
    }
    L.push_back({"dec.norm", 2 * d, 0});
    L.push_back({"recon.conv1", 9 * d * 3 * r * r + 3 * r * r, full * 9 * d * 3 * r * r});
    L.push_back({"recon.conv2", 81 + 3, full * r * r * 81});

    for (const auto& l : L) {
        rep.total_params += l.params;
        rep.total_mult_adds += l.mult_adds;
    }
    return rep;
}

inline int64_t count_params(const ModelConfig& cfg) { return analyze_cost(cfg, 1280, 720).total_params; }

inline int64_t count_multadds(const ModelConfig& cfg, int64_t hr_w, int64_t hr_h) {
    return analyze_cost(cfg, hr_w, hr_h).total_mult_adds;
}

/// Expected totals of the default network at a 1280x720 HR target.
struct TargetCost {
    int64_t params;
    double mult_adds_g;
};

inline std::optional<TargetCost> target_cost(int64_t scale) {
    switch (scale) {
        case 2: return TargetCost{998'384, 140.41};
        case 3: return TargetCost{1'007'039, 66.56};
        case 4: return TargetCost{1'019'156, 36.44};
        default: return std::nullopt;
    }
}

inline constexpr double kParamTolerance = 0.005;
inline constexpr double kMultAddTolerance = 0.015;

struct CostCheck {
    bool applicable = false;  // default config at 1280x720
    TargetCost target{};
    int64_t param_residual = 0;
    double mult_adds_residual_g = 0.0;
    double param_rel = 0.0;
    double mult_adds_rel = 0.0;
    bool params_ok = false;
    bool mult_adds_ok = false;
    bool ok() const { return applicable && params_ok && mult_adds_ok; }
};

inline CostCheck check_against_target(const CostReport& rep) {
    CostCheck c;
    const auto target = target_cost(rep.config.scale);
    c.applicable = target && rep.config == ModelConfig::standard(rep.config.scale) && rep.hr_w == 1280 &&
                   rep.hr_h == 720;
    if (!c.applicable) return c;
    c.target = *target;
    c.param_residual = rep.total_params - target->params;
    c.param_rel = static_cast<double>(c.param_residual) / static_cast<double>(target->params);
    const double g = static_cast<double>(rep.total_mult_adds) / 1e9;
    c.mult_adds_residual_g = g - target->mult_adds_g;
    c.mult_adds_rel = c.mult_adds_residual_g / target->mult_adds_g;
    c.params_ok = std::fabs(c.param_rel) <= kParamTolerance;
    c.mult_adds_ok = std::fabs(c.mult_adds_rel) <= kMultAddTolerance;
    return c;
}

inline nlohmann::json to_json_value(const CostReport& rep) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : rep.layers) layers.push_back({{"path", l.path}, {"params", l.params}, {"mult_adds", l.mult_adds}});
    nlohmann::json j = {{"config", to_json_value(rep.config)},
                        {"hr", {rep.hr_w, rep.hr_h}},
                        {"lr", {rep.lr_w, rep.lr_h}},
                        {"analyzed_lr", {rep.padded_w, rep.padded_h}},
                        {"padded", rep.padded()},
                        {"layers", std::move(layers)},
                        {"total_params", rep.total_params},
                        {"total_mult_adds", rep.total_mult_adds},
                        {"convention", kCostConvention}};
    const CostCheck c = check_against_target(rep);
    if (c.applicable)
        j["residual"] = {{"target_params", c.target.params},
                         {"target_mult_adds_g", c.target.mult_adds_g},
                         {"params", c.param_residual},
                         {"params_rel", c.param_rel},
                         {"mult_adds_g", c.mult_adds_residual_g},
                         {"mult_adds_rel", c.mult_adds_rel},
                         {"within_tolerance", c.ok()}};
    return j;
}

}  // namespace ngsr
