#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "ngsr/attention.hpp"

namespace ngsr {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Architectural hyperparameters. Stages 0..2 are the encoder, stage 3 the decoder.
struct ModelConfig {
    int64_t dim = 64;
    int64_t window = 8;
    int64_t ngram = 2;
    std::array<int64_t, 4> depths{6, 4, 4, 6};
    std::array<int64_t, 4> heads{6, 4, 4, 6};
    int64_t ffn_hidden = 128;
    int64_t shift = 4;
    int64_t scale = 2;
    AttentionMode mode = AttentionMode::Cosine;

    /// Input extents must be multiples of this (three resolution levels).
    int64_t size_multiple() const { return window * 4; }

    /// Channels entering the SCDP depth-wise convolution: D + D/4 + D/16.
    int64_t scdp_channels() const { return dim + dim / 4 + dim / 16; }

    static ModelConfig standard(int64_t scale) {
        ModelConfig c;
        c.scale = scale;
        return c;
    }

    /// Small graph used by the straight-line oracle and the micro-fit.
    static ModelConfig micro(int64_t scale = 2) {
        ModelConfig c;
        c.dim = 16;
        c.window = 4;
        c.ngram = 2;
        c.depths = {1, 1, 1, 1};
        c.heads = {1, 1, 1, 1};
        c.ffn_hidden = 32;
        c.shift = 2;
        c.scale = scale;
        return c;
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
        if (dim < 16 || dim % 16 != 0) fail("D must be a positive multiple of 16, got " + std::to_string(dim));
        if (window < 1) fail("window size must be >= 1");
        if (ngram < 1 || ngram > 3) fail("N-Gram size must be in {1,2,3}, got " + std::to_string(ngram));
        if (scale < 2 || scale > 4) fail("scale must be in {2,3,4}, got " + std::to_string(scale));
        if (ffn_hidden < 1) fail("FFN hidden size must be >= 1");
        if (shift < 0 || shift >= window) fail("shift must lie in [0, M)");
        for (size_t s = 0; s < 4; ++s) {
            if (depths[s] < 1) fail("every stage needs at least one block");
            if (heads[s] < 1 || heads[s] > dim / 2)
                fail("stage " + std::to_string(s + 1) + " head count " + std::to_string(heads[s]) +
                     " must lie in [1, D/2]");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json_value(const ModelConfig& c) {
    return {{"dim", c.dim},
            {"window", c.window},
            {"ngram", c.ngram},
            {"depths", c.depths},
            {"heads", c.heads},
            {"ffn_hidden", c.ffn_hidden},
            {"shift", c.shift},
            {"scale", c.scale},
            {"attention", to_string(c.mode)}};
}

}  // namespace ngsr
