#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ngsr/config.hpp"
#include "ngsr/image.hpp"
#include "ngsr/metrics.hpp"
#include "ngsr/model.hpp"
#include "ngsr/weights.hpp"

namespace ngsr {

/// Simultaneous-perturbation stochastic approximation settings.
struct SpsaOptions {
    int64_t steps = 300;
    uint64_t seed = 42;
    double a = 0.02;       // step size numerator
    double c = 0.01;       // perturbation size numerator
    double big_a = 30.0;   // step size stability offset
    double alpha = 0.602;
    double gamma = 0.101;
};

struct MicrofitResult {
    std::vector<double> losses;  // losses[0] is the initial loss, then one per step
    bool diverged = false;
    double initial() const { return losses.front(); }
    double final_loss() const { return losses.back(); }
};

/// Smooth colored test pattern of size n x n with values inside [0.1, 0.9].
inline ImageBuffer synthetic_patch(int64_t n) {
    ImageBuffer img(n, n, 3);
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            const double u = static_cast<double>(x) / static_cast<double>(n), v = static_cast<double>(y) / static_cast<double>(n);
            img.at(0, y, x) = static_cast<float>(0.5 + 0.3 * std::sin(2.0 * M_PI * (u + 0.5 * v)));
            img.at(1, y, x) = static_cast<float>(0.5 + 0.3 * std::cos(2.0 * M_PI * (2.0 * v - u)));
            img.at(2, y, x) = static_cast<float>(0.3 + 0.4 * u * v + 0.1 * std::sin(6.0 * M_PI * u));
        }
    return img;
}

/// Fits the micro network to one HR patch and its bicubic LR by SPSA on the
/// L1 loss of the (unclamped) SR output. Returns the loss trace.
inline MicrofitResult microfit(const SpsaOptions& opt, const ImageBuffer& hr, const ModelConfig& cfg) {
    const NormStats stats = NormStats::neutral();
    const ImageBuffer lr = bicubic_resize(hr, 1.0 / static_cast<double>(cfg.scale));
    const Tensor input = normalize(lr, stats);
    const Tensor target = hr.to_tensor();

    WeightStore w = init_weights(cfg, opt.seed);
    std::vector<float> theta;
    for (const auto& [_, t] : w.entries()) theta.insert(theta.end(), t.data().begin(), t.data().end());

    auto loss_at = [&](const std::vector<float>& params) {
        size_t off = 0;
        for (const auto& entry : w.entries()) {
            Tensor& t = w.get_mut(entry.first);
            std::copy(params.begin() + static_cast<std::ptrdiff_t>(off),
                      params.begin() + static_cast<std::ptrdiff_t>(off + static_cast<size_t>(t.numel())), t.data().begin());
            off += static_cast<size_t>(t.numel());
        }
        const NgswinModel model(cfg, w);
        return l1_loss(model.forward_tensor(input), target);
    };

    MicrofitResult res;
    res.losses.push_back(loss_at(theta));
    std::mt19937_64 rng(opt.seed ^ 0x5eed5eedULL);
    std::bernoulli_distribution coin(0.5);
    std::vector<float> delta(theta.size()), plus(theta.size()), minus(theta.size());
    for (int64_t k = 0; k < opt.steps; ++k) {
        const double ak = opt.a / std::pow(static_cast<double>(k + 1) + opt.big_a, opt.alpha);
        const double ck = opt.c / std::pow(static_cast<double>(k + 1), opt.gamma);
        for (size_t i = 0; i < theta.size(); ++i) {
            delta[i] = coin(rng) ? 1.0f : -1.0f;
            plus[i] = theta[i] + static_cast<float>(ck) * delta[i];
            minus[i] = theta[i] - static_cast<float>(ck) * delta[i];
        }
        const double g = (loss_at(plus) - loss_at(minus)) / (2.0 * ck);
        for (size_t i = 0; i < theta.size(); ++i) theta[i] -= static_cast<float>(ak * g) * delta[i];
        res.losses.push_back(loss_at(theta));
        if (!std::isfinite(res.losses.back()) || res.losses.back() > 10.0 * res.initial()) {
            res.diverged = true;
            break;
        }
    }
    return res;
}

}  // namespace ngsr
