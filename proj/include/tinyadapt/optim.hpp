#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/lora.hpp"

namespace tinyadapt {

struct AdamWConfig {
    double learning_rate = 2e-4;
    double weight_decay = 0.0;
    std::optional<double> grad_clip_norm;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    struct Moments {
        std::vector<float> m;
        std::vector<float> v;
    };
    std::map<std::string, Moments> moments;
    std::uint64_t step = 0;
};

/// One decoupled-weight-decay Adam update over `params`, reading gradients
/// from the tensors (a missing gradient counts as zero). Global-norm clipping,
/// when configured, is applied before the moment update.
inline void adamw_step(std::vector<NamedTensor>& params, OptimizerState& state, const AdamWConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    double sq = 0.0;
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (const float g : t.grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter '" + name + "'");
            sq += static_cast<double>(g) * g;
        }
    }
    double clip = 1.0;
    if (cfg.grad_clip_norm && *cfg.grad_clip_norm > 0.0) {
        const double norm = std::sqrt(sq);
        if (norm > *cfg.grad_clip_norm) clip = *cfg.grad_clip_norm / norm;
    }

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for (auto& [name, t] : params) {
        auto& mom = state.moments[name];
        if (mom.m.empty()) {
            mom.m.assign(t.numel(), 0.0f);
            mom.v.assign(t.numel(), 0.0f);
        }
        if (mom.m.size() != t.numel()) throw DimensionError("optimizer moments do not match parameter '" + name + "'");
        auto values = t.mutable_data();
        const auto grad = t.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]) * clip;
            const double m = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
            mom.m[i] = static_cast<float>(m);
            mom.v[i] = static_cast<float>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
            values[i] = static_cast<float>(static_cast<double>(values[i]) * decay - cfg.learning_rate * update);
        }
    }
}

}  // namespace tinyadapt
