#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/model.hpp"
#include "tinyadapt/nf4.hpp"
#include "tinyadapt/ops.hpp"

namespace tinyadapt {

struct LoraConfig {
    std::size_t rank = 8;
    double alpha = 16.0;
    /// Short projection names applied in every layer: q k v o gate up down.
    std::vector<std::string> targets{"q", "k", "v", "o"};
    double dropout = 0.0;

    double scale() const { return alpha / static_cast<double>(rank); }

    void validate() const {
        if (rank == 0) throw ConfigError("lora rank must be positive");
        if (!(alpha > 0.0)) throw ConfigError("lora alpha must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("lora dropout must be in [0, 1)");
        if (targets.empty()) throw ConfigError("lora target set is empty");
        const auto& known = projection_names();
        for (const auto& t : targets) {
            if (std::find(known.begin(), known.end(), t) == known.end()) {
                throw ConfigError("unknown LoRA target '" + t + "'");
            }
        }
    }

    bool operator==(const LoraConfig&) const = default;
};

/// A frozen base plus optional trainable low-rank adapters. With no adapters
/// this is just a dense model whose weights may be trained in full.
///
/// When the base is quantized, `quantized` holds the NF4 form of each target
/// and `base` holds its dequantized values; both are immutable.
struct AdaptedModel {
    ModelWeights base;
    std::map<std::string, QuantizedMatrix> quantized;
    std::optional<LoraConfig> lora;
    LoraSet adapters;

    const ModelConfig& config() const { return base.config; }
    bool has_adapters() const { return lora.has_value(); }
    const LoraSet* lora_set() const { return has_adapters() ? &adapters : nullptr; }

    static AdaptedModel dense(ModelWeights w) {
        AdaptedModel m;
        m.base = std::move(w);
        return m;
    }

    std::size_t trainable_count() const {
        if (!has_adapters()) return base.parameter_count();
        std::size_t n = 0;
        for (const auto& [_, p] : adapters.pairs) n += p.a.numel() + p.b.numel();
        return n;
    }
};

inline Tensor forward(const AdaptedModel& m, std::span<const TokenId> tokens, const ForwardOptions& opts = {}) {
    return forward(m.base, tokens, m.lora_set(), opts);
}

/// base + (alpha / r) * (B x A)
template <class T>
TensorT<T> effective_weight(const TensorT<T>& base, const TensorT<T>& a, const TensorT<T>& b, double alpha,
                            std::size_t rank) {
    if (rank == 0) throw ConfigError("effective_weight: rank must be positive");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != rank || b.dim(1) != rank) {
        throw DimensionError("effective_weight: A " + shape_str(a.shape()) + " / B " + shape_str(b.shape()) +
                             " do not have rank " + std::to_string(rank));
    }
    const auto delta = matmul(b, a);
    if (delta.shape() != base.shape()) {
        throw DimensionError("effective_weight: B x A is " + shape_str(delta.shape()) + " but base is " +
                             shape_str(base.shape()));
    }
    return add(base, scale(delta, static_cast<T>(alpha / static_cast<double>(rank))));
}

/// Full parameter names addressed by the config's short target names.
inline std::vector<std::string> lora_target_params(const ModelConfig& mc, const LoraConfig& cfg) {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < mc.n_layers; ++l)
        for (const auto& t : cfg.targets) names.push_back(projection_param(l, t));
    return names;
}

/// Copy of `w` whose named matrices went through an NF4 round trip.
inline ModelWeights quantize_targets(const ModelWeights& w, const std::vector<std::string>& names,
                                     std::size_t block_size,
                                     std::map<std::string, QuantizedMatrix>* codes_out = nullptr) {
    ModelWeights out = w.clone();
    for (const auto& name : names) {
        auto q = quantize_nf4(w.at(name), block_size);
        out.at(name) = dequantize_nf4(q);
        if (codes_out) (*codes_out)[name] = std::move(q);
    }
    return out;
}

/// Freezes `w`, optionally stores the targeted matrices as NF4, and adds
/// A ~ N(0, 0.02), B = 0 adapters so the adapted model starts identical to
/// its (possibly quantized) base.
inline AdaptedModel attach_lora(const ModelWeights& w, const LoraConfig& cfg, bool quantize_base, Rng& rng,
                                std::size_t block_size = 64) {
    cfg.validate();
    const auto targets = lora_target_params(w.config, cfg);
    AdaptedModel m;
    if (quantize_base) {
        m.base = quantize_targets(w, targets, block_size, &m.quantized);
    } else {
        m.base = w.clone();
    }
    m.base.set_requires_grad(false);
    m.lora = cfg;
    m.adapters.scale = static_cast<float>(cfg.scale());
    m.adapters.dropout = cfg.dropout;
    for (const auto& name : targets) {
        const auto& wt = m.base.at(name);
        const std::size_t out_dim = wt.dim(0), in_dim = wt.dim(1);
        if (cfg.rank > std::min(out_dim, in_dim)) {
            throw ConfigError("lora rank " + std::to_string(cfg.rank) + " exceeds dims of '" + name + "' " +
                              shape_str(wt.shape()));
        }
        std::vector<float> a(cfg.rank * in_dim);
        for (auto& v : a) v = static_cast<float>(0.02 * rng.normal());
        m.adapters.pairs.emplace(name, LoraPair{Tensor({cfg.rank, in_dim}, std::move(a), true),
                                                Tensor::zeros({out_dim, cfg.rank}, true)});
    }
    return m;
}

/// Dense weights with every delta folded in.
inline ModelWeights merge_lora(const AdaptedModel& m) {
    ModelWeights out = m.base.clone();
    if (!m.has_adapters()) return out;
    NoGradGuard no_grad;
    for (const auto& [name, pair] : m.adapters.pairs) {
        out.at(name) = effective_weight(m.base.at(name), pair.a, pair.b, m.lora->alpha, m.lora->rank).detach();
    }
    out.set_requires_grad(false);
    return out;
}

/// Independent, fully frozen copy (used as the DPO reference policy).
inline AdaptedModel snapshot(const AdaptedModel& m) {
    AdaptedModel s;
    s.base = m.base.clone();
    s.base.set_requires_grad(false);
    s.quantized = m.quantized;
    s.lora = m.lora;
    s.adapters.scale = m.adapters.scale;
    s.adapters.dropout = m.adapters.dropout;
    for (const auto& [name, p] : m.adapters.pairs) s.adapters.pairs.emplace(name, LoraPair{p.a.detach(), p.b.detach()});
    return s;
}

using NamedTensor = std::pair<std::string, Tensor>;

/// Parameters the optimizer may touch: the adapters when present, otherwise
/// every base weight. Sets requires_grad accordingly.
inline std::vector<NamedTensor> trainable_parameters(AdaptedModel& m) {
    std::vector<NamedTensor> out;
    if (m.has_adapters()) {
        m.base.set_requires_grad(false);
        for (auto& [name, p] : m.adapters.pairs) {
            p.a.set_requires_grad(true);
            p.b.set_requires_grad(true);
            out.emplace_back("lora." + name + ".A", p.a);
            out.emplace_back("lora." + name + ".B", p.b);
        }
    } else {
        if (!m.quantized.empty()) throw ConfigError("a quantized base cannot be trained in full");
        for (auto& [name, t] : m.base.params) {
            t.set_requires_grad(true);
            out.emplace_back(name, t);
        }
    }
    return out;
}

}  // namespace tinyadapt
