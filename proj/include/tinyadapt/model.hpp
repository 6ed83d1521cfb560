#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/ops.hpp"
#include "tinyadapt/rng.hpp"
#include "tinyadapt/tensor.hpp"

namespace tinyadapt {

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t vocab_size = 1024;
    std::size_t max_seq_len = 256;
    double rope_theta = 10000.0;
    double norm_eps = 1e-5;

    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 || max_seq_len == 0) {
            throw ConfigError("model dimensions must be positive");
        }
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (head_dim() % 2 != 0) throw ConfigError("head dimension must be even for rotary pairing");
        if (max_seq_len < 16) throw ConfigError("max_seq_len must be at least 16");
        if (!(rope_theta > 0.0)) throw ConfigError("rope_theta must be positive");
        if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Projection names inside a layer that LoRA may target.
inline const std::vector<std::string>& projection_names() {
    static const std::vector<std::string> names{"q", "k", "v", "o", "gate", "up", "down"};
    return names;
}

inline std::string layer_prefix(std::size_t layer) { return "layers." + std::to_string(layer) + "."; }

/// Full parameter name for projection `proj` ("q", "gate", ...) in `layer`.
inline std::string projection_param(std::size_t layer, const std::string& proj) {
    const bool attn = proj == "q" || proj == "k" || proj == "v" || proj == "o";
    return layer_prefix(layer) + (attn ? "attn." : "ffn.") + proj;
}

/// Every parameter name with its shape. Projections are stored [out x in].
inline std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
    std::map<std::string, Shape> shapes;
    const auto d = cfg.d_model, ff = cfg.d_ff, vocab = cfg.vocab_size;
    shapes["tok_embeddings"] = {vocab, d};
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto p = layer_prefix(l);
        shapes[p + "attn_norm"] = {d};
        shapes[p + "ffn_norm"] = {d};
        for (const char* n : {"q", "k", "v", "o"}) shapes[projection_param(l, n)] = {d, d};
        shapes[projection_param(l, "gate")] = {ff, d};
        shapes[projection_param(l, "up")] = {ff, d};
        shapes[projection_param(l, "down")] = {d, ff};
    }
    shapes["norm"] = {d};
    shapes["output"] = {d, vocab};
    return shapes;
}

inline bool is_norm_gain(const std::string& name) {
    return name == "norm" || name.ends_with("attn_norm") || name.ends_with("ffn_norm");
}

template <class T>
struct ModelWeightsT {
    ModelConfig config;
    std::map<std::string, TensorT<T>> params;

    const TensorT<T>& at(const std::string& name) const {
        const auto it = params.find(name);
        if (it == params.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    TensorT<T>& at(const std::string& name) {
        const auto it = params.find(name);
        if (it == params.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params) n += t.numel();
        return n;
    }

    /// Deep copy; every tensor becomes a fresh leaf.
    ModelWeightsT clone() const {
        ModelWeightsT out{config, {}};
        for (const auto& [name, t] : params) out.params.emplace(name, t.clone());
        return out;
    }

    template <class U>
    ModelWeightsT<U> cast() const {
        ModelWeightsT<U> out{config, {}};
        for (const auto& [name, t] : params) out.params.emplace(name, t.template cast<U>());
        return out;
    }

    void set_requires_grad(bool on) {
        for (auto& [_, t] : params) t.set_requires_grad(on);
    }
};

using ModelWeights = ModelWeightsT<float>;

/// Scaled-normal init (std 0.02) for matrices, ones for norm gains.
inline ModelWeights init_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelWeights w{cfg, {}};
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
        std::vector<float> values(shape_numel(shape));
        if (is_norm_gain(name)) {
            std::fill(values.begin(), values.end(), 1.0f);
        } else {
            for (auto& v : values) v = static_cast<float>(0.02 * rng.normal());
        }
        w.params.emplace(name, Tensor(shape, std::move(values)));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Forward pass

template <class T>
struct LoraPairT {
    TensorT<T> a;  // [r x in]
    TensorT<T> b;  // [out x r]
};

/// Low-rank deltas keyed by full parameter name, applied as
/// x W^T + scale * (x A^T) B^T.
template <class T>
struct LoraSetT {
    T scale = T(1);
    double dropout = 0.0;
    std::map<std::string, LoraPairT<T>> pairs;

    template <class U>
    LoraSetT<U> cast() const {
        LoraSetT<U> out;
        out.scale = static_cast<U>(scale);
        out.dropout = dropout;
        for (const auto& [n, p] : pairs) out.pairs.emplace(n, LoraPairT<U>{p.a.template cast<U>(), p.b.template cast<U>()});
        return out;
    }
};

using LoraSet = LoraSetT<float>;
using LoraPair = LoraPairT<float>;

struct ForwardOptions {
    bool training = false;
    Rng* rng = nullptr;  // required only for training-mode dropout
};

namespace model_detail {

template <class T>
TensorT<T> project(const ModelWeightsT<T>& w, const LoraSetT<T>* lora, const std::string& name,
                   const TensorT<T>& x, const ForwardOptions& opts) {
    auto y = linear(x, w.at(name));
    if (lora) {
        const auto it = lora->pairs.find(name);
        if (it != lora->pairs.end()) {
            TensorT<T> xin = x;
            if (opts.training && lora->dropout > 0.0) {
                if (!opts.rng) throw ConfigError("LoRA dropout needs an rng in training mode");
                xin = dropout(x, lora->dropout, *opts.rng);
            }
            const auto delta = linear(linear(xin, it->second.a), it->second.b);
            y = add(y, scale(delta, lora->scale));
        }
    }
    return y;
}

}  // namespace model_detail

/// Causal decoder forward pass: tokens[T] -> logits[T x V].
template <class T>
TensorT<T> forward(const ModelWeightsT<T>& w, std::span<const TokenId> tokens, const LoraSetT<T>* lora = nullptr,
                   const ForwardOptions& opts = {}) {
    const auto& cfg = w.config;
    if (tokens.empty()) throw LengthError("forward: empty token sequence");
    if (tokens.size() > cfg.max_seq_len) {
        throw LengthError("forward: " + std::to_string(tokens.size()) + " tokens exceed max_seq_len " +
                          std::to_string(cfg.max_seq_len));
    }
    const T eps = static_cast<T>(cfg.norm_eps);
    auto h = embedding(w.at("tok_embeddings"), tokens);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto p = layer_prefix(l);
        const auto a = rms_norm(h, w.at(p + "attn_norm"), eps);
        const auto q = rope(model_detail::project(w, lora, projection_param(l, "q"), a, opts), cfg.n_heads, cfg.rope_theta);
        const auto k = rope(model_detail::project(w, lora, projection_param(l, "k"), a, opts), cfg.n_heads, cfg.rope_theta);
        const auto v = model_detail::project(w, lora, projection_param(l, "v"), a, opts);
        const auto att = causal_attention(q, k, v, cfg.n_heads);
        h = add(h, model_detail::project(w, lora, projection_param(l, "o"), att, opts));

        const auto f = rms_norm(h, w.at(p + "ffn_norm"), eps);
        const auto gate = silu(model_detail::project(w, lora, projection_param(l, "gate"), f, opts));
        const auto up = model_detail::project(w, lora, projection_param(l, "up"), f, opts);
        h = add(h, model_detail::project(w, lora, projection_param(l, "down"), mul(gate, up), opts));
    }
    h = rms_norm(h, w.at("norm"), eps);
    return matmul(h, w.at("output"));
}

struct LoglikelihoodResult {
    double sum_logprob = 0.0;
    bool is_greedy = true;
};

/// Sum of log P(continuation[i] | prompt, continuation[<i]) plus whether every
/// continuation token is the argmax at its position.
template <class T>
LoglikelihoodResult loglikelihood(const ModelWeightsT<T>& w, std::span<const TokenId> prompt,
                                  std::span<const TokenId> continuation, const LoraSetT<T>* lora = nullptr) {
    if (prompt.empty()) throw DataError("loglikelihood: prompt must contain at least one token");
    if (continuation.empty()) throw DataError("loglikelihood: continuation must be non-empty");
    const std::size_t total = prompt.size() + continuation.size();
    if (total > w.config.max_seq_len) {
        throw LengthError("loglikelihood: " + std::to_string(total) + " tokens exceed max_seq_len " +
                          std::to_string(w.config.max_seq_len));
    }
    NoGradGuard no_grad;
    std::vector<TokenId> ids(prompt.begin(), prompt.end());
    ids.insert(ids.end(), continuation.begin(), continuation.end() - 1);
    const auto lp = log_softmax_rows(forward(w, ids, lora));
    const std::size_t vocab = lp.dim(1);
    LoglikelihoodResult out;
    for (std::size_t i = 0; i < continuation.size(); ++i) {
        const std::size_t row = prompt.size() - 1 + i;
        const auto* r = lp.data().data() + row * vocab;
        const auto tok = static_cast<std::size_t>(continuation[i]);
        if (tok >= vocab) throw IndexError("continuation id outside vocabulary");
        out.sum_logprob += static_cast<double>(r[tok]);
        const auto best = static_cast<std::size_t>(std::max_element(r, r + vocab) - r);
        if (best != tok) out.is_greedy = false;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

struct SamplingParams {
    double temperature = 0.0;
    double top_p = 1.0;
    std::size_t max_new_tokens = 64;
    std::set<TokenId> stop_ids;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
        if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
        if (max_new_tokens == 0) throw ConfigError("max_new_tokens must be >= 1");
    }
};

/// Draws one token: greedy at temperature 0 (lowest index on ties), otherwise
/// temperature-scaled softmax truncated to the smallest top-probability set
/// whose mass reaches top_p.
template <class T>
TokenId sample_token(std::span<const T> logits, const SamplingParams& p, Rng& rng) {
    if (logits.empty()) throw DimensionError("sample_token: empty logits");
    if (p.temperature == 0.0) {
        return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
    std::vector<double> probs(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp((static_cast<double>(logits[i]) - mx) / p.temperature);
        z += probs[i];
    }
    for (auto& v : probs) v /= z;
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < order.size()) {
        mass += probs[order[keep++]];
        if (mass >= p.top_p) break;
    }
    double u = rng.uniform() * mass;
    for (std::size_t i = 0; i < keep; ++i) {
        u -= probs[order[i]];
        if (u < 0.0) return static_cast<TokenId>(order[i]);
    }
    return static_cast<TokenId>(order[keep - 1]);
}

/// Autoregressive generation; returns only the new tokens, never the stop token.
template <class T>
std::vector<TokenId> generate(const ModelWeightsT<T>& w, std::span<const TokenId> prompt, const SamplingParams& p,
                              const LoraSetT<T>* lora = nullptr) {
    p.validate();
    if (prompt.empty()) throw DataError("generate: empty prompt");
    if (prompt.size() > w.config.max_seq_len) throw LengthError("generate: prompt exceeds max_seq_len");
    NoGradGuard no_grad;
    Rng rng(p.seed);
    std::vector<TokenId> context(prompt.begin(), prompt.end());
    std::vector<TokenId> produced;
    while (produced.size() < p.max_new_tokens && context.size() < w.config.max_seq_len) {
        const auto logits = forward(w, context, lora);
        const std::size_t vocab = logits.dim(1);
        const auto last = logits.data().subspan((logits.dim(0) - 1) * vocab, vocab);
        const TokenId next = sample_token<T>(last, p, rng);
        if (p.stop_ids.contains(next)) break;
        produced.push_back(next);
        context.push_back(next);
    }
    return produced;
}

}  // namespace tinyadapt
