#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tinyadapt/encoding.hpp"
#include "tinyadapt/errors.hpp"
#include "tinyadapt/lora.hpp"
#include "tinyadapt/optim.hpp"
#include "tinyadapt/templating.hpp"
#include "tinyadapt/tokenizer.hpp"

namespace tinyadapt {

struct TrainConfig {
    double learning_rate = 2e-4;
    std::size_t batch_size = 4;
    std::size_t epochs = 1;
    std::optional<double> grad_clip_norm;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    std::size_t max_seq_len = 256;
    LossMaskMode loss_mask_mode = LossMaskMode::response_only;

    static TrainConfig sft_defaults() { return {}; }

    static TrainConfig dpo_defaults() {
        TrainConfig c;
        c.learning_rate = 5e-5;
        c.batch_size = 4;
        c.epochs = 1;
        return c;
    }

    static TrainConfig adaptation_defaults() {
        TrainConfig c;
        c.learning_rate = 2e-4;
        c.epochs = 3;
        c.loss_mask_mode = LossMaskMode::full_sequence;
        return c;
    }

    AdamWConfig optimizer() const {
        AdamWConfig o;
        o.learning_rate = learning_rate;
        o.weight_decay = weight_decay;
        o.grad_clip_norm = grad_clip_norm;
        return o;
    }

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (epochs == 0) throw ConfigError("epochs must be positive");
        if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    }
};

struct StepLog {
    std::string stage;
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> margin;           // DPO: batch mean implicit-reward margin
    std::optional<double> reward_accuracy;  // DPO: fraction of pairs with margin > 0
};

using StepCallback = std::function<void(const StepLog&)>;

struct TrainResult {
    std::vector<StepLog> log;
    std::size_t steps = 0;
};

// ---------------------------------------------------------------------------
// Losses

/// Next-token cross entropy over the supervised region of `ex`.
inline Tensor sft_loss(const AdaptedModel& m, const TokenizedExample& ex, const ForwardOptions& opts = {}) {
    if (ex.ids.size() < 2 || ex.prompt_len == 0 || ex.prompt_len >= ex.ids.size()) {
        throw DataError("example has no supervised positions");
    }
    const std::span<const TokenId> ids(ex.ids);
    const auto logits = forward(m, ids.first(ids.size() - 1), opts);
    std::vector<bool> mask(ids.size() - 1);
    for (std::size_t t = 0; t < mask.size(); ++t) mask[t] = t + 1 >= ex.prompt_len;
    return cross_entropy_next_token(logits, ids.subspan(1), mask);
}

inline Tensor sft_loss(const AdaptedModel& m, const Vocabulary& v, const SftRecord& r, LossMaskMode mode) {
    return sft_loss(m, encode_sft(v, r, mode, m.config().max_seq_len));
}

inline Tensor sft_loss(const AdaptedModel& m, const Vocabulary& v, const RawDoc& d) {
    return sft_loss(m, encode_raw(v, d, m.config().max_seq_len));
}

/// Summed log-probability of the supervised region (a graph node).
inline Tensor completion_logprob(const AdaptedModel& m, const TokenizedExample& ex) {
    const std::span<const TokenId> ids(ex.ids);
    const auto lp = log_softmax_rows(forward(m, ids.first(ids.size() - 1)));
    std::vector<bool> mask(ids.size() - 1);
    for (std::size_t t = 0; t < mask.size(); ++t) mask[t] = t + 1 >= ex.prompt_len;
    return pick_sum(lp, ids.subspan(1), mask);
}

/// exp(mean next-token NLL) over all supervised tokens of `examples`.
inline double perplexity(const AdaptedModel& m, const std::vector<TokenizedExample>& examples) {
    if (examples.empty()) throw DataError("perplexity needs at least one example");
    NoGradGuard no_grad;
    double nll = 0.0;
    std::size_t tokens = 0;
    for (const auto& ex : examples) {
        nll += -static_cast<double>(completion_logprob(m, ex).item());
        tokens += ex.supervised_count();
    }
    return std::exp(nll / static_cast<double>(tokens));
}

struct PreferenceLogps {
    double policy_chosen = 0.0;
    double policy_rejected = 0.0;
    double ref_chosen = 0.0;
    double ref_rejected = 0.0;
};

struct DpoLossResult {
    double loss = 0.0;
    double margin = 0.0;
};

/// margin = (policy_chosen - ref_chosen) - (policy_rejected - ref_rejected);
/// loss = -log sigmoid(beta * margin).
inline DpoLossResult dpo_loss(const PreferenceLogps& lp, double beta) {
    for (const double v : {lp.policy_chosen, lp.policy_rejected, lp.ref_chosen, lp.ref_rejected}) {
        if (!std::isfinite(v)) throw NumericError("dpo_loss: non-finite log-probability");
    }
    const double margin = (lp.policy_chosen - lp.ref_chosen) - (lp.policy_rejected - lp.ref_rejected);
    const double z = beta * margin;
    const double loss = -(std::min(z, 0.0) - std::log1p(std::exp(-std::abs(z))));
    return {loss, margin};
}

/// Differentiable form of dpo_loss; the reference terms are constants.
inline Tensor dpo_loss(const Tensor& policy_chosen, const Tensor& policy_rejected, double ref_chosen,
                       double ref_rejected, double beta) {
    const auto diff = sub(policy_chosen, policy_rejected);
    const auto margin = add(diff, Tensor::scalar(static_cast<float>(ref_rejected - ref_chosen)));
    return scale(log_sigmoid(scale(margin, static_cast<float>(beta))), -1.0f);
}

// ---------------------------------------------------------------------------
// Stage loops

namespace training_detail {

/// Shuffled mini-batches over `n` items; `batch_loss(indices)` returns the
/// batch loss node and fills the extra log fields.
inline TrainResult run_loop(const std::string& stage, AdaptedModel& m, std::size_t n, const TrainConfig& cfg,
                            const std::function<Tensor(const std::vector<std::size_t>&, StepLog&)>& batch_loss,
                            const StepCallback& on_step) {
    cfg.validate();
    auto params = trainable_parameters(m);
    OptimizerState state;
    const auto opt = cfg.optimizer();
    Rng rng(cfg.seed);
    TrainResult result;
    std::vector<std::size_t> order(n);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch_size)));
            for (auto& [_, t] : params) t.zero_grad();
            StepLog entry;
            entry.stage = stage;
            auto loss = batch_loss(batch, entry);
            loss.backward();
            adamw_step(params, state, opt);
            entry.step = ++result.steps;
            entry.loss = static_cast<double>(loss.item());
            entry.lr = cfg.learning_rate;
            if (on_step) on_step(entry);
            result.log.push_back(std::move(entry));
        }
    }
    for (auto& [_, t] : params) t.zero_grad();
    return result;
}

}  // namespace training_detail

/// Next-token training over pre-tokenized examples (shared by SFT, the
/// adaptation stage and the pretraining warm-up).
inline TrainResult train_on_examples(const std::string& stage, AdaptedModel& m,
                                     const std::vector<TokenizedExample>& examples, const TrainConfig& cfg,
                                     const StepCallback& on_step = {}) {
    if (examples.empty()) throw DataError(stage + ": dataset is empty");
    Rng dropout_rng(cfg.seed ^ 0x5DEECE66DULL);
    return training_detail::run_loop(
        stage, m, examples.size(), cfg,
        [&](const std::vector<std::size_t>& batch, StepLog&) {
            std::vector<Tensor> losses;
            ForwardOptions opts{true, &dropout_rng};
            for (const auto i : batch) losses.push_back(sft_loss(m, examples[i], opts));
            return scale(add_scalars(losses), 1.0f / static_cast<float>(losses.size()));
        },
        on_step);
}

inline std::vector<TokenizedExample> encode_sft_dataset(const Vocabulary& v, const std::vector<SftRecord>& records,
                                                        LossMaskMode mode, std::size_t max_seq_len) {
    std::vector<TokenizedExample> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(encode_sft(v, normalize(r), mode, max_seq_len));
    return out;
}

inline std::vector<TokenizedExample> encode_raw_corpus(const Vocabulary& v, const std::vector<RawDoc>& docs,
                                                       std::size_t max_seq_len) {
    std::vector<TokenizedExample> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(encode_raw(v, d, max_seq_len));
    return out;
}

inline std::size_t effective_seq_len(const AdaptedModel& m, const TrainConfig& cfg) {
    return std::min(cfg.max_seq_len, m.config().max_seq_len);
}

inline TrainResult run_sft(AdaptedModel& m, const Vocabulary& v, const std::vector<SftRecord>& dataset,
                           const TrainConfig& cfg, const StepCallback& on_step = {}) {
    if (dataset.empty()) throw DataError("sft: dataset is empty");
    const auto examples = encode_sft_dataset(v, dataset, cfg.loss_mask_mode, effective_seq_len(m, cfg));
    return train_on_examples("sft", m, examples, cfg, on_step);
}

// ---------------------------------------------------------------------------
// Preference optimization

struct PreferenceRecord {
    PreferencePrompt prompt;
    std::string chosen;
    std::string rejected;
    std::string source;
    std::optional<double> score;
};

struct DpoConfig {
    double beta = 0.1;
};

struct PreferencePair {
    TokenizedExample chosen;
    TokenizedExample rejected;
};

inline std::vector<PreferencePair> encode_preferences(const Vocabulary& v, const std::vector<PreferenceRecord>& records,
                                                      std::size_t max_seq_len) {
    std::vector<PreferencePair> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (r.chosen == r.rejected) throw DataError("preference record has identical chosen and rejected answers");
        out.push_back({encode_completion(v, r.prompt, r.chosen, max_seq_len),
                       encode_completion(v, r.prompt, r.rejected, max_seq_len)});
    }
    return out;
}

inline std::pair<double, double> pair_logps(const AdaptedModel& m, const PreferencePair& p) {
    NoGradGuard no_grad;
    return {static_cast<double>(completion_logprob(m, p.chosen).item()),
            static_cast<double>(completion_logprob(m, p.rejected).item())};
}

/// Implicit-reward margin of every pair under (policy, reference).
inline std::vector<double> preference_margins(const AdaptedModel& policy, const AdaptedModel& reference,
                                              const std::vector<PreferencePair>& pairs) {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        const auto [pc, pr] = pair_logps(policy, p);
        const auto [rc, rr] = pair_logps(reference, p);
        out.push_back(dpo_loss({pc, pr, rc, rr}, 0.0).margin);
    }
    return out;
}

inline void require_same_structure(const AdaptedModel& a, const AdaptedModel& b) {
    if (!(a.config() == b.config())) throw ConfigError("reference model config differs from the policy");
    if (a.base.params.size() != b.base.params.size()) throw ConfigError("reference model parameter set differs");
    for (const auto& [name, t] : a.base.params) {
        const auto it = b.base.params.find(name);
        if (it == b.base.params.end() || it->second.shape() != t.shape()) {
            throw ConfigError("reference model differs from the policy at '" + name + "'");
        }
    }
}

struct DpoResult {
    TrainResult train;
    double mean_margin_before = 0.0;
    double mean_margin_after = 0.0;
};

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// DPO against a frozen reference; reference log-probabilities are computed
/// once up front since the reference never changes.
inline DpoResult run_dpo(AdaptedModel& policy, const AdaptedModel& reference, const Vocabulary& v,
                         const std::vector<PreferenceRecord>& dataset, const TrainConfig& cfg, const DpoConfig& dpo,
                         const StepCallback& on_step = {}) {
    require_same_structure(policy, reference);
    if (dataset.empty()) throw DataError("dpo: dataset is empty");
    if (!(dpo.beta >= 0.0)) throw ConfigError("dpo beta must be >= 0");
    const auto pairs = encode_preferences(v, dataset, effective_seq_len(policy, cfg));
    std::vector<std::pair<double, double>> ref_logps;
    ref_logps.reserve(pairs.size());
    for (const auto& p : pairs) ref_logps.push_back(pair_logps(reference, p));

    DpoResult result;
    result.mean_margin_before = mean_of(preference_margins(policy, reference, pairs));
    result.train = training_detail::run_loop(
        "dpo", policy, pairs.size(), cfg,
        [&](const std::vector<std::size_t>& batch, StepLog& entry) {
            std::vector<Tensor> losses;
            double margin_sum = 0.0;
            std::size_t wins = 0;
            for (const auto i : batch) {
                const auto pc = completion_logprob(policy, pairs[i].chosen);
                const auto pr = completion_logprob(policy, pairs[i].rejected);
                const auto [rc, rr] = ref_logps[i];
                const double margin = dpo_loss({pc.item(), pr.item(), rc, rr}, dpo.beta).margin;
                margin_sum += margin;
                wins += margin > 0.0 ? 1 : 0;
                losses.push_back(dpo_loss(pc, pr, rc, rr, dpo.beta));
            }
            entry.margin = margin_sum / static_cast<double>(batch.size());
            entry.reward_accuracy = static_cast<double>(wins) / static_cast<double>(batch.size());
            return scale(add_scalars(losses), 1.0f / static_cast<float>(losses.size()));
        },
        on_step);
    result.mean_margin_after = mean_of(preference_margins(policy, reference, pairs));
    return result;
}

/// Drops records scoring below min_score (unscored records pass) and records
/// from excluded sources.
inline std::vector<PreferenceRecord> filter_preferences(const std::vector<PreferenceRecord>& records, double min_score,
                                                        const std::set<std::string>& excluded_sources) {
    std::vector<PreferenceRecord> out;
    for (const auto& r : records) {
        if (excluded_sources.contains(r.source)) continue;
        if (r.score && *r.score < min_score) continue;
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Language adaptation

struct AdaptationResult {
    TrainResult train;
    double heldout_ppl_before = 0.0;
    double heldout_ppl_after = 0.0;
    std::optional<double> source_ppl_before;
    std::optional<double> source_ppl_after;
};

/// Continued next-token training on raw documents; held-out perplexity is
/// measured before and after, with the source language reported alongside
/// when given.
inline AdaptationResult run_adaptation(AdaptedModel& m, const Vocabulary& v, const std::vector<RawDoc>& corpus,
                                       const std::vector<RawDoc>& heldout, const TrainConfig& cfg,
                                       const std::vector<RawDoc>& source_heldout = {},
                                       const StepCallback& on_step = {}) {
    if (corpus.empty()) throw DataError("adapt: corpus is empty");
    if (heldout.empty()) throw DataError("adapt: held-out corpus is empty");
    const auto len = effective_seq_len(m, cfg);
    const auto train = encode_raw_corpus(v, corpus, len);
    const auto held = encode_raw_corpus(v, heldout, len);
    const auto source = source_heldout.empty() ? std::vector<TokenizedExample>{} : encode_raw_corpus(v, source_heldout, len);

    AdaptationResult r;
    r.heldout_ppl_before = perplexity(m, held);
    if (!source.empty()) r.source_ppl_before = perplexity(m, source);
    r.train = train_on_examples("adapt", m, train, cfg, on_step);
    r.heldout_ppl_after = perplexity(m, held);
    if (!source.empty()) r.source_ppl_after = perplexity(m, source);
    return r;
}

}  // namespace tinyadapt
