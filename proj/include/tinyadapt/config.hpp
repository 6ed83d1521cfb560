#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/lora.hpp"
#include "tinyadapt/model.hpp"
#include "tinyadapt/training.hpp"

namespace tinyadapt {

enum class AdaptMode { adapters, full };

struct LoraSection {
    LoraConfig lora;
    bool quantize_base = true;
    std::size_t block_size = 64;
};

struct DpoSection {
    TrainConfig train = TrainConfig::dpo_defaults();
    DpoConfig dpo;
    double min_score = 0.0;
    std::set<std::string> excluded_sources{"toxic-dpo-v0.2"};
};

struct AdaptSection {
    TrainConfig train = TrainConfig::adaptation_defaults();
    AdaptMode mode = AdaptMode::adapters;
};

struct SamplingSection {
    double temperature = 0.0;
    double top_p = 1.0;
    std::size_t max_new_tokens = 64;
};

/// Record caps per dataset kind; the full-scale run used roughly 100k SFT
/// prompts, 40k preference pairs and 100k raw documents.
struct RecordLimits {
    std::size_t sft = 512;
    std::size_t preference = 256;
    std::size_t raw = 1024;
};

struct Paths {
    std::filesystem::path vocab = "vocab.json";
    std::filesystem::path pretrain_data;
    std::filesystem::path pretrain_sft_data;
    std::filesystem::path sft_data;
    std::filesystem::path dpo_data;
    std::filesystem::path adapt_data;
    std::filesystem::path adapt_heldout;
    std::filesystem::path source_heldout;
    std::filesystem::path tasks;
    std::filesystem::path checkpoints = "checkpoints";
    std::filesystem::path reports = "reports";
};

struct AppConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    std::size_t vocab_size = 1024;
    LoraSection lora;
    TrainConfig pretrain = [] {
        TrainConfig c;
        c.learning_rate = 3e-3;
        c.epochs = 4;
        c.loss_mask_mode = LossMaskMode::full_sequence;
        return c;
    }();
    TrainConfig sft = TrainConfig::sft_defaults();
    DpoSection dpo;
    AdaptSection adapt;
    SamplingSection sampling;
    RecordLimits max_records;
    Paths paths;

    /// Training config for a stage with the run seed folded in.
    TrainConfig seeded(const TrainConfig& c, std::uint64_t stage) const {
        TrainConfig out = c;
        out.seed = Rng::mix(seed ^ (stage * 0x9E3779B97F4A7C15ULL));
        return out;
    }
};

namespace config_detail {

using json = nlohmann::json;

/// Strict object view: every key read is recorded, and finish() rejects the
/// rest as unknown.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + " has the wrong type");
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    const json& sub(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [k, _] : j_.items()) {
            if (!seen_.contains(k)) throw ConfigError("unknown config key '" + where_ + "." + k + "'");
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline LossMaskMode parse_mask(const std::string& s) {
    if (s == "response_only") return LossMaskMode::response_only;
    if (s == "full_sequence") return LossMaskMode::full_sequence;
    throw ConfigError("unknown loss_mask '" + s + "'");
}

inline void read_train(Section& s, TrainConfig& c) {
    s.read("learning_rate", c.learning_rate);
    s.read("batch_size", c.batch_size);
    s.read("epochs", c.epochs);
    s.read("weight_decay", c.weight_decay);
    s.read("max_seq_len", c.max_seq_len);
    if (s.has("grad_clip_norm")) {
        double clip = 0.0;
        s.read("grad_clip_norm", clip);
        c.grad_clip_norm = clip;
    }
    if (s.has("loss_mask")) {
        std::string mask;
        s.read("loss_mask", mask);
        c.loss_mask_mode = parse_mask(mask);
    }
    c.validate();
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
    if (p.empty() || p.is_absolute()) return p;
    return (base / p).lexically_normal();
}

}  // namespace config_detail

/// Parses a config document; relative paths resolve against `base_dir`.
inline AppConfig parse_app_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    using config_detail::Section;
    AppConfig c;
    Section root(j, "config");
    root.read("seed", c.seed);
    root.read("vocab_size", c.vocab_size);
    if (root.has("model")) {
        Section s(root.sub("model"), "model");
        s.read("n_layers", c.model.n_layers);
        s.read("d_model", c.model.d_model);
        s.read("n_heads", c.model.n_heads);
        s.read("d_ff", c.model.d_ff);
        s.read("vocab_size", c.model.vocab_size);
        s.read("max_seq_len", c.model.max_seq_len);
        s.read("rope_theta", c.model.rope_theta);
        s.read("norm_eps", c.model.norm_eps);
        s.finish();
        if (!root.has("vocab_size")) c.vocab_size = c.model.vocab_size;
    } else {
        c.model.vocab_size = c.vocab_size;
    }
    if (c.vocab_size != c.model.vocab_size) throw ConfigError("vocab_size and model.vocab_size disagree");
    c.model.validate();
    if (root.has("lora")) {
        Section s(root.sub("lora"), "lora");
        s.read("rank", c.lora.lora.rank);
        s.read("alpha", c.lora.lora.alpha);
        s.read("targets", c.lora.lora.targets);
        s.read("dropout", c.lora.lora.dropout);
        s.read("quantize_base", c.lora.quantize_base);
        s.read("block_size", c.lora.block_size);
        s.finish();
    }
    c.lora.lora.validate();
    if (c.lora.block_size < 2) throw ConfigError("lora.block_size must be at least 2");
    if (root.has("pretrain")) {
        Section s(root.sub("pretrain"), "pretrain");
        config_detail::read_train(s, c.pretrain);
        s.finish();
    }
    if (root.has("sft")) {
        Section s(root.sub("sft"), "sft");
        config_detail::read_train(s, c.sft);
        s.finish();
    }
    if (root.has("dpo")) {
        Section s(root.sub("dpo"), "dpo");
        config_detail::read_train(s, c.dpo.train);
        s.read("beta", c.dpo.dpo.beta);
        s.read("min_score", c.dpo.min_score);
        s.read("excluded_sources", c.dpo.excluded_sources);
        s.finish();
        if (!(c.dpo.dpo.beta >= 0.0)) throw ConfigError("dpo.beta must be >= 0");
    }
    if (root.has("adapt")) {
        Section s(root.sub("adapt"), "adapt");
        config_detail::read_train(s, c.adapt.train);
        std::string mode = "adapters";
        s.read("mode", mode);
        if (mode == "adapters") {
            c.adapt.mode = AdaptMode::adapters;
        } else if (mode == "full") {
            c.adapt.mode = AdaptMode::full;
        } else {
            throw ConfigError("adapt.mode must be 'adapters' or 'full'");
        }
        s.finish();
    }
    if (root.has("sampling")) {
        Section s(root.sub("sampling"), "sampling");
        s.read("temperature", c.sampling.temperature);
        s.read("top_p", c.sampling.top_p);
        s.read("max_new_tokens", c.sampling.max_new_tokens);
        s.finish();
    }
    if (root.has("max_records")) {
        Section s(root.sub("max_records"), "max_records");
        s.read("sft", c.max_records.sft);
        s.read("preference", c.max_records.preference);
        s.read("raw", c.max_records.raw);
        s.finish();
    }
    if (root.has("paths")) {
        Section s(root.sub("paths"), "paths");
        auto path = [&](const char* key, std::filesystem::path& out) {
            std::string v = out.string();
            s.read(key, v);
            out = v;
        };
        path("vocab", c.paths.vocab);
        path("pretrain_data", c.paths.pretrain_data);
        path("pretrain_sft_data", c.paths.pretrain_sft_data);
        path("sft_data", c.paths.sft_data);
        path("dpo_data", c.paths.dpo_data);
        path("adapt_data", c.paths.adapt_data);
        path("adapt_heldout", c.paths.adapt_heldout);
        path("source_heldout", c.paths.source_heldout);
        path("tasks", c.paths.tasks);
        path("checkpoints", c.paths.checkpoints);
        path("reports", c.paths.reports);
        s.finish();
    }
    root.finish();
    for (auto* p : {&c.paths.vocab, &c.paths.pretrain_data, &c.paths.pretrain_sft_data, &c.paths.sft_data, &c.paths.dpo_data, &c.paths.adapt_data,
                    &c.paths.adapt_heldout, &c.paths.source_heldout, &c.paths.tasks, &c.paths.checkpoints,
                    &c.paths.reports}) {
        *p = config_detail::resolve(base_dir, *p);
    }
    return c;
}

inline AppConfig load_app_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_app_config(j, path.parent_path());
}

/// Throws ConfigError naming the key when a required path is unset or absent.
inline void require_path(const std::filesystem::path& p, const std::string& key) {
    if (p.empty()) throw ConfigError("paths." + key + " is not set");
    if (!std::filesystem::exists(p)) throw ConfigError("paths." + key + " does not exist: " + p.string());
}

}  // namespace tinyadapt
