#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tinyadapt/checkpoint.hpp"
#include "tinyadapt/config.hpp"
#include "tinyadapt/dataset.hpp"
#include "tinyadapt/evaluation.hpp"
#include "tinyadapt/lora.hpp"
#include "tinyadapt/tokenizer.hpp"
#include "tinyadapt/toydata.hpp"
#include "tinyadapt/training.hpp"

namespace tinyadapt {

// ---------------------------------------------------------------------------
// Chat REPL

struct ChatOptions {
    std::string system_prompt{kDefaultSystemPrompt};
    SamplingParams sampling;
};

/// Reads user lines from `in` until EOF or "/quit". "/reset" clears the
/// history. When the conversation no longer fits the context window the
/// oldest exchanges are dropped and the user is told so.
inline std::size_t run_chat(const AdaptedModel& model, const Vocabulary& vocab, const ChatOptions& opts,
                            std::istream& in, std::ostream& out) {
    std::vector<ChatMessage> history;
    const std::size_t max_len = model.config().max_seq_len;
    std::size_t turns = 0;
    std::string line;
    while (true) {
        out << "> " << std::flush;
        if (!std::getline(in, line)) break;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto text = templating_detail::trim(line);
        if (text.empty()) continue;
        if (text == "/quit") break;
        if (text == "/reset") {
            history.clear();
            out << "[history cleared]\n";
            continue;
        }

        history.push_back({Role::user, text});
        auto build = [&] {
            std::vector<ChatMessage> msgs;
            if (!opts.system_prompt.empty()) msgs.push_back({Role::system, opts.system_prompt});
            msgs.insert(msgs.end(), history.begin(), history.end());
            return encode_chat(vocab, msgs, true);
        };
        auto ids = build();
        bool dropped = false;
        while (ids.size() + opts.sampling.max_new_tokens > max_len && history.size() > 1) {
            history.erase(history.begin(), history.begin() + 2);
            dropped = true;
            ids = build();
        }
        if (dropped) out << "[context full: oldest turns dropped]\n";
        if (ids.size() >= max_len) {
            history.pop_back();
            out << "[message too long for the context window]\n";
            continue;
        }

        SamplingParams p = opts.sampling;
        p.stop_ids.insert(vocab.eot());
        p.seed = Rng::mix(opts.sampling.seed + turns);
        const auto reply_ids = generate(model.base, ids, p, model.lora_set());
        std::string reply = vocab.decode(reply_ids);
        if (const auto cut = reply.find(kEotId); cut != std::string::npos) reply.resize(cut);
        history.push_back({Role::assistant, reply});
        out << reply << "\n";
        ++turns;
    }
    return turns;
}

// ---------------------------------------------------------------------------
// Pipeline stages

namespace cli_detail {

using json = nlohmann::json;

enum Stage : std::uint64_t { kStagePretrain = 1, kStageSft = 2, kStageDpo = 3, kStageAdapt = 4, kStageInit = 5 };

template <class T>
std::vector<T> cap(std::vector<T> v, std::size_t n) {
    if (v.size() > n) v.resize(n);
    return v;
}

class MetricsLog {
public:
    MetricsLog(const std::filesystem::path& dir, const std::string& stage) : path_(dir / (stage + ".metrics.jsonl")) {}

    void operator()(const StepLog& s) {
        json j = {{"stage", s.stage}, {"step", s.step}, {"loss", s.loss}, {"lr", s.lr}};
        if (s.margin) j["margin"] = *s.margin;
        if (s.reward_accuracy) j["reward_accuracy"] = *s.reward_accuracy;
        buf_ += j.dump() + "\n";
    }

    void flush() const { atomic_write(path_, buf_); }

private:
    std::filesystem::path path_;
    std::string buf_;
};

inline void write_summary(const std::filesystem::path& dir, const std::string& stage, const json& j) {
    atomic_write(dir / (stage + ".summary.json"), j.dump(2) + "\n");
}

inline double mean_tail(const TrainResult& r, std::size_t n) {
    if (r.log.empty()) return 0.0;
    n = std::min(n, r.log.size());
    double s = 0.0;
    for (std::size_t i = r.log.size() - n; i < r.log.size(); ++i) s += r.log[i].loss;
    return s / static_cast<double>(n);
}

inline double dataset_loss(const AdaptedModel& m, const std::vector<TokenizedExample>& ex) {
    NoGradGuard no_grad;
    double s = 0.0;
    for (const auto& e : ex) s += static_cast<double>(sft_loss(m, e).item());
    return s / static_cast<double>(ex.size());
}

inline Vocabulary load_vocab_checked(const AppConfig& cfg) {
    if (!std::filesystem::exists(cfg.paths.vocab)) {
        throw OrderingError("vocabulary " + cfg.paths.vocab.string() + " not found; run init-tokenizer first");
    }
    auto v = Vocabulary::load(cfg.paths.vocab);
    if (v.size() > cfg.model.vocab_size) {
        throw ConfigError("vocabulary has " + std::to_string(v.size()) + " tokens but model.vocab_size is " +
                          std::to_string(cfg.model.vocab_size));
    }
    return v;
}

inline void require_model_config(const Checkpoint& ck, const AppConfig& cfg) {
    if (!(ck.model.config() == cfg.model)) throw ConfigError("checkpoint model config differs from the config file");
}

inline Checkpoint load_stage_input(const std::filesystem::path& path, const std::string& stage, const AppConfig& cfg) {
    if (!std::filesystem::exists(path)) {
        throw OrderingError(stage + " needs an SFT checkpoint, none found at " + path.string() + "; run train-sft first");
    }
    auto ck = load_checkpoint(path);
    if (!ck.has_stage("sft")) {
        throw OrderingError(stage + " requires a checkpoint that completed sft; " + path.string() + " has not");
    }
    require_model_config(ck, cfg);
    return ck;
}

inline std::filesystem::path default_ckpt(const AppConfig& cfg, const std::string& stage) {
    return cfg.paths.checkpoints / (stage + ".ckpt");
}

}  // namespace cli_detail

inline void cmd_init_tokenizer(const AppConfig& cfg) {
    std::vector<std::string> texts;
    bool any = false;
    if (!cfg.paths.pretrain_data.empty() && std::filesystem::exists(cfg.paths.pretrain_data)) {
        for (const auto& d : cli_detail::cap(load_raw(cfg.paths.pretrain_data), cfg.max_records.raw)) texts.push_back(" " + d.text + " ");
        any = true;
    }
    if (!cfg.paths.adapt_data.empty() && std::filesystem::exists(cfg.paths.adapt_data)) {
        for (const auto& d : cli_detail::cap(load_raw(cfg.paths.adapt_data), cfg.max_records.raw)) texts.push_back(" " + d.text + " ");
        any = true;
    }
    for (const auto* p : {&cfg.paths.pretrain_sft_data, &cfg.paths.sft_data}) {
        if (p->empty() || !std::filesystem::exists(*p)) continue;
        for (const auto& r : cli_detail::cap(load_sft(*p), cfg.max_records.sft)) {
            texts.push_back(alpaca_prompt_body(r));
            texts.push_back(r.output);
        }
        any = true;
    }
    if (!cfg.paths.dpo_data.empty() && std::filesystem::exists(cfg.paths.dpo_data)) {
        for (const auto& r : cli_detail::cap(load_preferences(cfg.paths.dpo_data), cfg.max_records.preference)) {
            for (const auto& m : as_messages(r.prompt)) texts.push_back(m.content);
            texts.push_back(r.chosen);
            texts.push_back(r.rejected);
        }
        any = true;
    }
    if (!any) throw ConfigError("init-tokenizer needs at least one existing dataset path");
    const auto vocab = train_bpe(texts, cfg.vocab_size, SpecialTokens{});
    vocab.save(cfg.paths.vocab);
}

inline void cmd_pretrain(const AppConfig& cfg) {
    require_path(cfg.paths.pretrain_data, "pretrain_data");
    const auto vocab = cli_detail::load_vocab_checked(cfg);
    const auto docs = cli_detail::cap(load_raw(cfg.paths.pretrain_data), cfg.max_records.raw);
    if (docs.empty()) throw DataError("pretrain corpus is empty");
    Rng init(Rng::mix(cfg.seed ^ cli_detail::kStageInit));
    auto m = AdaptedModel::dense(init_model(cfg.model, init));
    const auto tc = cfg.seeded(cfg.pretrain, cli_detail::kStagePretrain);
    auto examples = encode_raw_corpus(vocab, docs, effective_seq_len(m, tc));
    std::vector<StageRecord> provenance{{"pretrain", file_digest(cfg.paths.pretrain_data)}};
    if (!cfg.paths.pretrain_sft_data.empty()) {
        require_path(cfg.paths.pretrain_sft_data, "pretrain_sft_data");
        const auto records = cli_detail::cap(load_sft(cfg.paths.pretrain_sft_data), cfg.max_records.sft);
        const auto extra = encode_sft_dataset(vocab, records, LossMaskMode::full_sequence, effective_seq_len(m, tc));
        examples.insert(examples.end(), extra.begin(), extra.end());
        provenance.push_back({"pretrain-sft", file_digest(cfg.paths.pretrain_sft_data)});
    }
    cli_detail::MetricsLog log(cfg.paths.reports, "pretrain");
    const double before = perplexity(m, examples);
    const auto r = train_on_examples("pretrain", m, examples, tc, std::ref(log));
    const double after = perplexity(m, examples);
    log.flush();
    m.base.set_requires_grad(false);
    Checkpoint ck{std::move(m), std::move(provenance)};
    save_checkpoint(ck, cli_detail::default_ckpt(cfg, "pretrain"));
    cli_detail::write_summary(cfg.paths.reports, "pretrain",
                              {{"steps", r.steps}, {"train_ppl_before", before}, {"train_ppl_after", after}});
}

inline void cmd_train_sft(const AppConfig& cfg, std::optional<std::filesystem::path> from) {
    require_path(cfg.paths.sft_data, "sft_data");
    const auto vocab = cli_detail::load_vocab_checked(cfg);
    const auto records = cli_detail::cap(load_sft(cfg.paths.sft_data), cfg.max_records.sft);
    if (records.empty()) throw DataError("sft dataset is empty");

    Checkpoint ck;
    if (!from) {
        const auto pre = cli_detail::default_ckpt(cfg, "pretrain");
        if (std::filesystem::exists(pre)) from = pre;
    }
    ModelWeights base;
    if (from) {
        ck = load_checkpoint(*from);
        cli_detail::require_model_config(ck, cfg);
        base = merge_lora(ck.model);
    } else {
        Rng init(Rng::mix(cfg.seed ^ cli_detail::kStageInit));
        base = init_model(cfg.model, init);
    }
    Rng lora_rng(Rng::mix(cfg.seed ^ (cli_detail::kStageSft << 32)));
    auto m = attach_lora(base, cfg.lora.lora, cfg.lora.quantize_base, lora_rng, cfg.lora.block_size);
    const auto tc = cfg.seeded(cfg.sft, cli_detail::kStageSft);
    const auto examples = encode_sft_dataset(vocab, records, tc.loss_mask_mode, effective_seq_len(m, tc));

    cli_detail::MetricsLog log(cfg.paths.reports, "sft");
    const double before = cli_detail::dataset_loss(m, examples);
    const auto r = train_on_examples("sft", m, examples, tc, std::ref(log));
    const double after = cli_detail::dataset_loss(m, examples);
    log.flush();

    ck.model = std::move(m);
    ck.provenance.push_back({"sft", file_digest(cfg.paths.sft_data)});
    save_checkpoint(ck, cli_detail::default_ckpt(cfg, "sft"));
    const std::size_t per_epoch = (examples.size() + tc.batch_size - 1) / tc.batch_size;
    cli_detail::write_summary(cfg.paths.reports, "sft",
                              {{"steps", r.steps},
                               {"records", examples.size()},
                               {"trainable_parameters", ck.model.trainable_count()},
                               {"total_parameters", ck.model.base.parameter_count() + ck.model.trainable_count()},
                               {"mean_loss_before", before},
                               {"mean_loss_after", after},
                               {"last_epoch_mean_step_loss", cli_detail::mean_tail(r, per_epoch)}});
}

inline void cmd_train_dpo(const AppConfig& cfg, std::optional<std::filesystem::path> from) {
    const auto in = from.value_or(cli_detail::default_ckpt(cfg, "sft"));
    auto ck = cli_detail::load_stage_input(in, "train-dpo", cfg);
    require_path(cfg.paths.dpo_data, "dpo_data");
    const auto vocab = cli_detail::load_vocab_checked(cfg);
    auto records = filter_preferences(load_preferences(cfg.paths.dpo_data), cfg.dpo.min_score, cfg.dpo.excluded_sources);
    records = cli_detail::cap(std::move(records), cfg.max_records.preference);
    if (records.empty()) throw DataError("no preference records left after filtering");

    Rng lora_rng(Rng::mix(cfg.seed ^ (cli_detail::kStageDpo << 32)));
    auto policy = attach_lora(merge_lora(ck.model), cfg.lora.lora, cfg.lora.quantize_base, lora_rng, cfg.lora.block_size);
    const auto reference = snapshot(policy);
    const auto tc = cfg.seeded(cfg.dpo.train, cli_detail::kStageDpo);
    cli_detail::MetricsLog log(cfg.paths.reports, "dpo");
    const auto r = run_dpo(policy, reference, vocab, records, tc, cfg.dpo.dpo, std::ref(log));
    log.flush();

    ck.model = std::move(policy);
    ck.provenance.push_back({"dpo", file_digest(cfg.paths.dpo_data)});
    save_checkpoint(ck, cli_detail::default_ckpt(cfg, "dpo"));
    cli_detail::write_summary(cfg.paths.reports, "dpo",
                              {{"steps", r.train.steps},
                               {"pairs", records.size()},
                               {"beta", cfg.dpo.dpo.beta},
                               {"mean_margin_before", r.mean_margin_before},
                               {"mean_margin_after", r.mean_margin_after}});
}

inline void cmd_adapt(const AppConfig& cfg, std::optional<std::filesystem::path> from) {
    if (!from) {
        const auto dpo = cli_detail::default_ckpt(cfg, "dpo");
        from = std::filesystem::exists(dpo) ? dpo : cli_detail::default_ckpt(cfg, "sft");
    }
    auto ck = cli_detail::load_stage_input(*from, "adapt", cfg);
    require_path(cfg.paths.adapt_data, "adapt_data");
    require_path(cfg.paths.adapt_heldout, "adapt_heldout");
    const auto vocab = cli_detail::load_vocab_checked(cfg);
    const auto corpus = cli_detail::cap(load_raw(cfg.paths.adapt_data), cfg.max_records.raw);
    const auto heldout = load_raw(cfg.paths.adapt_heldout);
    std::vector<RawDoc> source;
    if (!cfg.paths.source_heldout.empty()) {
        require_path(cfg.paths.source_heldout, "source_heldout");
        source = load_raw(cfg.paths.source_heldout);
    }

    AdaptedModel m;
    if (cfg.adapt.mode == AdaptMode::adapters) {
        Rng lora_rng(Rng::mix(cfg.seed ^ (cli_detail::kStageAdapt << 32)));
        m = attach_lora(merge_lora(ck.model), cfg.lora.lora, cfg.lora.quantize_base, lora_rng, cfg.lora.block_size);
    } else {
        m = AdaptedModel::dense(merge_lora(ck.model));
    }
    const auto tc = cfg.seeded(cfg.adapt.train, cli_detail::kStageAdapt);
    cli_detail::MetricsLog log(cfg.paths.reports, "adapt");
    const auto r = run_adaptation(m, vocab, corpus, heldout, tc, source, std::ref(log));
    log.flush();
    if (!m.has_adapters()) m.base.set_requires_grad(false);

    ck.model = std::move(m);
    ck.provenance.push_back({"adapt", file_digest(cfg.paths.adapt_data)});
    save_checkpoint(ck, cli_detail::default_ckpt(cfg, "adapt"));
    nlohmann::json summary = {{"steps", r.train.steps},
                              {"mode", cfg.adapt.mode == AdaptMode::adapters ? "adapters" : "full"},
                              {"heldout_ppl_before", r.heldout_ppl_before},
                              {"heldout_ppl_after", r.heldout_ppl_after}};
    if (r.source_ppl_before) {
        summary["source_ppl_before"] = *r.source_ppl_before;
        summary["source_ppl_after"] = *r.source_ppl_after;
    }
    cli_detail::write_summary(cfg.paths.reports, "adapt", summary);
}

/// Scores every "<name>.mc.jsonl" (acc, acc_norm) and "<name>.gen.jsonl"
/// (strict-match, flexible-extract) file in `tasks_dir`, in file-name order.
inline EvalReport evaluate_tasks(const ScoringModel& model, const std::filesystem::path& tasks_dir,
                                 const std::string& label, const SamplingParams& p) {
    if (!std::filesystem::is_directory(tasks_dir)) throw ConfigError("task directory not found: " + tasks_dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(tasks_dir)) {
        const auto name = e.path().filename().string();
        if (name.ends_with(".mc.jsonl") || name.ends_with(".gen.jsonl")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no *.mc.jsonl or *.gen.jsonl task files in " + tasks_dir.string());
    EvalReport report;
    report.model = label;
    for (const auto& f : files) {
        if (f.filename().string().ends_with(".mc.jsonl")) {
            const auto task = load_mc_task(f);
            if (task.items.empty()) continue;
            const auto s = eval_multiple_choice(model, task);
            report.rows.push_back({task.name, "acc", s.acc});
            report.rows.push_back({task.name, "acc_norm", s.acc_norm});
            report.item_errors += s.item_errors;
        } else {
            auto task = load_gen_task(f);
            if (task.items.empty()) continue;
            for (const auto mode : {ExtractionMode::strict, ExtractionMode::flexible}) {
                task.mode = mode;
                const auto s = eval_generative(model, task, p);
                report.rows.push_back({task.name, metric_name(mode), s.score});
                report.item_errors += s.item_errors;
            }
        }
    }
    if (report.rows.empty()) throw DataError("all task files were empty");
    return report;
}

inline void cmd_merge(const std::filesystem::path& in, const std::filesystem::path& out) {
    auto ck = load_checkpoint(in);
    Checkpoint merged{AdaptedModel::dense(merge_lora(ck.model)), ck.provenance};
    merged.provenance.push_back({"merge", ""});
    save_checkpoint(merged, out);
}

// ---------------------------------------------------------------------------
// Dispatch

inline SamplingParams sampling_from(const AppConfig& cfg) {
    SamplingParams p;
    p.temperature = cfg.sampling.temperature;
    p.top_p = cfg.sampling.top_p;
    p.max_new_tokens = cfg.sampling.max_new_tokens;
    p.seed = cfg.seed;
    return p;
}

/// Runs one subcommand. Exit codes: 0 success, 1 invalid input or usage,
/// 2 failure during the run.
inline int dispatch(const std::vector<std::string>& args, std::istream& in = std::cin, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
    CLI::App app{"tinyadapt: adapter fine-tuning pipeline for a toy decoder-only model", "tinyadapt"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;

    auto with_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "pipeline config JSON")->required();
        sub->add_option("--seed", seed, "override the config seed");
    };

    auto* init_tok = app.add_subcommand("init-tokenizer", "train the BPE vocabulary on the configured corpora");
    with_config(init_tok);
    auto* pretrain = app.add_subcommand("pretrain", "full-parameter warm-up on the source-language corpus and optional instruction records");
    with_config(pretrain);

    std::string from;
    auto* sft = app.add_subcommand("train-sft", "supervised fine-tuning with adapters on a 4-bit base");
    with_config(sft);
    sft->add_option("--from", from, "starting checkpoint (default: pretrain checkpoint when present)");
    auto* dpo = app.add_subcommand("train-dpo", "preference optimization from the SFT checkpoint");
    with_config(dpo);
    dpo->add_option("--from", from, "starting checkpoint (default: sft checkpoint)");
    auto* adapt = app.add_subcommand("adapt", "continued training on the target-language corpus");
    with_config(adapt);
    adapt->add_option("--from", from, "starting checkpoint (default: dpo, else sft checkpoint)");

    std::string checkpoint, tasks, out_path, label;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on task files");
    with_config(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
    eval->add_option("--tasks", tasks, "task directory (default: paths.tasks)");
    eval->add_option("--out", out_path, "report JSON path (default: reports/eval.json)");
    eval->add_option("--name", label, "model column label (default: checkpoint file stem)");

    auto* merge = app.add_subcommand("merge", "fold adapters into dense weights");
    merge->add_option("--config", config_path, "pipeline config JSON");
    merge->add_option("--seed", seed, "unused; accepted for uniformity");
    merge->add_option("--checkpoint", checkpoint, "input checkpoint")->required();
    merge->add_option("--out", out_path, "output checkpoint")->required();

    std::string system_prompt{kDefaultSystemPrompt};
    std::optional<double> temperature, top_p;
    std::optional<std::size_t> max_new;
    auto* chat = app.add_subcommand("chat", "interactive chat on a checkpoint");
    with_config(chat);
    chat->add_option("--checkpoint", checkpoint, "checkpoint to load")->required();
    chat->add_option("--system", system_prompt, "system prompt");
    chat->add_option("--temperature", temperature, "sampling temperature (0 = greedy)");
    chat->add_option("--top-p", top_p, "nucleus mass");
    chat->add_option("--max-new-tokens", max_new, "reply length cap");

    std::vector<std::string> inputs;
    auto* report = app.add_subcommand("report", "render eval reports side by side");
    report->add_option("--config", config_path, "pipeline config JSON");
    report->add_option("--seed", seed, "unused; accepted for uniformity");
    report->add_option("--inputs", inputs, "report JSON files, one column each")->required();
    report->add_option("--out", out_path, "also write the table here");

    std::string demo_dir;
    std::uint64_t demo_seed = 1234;
    auto* demo = app.add_subcommand("make-demo", "write toy datasets and a config");
    demo->add_option("--out", demo_dir, "output directory")->required();
    demo->add_option("--seed", demo_seed, "data seed");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        auto config = [&] {
            auto c = load_app_config(config_path);
            if (seed) c.seed = *seed;
            return c;
        };
        auto opt_from = [&]() -> std::optional<std::filesystem::path> {
            if (from.empty()) return std::nullopt;
            return std::filesystem::path(from);
        };

        if (*init_tok) {
            const auto c = config();
            cmd_init_tokenizer(c);
            out << "vocabulary written to " << c.paths.vocab.string() << "\n";
        } else if (*pretrain) {
            cmd_pretrain(config());
            out << "pretrain done\n";
        } else if (*sft) {
            cmd_train_sft(config(), opt_from());
            out << "train-sft done\n";
        } else if (*dpo) {
            cmd_train_dpo(config(), opt_from());
            out << "train-dpo done\n";
        } else if (*adapt) {
            cmd_adapt(config(), opt_from());
            out << "adapt done\n";
        } else if (*eval) {
            const auto c = config();
            const auto vocab = cli_detail::load_vocab_checked(c);
            const auto ck = load_checkpoint(checkpoint);
            const TransformerScorer scorer(ck.model, vocab);
            const std::filesystem::path tdir = tasks.empty() ? c.paths.tasks : std::filesystem::path(tasks);
            const auto name = label.empty() ? std::filesystem::path(checkpoint).stem().string() : label;
            const auto rep = evaluate_tasks(scorer, tdir, name, sampling_from(c));
            const std::filesystem::path dest = out_path.empty() ? c.paths.reports / "eval.json" : std::filesystem::path(out_path);
            atomic_write(dest, rep.to_json().dump(2) + "\n");
            out << render_report({rep});
        } else if (*merge) {
            cmd_merge(checkpoint, out_path);
            out << "merged checkpoint written to " << out_path << "\n";
        } else if (*chat) {
            const auto c = config();
            const auto vocab = cli_detail::load_vocab_checked(c);
            const auto ck = load_checkpoint(checkpoint);
            ChatOptions o;
            o.system_prompt = system_prompt;
            o.sampling = sampling_from(c);
            if (temperature) o.sampling.temperature = *temperature;
            if (top_p) o.sampling.top_p = *top_p;
            if (max_new) o.sampling.max_new_tokens = *max_new;
            o.sampling.validate();
            run_chat(ck.model, vocab, o, in, out);
        } else if (*report) {
            std::vector<EvalReport> reps;
            for (const auto& p : inputs) {
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(read_file_bytes(p));
                } catch (const nlohmann::json::parse_error& e) {
                    throw FormatError(p + " is not valid JSON: " + e.what());
                }
                reps.push_back(EvalReport::from_json(j));
            }
            const auto table = render_report(reps);
            if (!out_path.empty()) atomic_write(out_path, table);
            out << table;
        } else if (*demo) {
            const auto cfg_path = toy::write_demo(demo_dir, demo_seed);
            out << "demo data and config written to " << cfg_path.string() << "\n";
        }
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.validation() ? 1 : 2;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace tinyadapt
