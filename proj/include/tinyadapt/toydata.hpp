#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyadapt/checkpoint.hpp"
#include "tinyadapt/evaluation.hpp"
#include "tinyadapt/rng.hpp"
#include "tinyadapt/templating.hpp"
#include "tinyadapt/training.hpp"

namespace tinyadapt::toy {

struct WordPair {
    std::string_view en;
    std::string_view it;
};

inline constexpr std::array<WordPair, 12> kNouns{{{"cat", "gatto"},
                                                  {"dog", "cane"},
                                                  {"house", "casa"},
                                                  {"sun", "sole"},
                                                  {"bread", "pane"},
                                                  {"water", "acqua"},
                                                  {"book", "libro"},
                                                  {"friend", "amico"},
                                                  {"city", "città"},
                                                  {"sea", "mare"},
                                                  {"tree", "albero"},
                                                  {"road", "strada"}}};

inline constexpr std::array<WordPair, 6> kAdjectives{
    {{"big", "grande"}, {"small", "piccolo"}, {"red", "rosso"}, {"old", "vecchio"}, {"new", "nuovo"}, {"good", "buono"}}};

inline constexpr std::array<WordPair, 6> kVerbs{
    {{"sees", "vede"}, {"likes", "ama"}, {"finds", "trova"}, {"wants", "vuole"}, {"has", "ha"}, {"takes", "prende"}}};

/// One sentence in both languages. English puts the adjective first, the
/// Italian-like rendering after the noun.
struct Sentence {
    std::size_t adj, noun, verb, object;

    std::string en() const {
        return "the " + std::string(kAdjectives[adj].en) + " " + std::string(kNouns[noun].en) + " " +
               std::string(kVerbs[verb].en) + " the " + std::string(kNouns[object].en) + ".";
    }

    std::string it() const {
        return "il " + std::string(kNouns[noun].it) + " " + std::string(kAdjectives[adj].it) + " " +
               std::string(kVerbs[verb].it) + " il " + std::string(kNouns[object].it) + ".";
    }
};

inline Sentence random_sentence(Rng& rng) {
    Sentence s{rng.below(kAdjectives.size()), rng.below(kNouns.size()), rng.below(kVerbs.size()), 0};
    s.object = rng.below(kNouns.size() - 1);
    if (s.object >= s.noun) ++s.object;
    return s;
}

/// Target-language documents: two to four sentences on one line.
inline std::vector<RawDoc> corpus(Rng& rng, std::size_t docs, bool italian) {
    std::vector<RawDoc> out;
    out.reserve(docs);
    for (std::size_t d = 0; d < docs; ++d) {
        const std::size_t n = 2 + rng.below(3);
        std::string text;
        for (std::size_t i = 0; i < n; ++i) {
            const auto s = random_sentence(rng);
            if (i) text += ' ';
            text += italian ? s.it() : s.en();
        }
        out.push_back({text, italian ? "it" : "en"});
    }
    return out;
}

/// Source-language warm-up documents: two to four sentences, one per line,
/// then the same lines again.
inline std::vector<RawDoc> repeated_corpus(Rng& rng, std::size_t docs) {
    std::vector<RawDoc> out;
    out.reserve(docs);
    for (std::size_t d = 0; d < docs; ++d) {
        std::vector<std::string> lines(2 + rng.below(3));
        for (auto& l : lines) l = random_sentence(rng).en();
        std::string text;
        for (std::size_t i = 0; i < 2 * lines.size(); ++i) {
            if (i) text += '\n';
            text += lines[i % lines.size()];
        }
        out.push_back({text, "en"});
    }
    return out;
}

inline constexpr std::string_view kSftSystem = "You are a helpful assistant.";

/// Instruction-format warm-up records: the answer continues with the same
/// one to three sentences given as input.
inline std::vector<SftRecord> warmup_records(Rng& rng, std::size_t n) {
    std::vector<SftRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::string text;
        for (std::size_t k = 0, m = 1 + rng.below(3); k < m; ++k) {
            if (k) text += ' ';
            text += random_sentence(rng).en();
        }
        out.push_back({std::string(kSftSystem), "Continue the text.", text, text});
    }
    return out;
}

/// Copy records: the answer repeats the input sentence.
inline std::vector<SftRecord> sft_records(Rng& rng, std::size_t n) {
    std::vector<SftRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = random_sentence(rng).en();
        out.push_back({std::string(kSftSystem), "Repeat the sentence.", s, s});
    }
    return out;
}

/// Chosen repeats the sentence; rejected answers with a different one.
/// A slice is tagged with the excluded source and a few carry low scores.
inline std::vector<PreferenceRecord> preference_records(Rng& rng, std::size_t n) {
    std::vector<PreferenceRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = random_sentence(rng).en();
        auto other = random_sentence(rng).en();
        while (other == s) other = random_sentence(rng).en();
        PreferenceRecord r;
        r.prompt = "Repeat the sentence: " + s;
        r.chosen = s;
        r.rejected = other;
        r.source = i % 8 == 7 ? "toxic-dpo-v0.2" : "toy-orca";
        r.score = i % 8 == 3 ? 0.5 : 9.0;
        out.push_back(std::move(r));
    }
    return out;
}

/// Next-word completion items over Italian-like sentences.
inline McTask mc_task(Rng& rng, std::size_t n, const std::string& name) {
    McTask task{name, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = random_sentence(rng);
        const std::string full = s.it();
        const auto cut = full.rfind(' ');
        McItem item;
        item.context = full.substr(0, cut);
        item.gold = rng.below(4);
        std::vector<std::size_t> used{s.object};
        for (std::size_t c = 0; c < 4; ++c) {
            if (c == item.gold) {
                item.choices.push_back(full.substr(cut));
                continue;
            }
            std::size_t w = rng.below(kNouns.size());
            while (std::find(used.begin(), used.end(), w) != used.end()) w = rng.below(kNouns.size());
            used.push_back(w);
            item.choices.push_back(" " + std::string(kNouns[w].it) + ".");
        }
        task.items.push_back(std::move(item));
    }
    return task;
}

/// Small addition word problems with "#### n" style gold answers.
inline GenTask gen_task(Rng& rng, std::size_t n, const std::string& name) {
    GenTask task{name, {}, ExtractionMode::strict};
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = rng.below(50), b = rng.below(50);
        task.items.push_back({"Quanto fa " + std::to_string(a) + " più " + std::to_string(b) + "?",
                              std::to_string(a + b)});
    }
    return task;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    atomic_write(path, out);
}

inline nlohmann::json raw_json(const RawDoc& d) { return {{"text", d.text}, {"lang", d.lang}}; }

/// Writes every demo dataset plus a config.json into `dir` and returns the
/// config path.
inline std::filesystem::path write_demo(const std::filesystem::path& dir, std::uint64_t seed) {
    std::filesystem::create_directories(dir / "tasks");
    Rng rng(seed);
    auto raw_rows = [](const std::vector<RawDoc>& docs) {
        std::vector<nlohmann::json> rows;
        for (const auto& d : docs) rows.push_back(raw_json(d));
        return rows;
    };
    write_jsonl(dir / "source.jsonl", raw_rows(repeated_corpus(rng, 256)));
    write_jsonl(dir / "source_heldout.jsonl", raw_rows(repeated_corpus(rng, 24)));
    write_jsonl(dir / "target.jsonl", raw_rows(corpus(rng, 192, true)));
    write_jsonl(dir / "target_heldout.jsonl", raw_rows(corpus(rng, 24, true)));

    auto sft_rows = [](const std::vector<SftRecord>& records) {
        std::vector<nlohmann::json> rows;
        for (const auto& r : records) {
            rows.push_back({{"system", r.system}, {"instruction", r.instruction}, {"input", r.input}, {"output", r.output}});
        }
        return rows;
    };
    write_jsonl(dir / "warmup.jsonl", sft_rows(warmup_records(rng, 256)));
    write_jsonl(dir / "sft.jsonl", sft_rows(sft_records(rng, 32)));

    std::vector<nlohmann::json> prefs;
    for (const auto& r : preference_records(rng, 48)) {
        prefs.push_back({{"prompt", std::get<std::string>(r.prompt)},
                         {"chosen", r.chosen},
                         {"rejected", r.rejected},
                         {"source", r.source},
                         {"score", *r.score}});
    }
    write_jsonl(dir / "preferences.jsonl", prefs);

    std::vector<nlohmann::json> mc;
    for (const auto& it : mc_task(rng, 24, "completion").items) {
        mc.push_back({{"context", it.context}, {"choices", it.choices}, {"gold", it.gold}});
    }
    write_jsonl(dir / "tasks" / "completion.mc.jsonl", mc);
    std::vector<nlohmann::json> gen;
    for (const auto& it : gen_task(rng, 8, "somme").items) gen.push_back({{"prompt", it.prompt}, {"answer", it.answer}});
    write_jsonl(dir / "tasks" / "somme.gen.jsonl", gen);

    const nlohmann::json cfg = {
        {"seed", seed},
        {"pretrain", {{"learning_rate", 3e-3}, {"epochs", 40}}},
        {"sft", {{"epochs", 60}}},
        {"paths",
         {{"vocab", "vocab.json"},
          {"pretrain_data", "source.jsonl"},
          {"pretrain_sft_data", "warmup.jsonl"},
          {"sft_data", "sft.jsonl"},
          {"dpo_data", "preferences.jsonl"},
          {"adapt_data", "target.jsonl"},
          {"adapt_heldout", "target_heldout.jsonl"},
          {"source_heldout", "source_heldout.jsonl"},
          {"tasks", "tasks"},
          {"checkpoints", "checkpoints"},
          {"reports", "reports"}}}};
    atomic_write(dir / "config.json", cfg.dump(2) + "\n");
    return dir / "config.json";
}

}  // namespace tinyadapt::toy
