#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/lora.hpp"
#include "tinyadapt/model.hpp"
#include "tinyadapt/tokenizer.hpp"

namespace tinyadapt {

/// Text-level scoring backend the harness evaluates.
class ScoringModel {
public:
    virtual ~ScoringModel() = default;
    virtual LoglikelihoodResult loglikelihood(const std::string& context, const std::string& continuation) const = 0;
    virtual std::string generate(const std::string& prompt, const SamplingParams& p) const = 0;
};

/// Fixture backend: fixed answers per (context, continuation) and per prompt.
class RiggedModel : public ScoringModel {
public:
    void set_loglikelihood(const std::string& context, const std::string& continuation, double logprob,
                           bool is_greedy = false) {
        scores_[{context, continuation}] = {logprob, is_greedy};
    }
    void set_generation(const std::string& prompt, std::string text) { generations_[prompt] = std::move(text); }

    LoglikelihoodResult loglikelihood(const std::string& context, const std::string& continuation) const override {
        const auto it = scores_.find({context, continuation});
        if (it == scores_.end()) throw DataError("rigged model has no score for continuation '" + continuation + "'");
        return it->second;
    }

    std::string generate(const std::string& prompt, const SamplingParams&) const override {
        const auto it = generations_.find(prompt);
        if (it == generations_.end()) throw DataError("rigged model has no generation for prompt");
        return it->second;
    }

private:
    std::map<std::pair<std::string, std::string>, LoglikelihoodResult> scores_;
    std::map<std::string, std::string> generations_;
};

/// Adapter from a trained model + vocabulary to the text interface. Contexts
/// are prefixed with <|begin_of_text|>; generation stops at <|eot_id|>.
class TransformerScorer : public ScoringModel {
public:
    TransformerScorer(const AdaptedModel& model, const Vocabulary& vocab) : model_(model), vocab_(vocab) {}

    LoglikelihoodResult loglikelihood(const std::string& context, const std::string& continuation) const override {
        std::vector<TokenId> ctx{vocab_.bos()};
        const auto body = vocab_.encode(context, true);
        ctx.insert(ctx.end(), body.begin(), body.end());
        const auto cont = vocab_.encode(continuation, false);
        return tinyadapt::loglikelihood(model_.base, ctx, cont, model_.lora_set());
    }

    std::string generate(const std::string& prompt, const SamplingParams& p) const override {
        auto ids = vocab_.encode(prompt, true);
        if (ids.empty() || ids.front() != vocab_.bos()) ids.insert(ids.begin(), vocab_.bos());
        SamplingParams params = p;
        params.stop_ids.insert(vocab_.eot());
        const auto out = tinyadapt::generate(model_.base, ids, params, model_.lora_set());
        return vocab_.decode(out);
    }

private:
    const AdaptedModel& model_;
    const Vocabulary& vocab_;
};

// ---------------------------------------------------------------------------
// Tasks

struct McItem {
    std::string context;
    std::vector<std::string> choices;
    std::size_t gold = 0;
};

struct McTask {
    std::string name;
    std::vector<McItem> items;

    void validate() const {
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto& it = items[i];
            if (it.choices.size() < 2) throw DataError(name + " item " + std::to_string(i) + ": needs >= 2 choices");
            if (it.gold >= it.choices.size()) throw DataError(name + " item " + std::to_string(i) + ": gold out of range");
            for (const auto& c : it.choices)
                if (c.empty()) throw DataError(name + " item " + std::to_string(i) + ": empty choice");
        }
    }
};

enum class ExtractionMode { strict, flexible };

inline std::string metric_name(ExtractionMode m) { return m == ExtractionMode::strict ? "strict-match" : "flexible-extract"; }

struct GenItem {
    std::string prompt;
    std::string answer;
};

struct GenTask {
    std::string name;
    std::vector<GenItem> items;
    ExtractionMode mode = ExtractionMode::strict;
};

struct McScores {
    double acc = 0.0;
    double acc_norm = 0.0;
    std::size_t item_errors = 0;
};

namespace eval_detail {

inline std::size_t argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace eval_detail

/// acc: argmax of summed log-probability; acc_norm: argmax of the sum divided
/// by the choice's UTF-8 byte length. Ties go to the lowest index. Items the
/// model cannot score (e.g. context overflow) count as wrong.
inline McScores eval_multiple_choice(const ScoringModel& model, const McTask& task) {
    task.validate();
    if (task.items.empty()) throw DataError("task '" + task.name + "' has no items");
    std::size_t hit = 0, hit_norm = 0;
    McScores s;
    for (const auto& item : task.items) {
        std::vector<double> raw, norm;
        try {
            for (const auto& c : item.choices) {
                const double lp = model.loglikelihood(item.context, c).sum_logprob;
                raw.push_back(lp);
                norm.push_back(lp / static_cast<double>(c.size()));
            }
        } catch (const LengthError&) {
            ++s.item_errors;
            continue;
        }
        hit += eval_detail::argmax_lowest(raw) == item.gold ? 1 : 0;
        hit_norm += eval_detail::argmax_lowest(norm) == item.gold ? 1 : 0;
    }
    const auto n = static_cast<double>(task.items.size());
    s.acc = static_cast<double>(hit) / n;
    s.acc_norm = static_cast<double>(hit_norm) / n;
    return s;
}

/// Trimmed remainder of the last line starting with "#### ".
inline std::optional<std::string> extract_strict(const std::string& text) {
    std::optional<std::string> found;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("#### ", 0) == 0) found = eval_detail::trim(line.substr(5));
    }
    return found;
}

/// Last number in the text (optional sign, digits with commas, optional
/// fraction), commas removed.
inline std::optional<std::string> extract_flexible(const std::string& text) {
    static const std::regex number(R"(-?\d[\d,]*(?:\.\d+)?)");
    std::optional<std::string> found;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it) {
        found = it->str();
    }
    if (!found) return std::nullopt;
    std::string s;
    for (const char c : *found)
        if (c != ',') s += c;
    while (!s.empty() && s.back() == ',') s.pop_back();
    return s;
}

/// Answer normalization before exact match: trim, drop commas and one
/// trailing ".0".
inline std::string normalize_answer(const std::string& a) {
    std::string s;
    for (const char c : eval_detail::trim(a))
        if (c != ',') s += c;
    if (s.size() > 2 && s.ends_with(".0")) s.resize(s.size() - 2);
    return s;
}

struct GenScore {
    double score = 0.0;
    std::size_t item_errors = 0;
};

inline GenScore eval_generative(const ScoringModel& model, const GenTask& task, const SamplingParams& p) {
    if (task.items.empty()) throw DataError("task '" + task.name + "' has no items");
    std::size_t hit = 0;
    GenScore s;
    for (const auto& item : task.items) {
        if (item.answer.empty()) throw DataError(task.name + ": gold answer is empty");
        std::string text;
        try {
            text = model.generate(item.prompt, p);
        } catch (const Error&) {
            ++s.item_errors;
            continue;
        }
        const auto got = task.mode == ExtractionMode::strict ? extract_strict(text) : extract_flexible(text);
        if (got && normalize_answer(*got) == normalize_answer(item.answer)) ++hit;
    }
    s.score = static_cast<double>(hit) / static_cast<double>(task.items.size());
    return s;
}

// ---------------------------------------------------------------------------
// Reports

inline double table_average(const std::vector<double>& scores) {
    if (scores.empty()) throw DataError("table_average: no rows");
    double s = 0.0;
    for (const double v : scores) s += v;
    return s / static_cast<double>(scores.size());
}

struct ReportRow {
    std::string task;
    std::string metric;
    double score = 0.0;
};

struct EvalReport {
    std::string model;
    std::vector<ReportRow> rows;
    std::size_t item_errors = 0;

    double average() const {
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r.score);
        return table_average(v);
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_j = nlohmann::json::array();
        for (const auto& r : rows) rows_j.push_back({{"task", r.task}, {"metric", r.metric}, {"score", r.score}});
        return {{"model", model}, {"rows", rows_j}, {"average", average()}, {"item_errors", item_errors}};
    }

    static EvalReport from_json(const nlohmann::json& j) {
        try {
            EvalReport r;
            r.model = j.at("model").get<std::string>();
            for (const auto& row : j.at("rows")) {
                r.rows.push_back({row.at("task").get<std::string>(), row.at("metric").get<std::string>(),
                                  row.at("score").get<double>()});
            }
            r.item_errors = j.value("item_errors", std::size_t{0});
            return r;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("report JSON: ") + e.what());
        }
    }
};

namespace eval_detail {

inline std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace eval_detail

/// Tab-separated table, one column per report: header, one line per
/// (task, metric) row with the task name shown on its first row only, and an
/// "Average:" line.
inline std::string render_report(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw DataError("render_report: no reports");
    const auto& first = reports.front();
    if (first.rows.empty()) throw DataError("render_report: report has no rows");
    for (std::size_t i = 1; i < reports.size(); ++i) {
        const auto& other = reports[i];
        std::set<std::pair<std::string, std::string>> a, b;
        for (const auto& r : first.rows) a.insert({r.task, r.metric});
        for (const auto& r : other.rows) b.insert({r.task, r.metric});
        bool same = a == b && first.rows.size() == other.rows.size();
        for (std::size_t k = 0; same && k < first.rows.size(); ++k)
            same = first.rows[k].task == other.rows[k].task && first.rows[k].metric == other.rows[k].metric;
        if (!same) {
            std::string diff;
            for (const auto& x : a)
                if (!b.contains(x)) diff += " -" + x.first + "/" + x.second;
            for (const auto& x : b)
                if (!a.contains(x)) diff += " +" + x.first + "/" + x.second;
            if (diff.empty()) diff = " (row order differs)";
            throw DataError("report '" + other.model + "' row set differs from '" + first.model + "':" + diff);
        }
    }
    std::ostringstream os;
    os << "Tasks\tMetric";
    for (const auto& r : reports) os << '\t' << r.model;
    os << '\n';
    for (std::size_t k = 0; k < first.rows.size(); ++k) {
        const bool new_task = k == 0 || first.rows[k].task != first.rows[k - 1].task;
        os << (new_task ? first.rows[k].task : "") << '\t' << first.rows[k].metric;
        for (const auto& r : reports) os << '\t' << eval_detail::fmt4(r.rows[k].score);
        os << '\n';
    }
    os << "Average:\t";
    for (const auto& r : reports) os << '\t' << eval_detail::fmt4(r.average());
    os << '\n';
    std::size_t errors = 0;
    for (const auto& r : reports) errors += r.item_errors;
    if (errors > 0) os << "Items scored as incorrect after errors: " << errors << '\n';
    return os.str();
}

}  // namespace tinyadapt
