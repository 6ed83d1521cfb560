#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/evaluation.hpp"
#include "tinyadapt/templating.hpp"
#include "tinyadapt/training.hpp"

namespace tinyadapt {

enum class RecordSchema { sft, preference, raw, mc_task, gen_task };

inline std::string schema_name(RecordSchema s) {
    switch (s) {
        case RecordSchema::sft: return "sft";
        case RecordSchema::preference: return "preference";
        case RecordSchema::raw: return "raw";
        case RecordSchema::mc_task: return "mc_task";
        case RecordSchema::gen_task: return "gen_task";
    }
    return "?";
}

namespace dataset_detail {

using json = nlohmann::json;

class LineReader {
public:
    LineReader(const json& obj, std::size_t line, RecordSchema schema) : obj_(obj), line_(line), schema_(schema) {}

    const json& field(const char* name) const {
        const auto it = obj_.find(name);
        if (it == obj_.end()) {
            throw SchemaError(schema_name(schema_) + " record on line " + std::to_string(line_) +
                              ": missing required field '" + name + "'");
        }
        return *it;
    }

    std::string string(const char* name) const {
        const auto& v = field(name);
        if (!v.is_string()) fail(name, "must be a string");
        return v.get<std::string>();
    }

    std::string string_or(const char* name, std::string fallback) const {
        if (!obj_.contains(name) || obj_.at(name).is_null()) return fallback;
        return string(name);
    }

    std::optional<double> number_opt(const char* name) const {
        if (!obj_.contains(name) || obj_.at(name).is_null()) return std::nullopt;
        const auto& v = obj_.at(name);
        if (!v.is_number()) fail(name, "must be a number");
        return v.get<double>();
    }

    [[noreturn]] void fail(const std::string& field, const std::string& what) const {
        throw SchemaError(schema_name(schema_) + " record on line " + std::to_string(line_) + ": field '" + field +
                          "' " + what);
    }

    std::size_t line() const { return line_; }

private:
    const json& obj_;
    std::size_t line_;
    RecordSchema schema_;
};

/// Calls `fn` for every non-blank line, with JSON and validation failures
/// rethrown carrying the 1-based line number.
inline std::size_t for_each_line(const std::filesystem::path& path, RecordSchema schema,
                                 const std::function<void(const LineReader&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string text;
    std::size_t line_no = 0, records = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(text);
        } catch (const json::parse_error& e) {
            throw FormatError(path.string() + " line " + std::to_string(line_no) + ": malformed JSON (" + e.what() +
                              ")");
        }
        if (!obj.is_object()) {
            throw FormatError(path.string() + " line " + std::to_string(line_no) + ": expected a JSON object");
        }
        const LineReader reader(obj, line_no, schema);
        try {
            fn(reader);
        } catch (const SchemaError&) {
            throw;
        } catch (const Error& e) {
            throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        } catch (const json::exception& e) {
            throw SchemaError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
        ++records;
    }
    return records;
}

template <class T>
std::vector<T> finish(std::vector<T> out, const std::filesystem::path& path, std::ostream* warn) {
    if (out.empty() && warn) *warn << "warning: " << path.string() << " contains no records\n";
    return out;
}

inline std::vector<ChatMessage> parse_messages(const LineReader& r, const json& arr) {
    std::vector<ChatMessage> msgs;
    for (const auto& m : arr) {
        if (!m.is_object() || !m.contains("role") || !m.contains("content")) {
            r.fail("prompt", "messages need 'role' and 'content'");
        }
        msgs.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    validate_chat(msgs);
    return msgs;
}

}  // namespace dataset_detail

/// {"system", "instruction", "input", "output"}; role markers are removed.
inline std::vector<SftRecord> load_sft(const std::filesystem::path& path, std::ostream* warn = &std::cerr) {
    std::vector<SftRecord> out;
    dataset_detail::for_each_line(path, RecordSchema::sft, [&](const auto& r) {
        SftRecord rec{r.string("system"), r.string("instruction"), r.string("input"), r.string("output")};
        rec = normalize(rec);
        templating_detail::validate_sft(rec);
        out.push_back(std::move(rec));
    });
    return dataset_detail::finish(std::move(out), path, warn);
}

/// {"prompt": string | [{"role", "content"}], "chosen", "rejected",
/// optional "source" and "score"}.
inline std::vector<PreferenceRecord> load_preferences(const std::filesystem::path& path,
                                                      std::ostream* warn = &std::cerr) {
    std::vector<PreferenceRecord> out;
    dataset_detail::for_each_line(path, RecordSchema::preference, [&](const auto& r) {
        PreferenceRecord rec;
        const auto& prompt = r.field("prompt");
        if (prompt.is_string()) {
            rec.prompt = strip_role_markers(prompt.template get<std::string>());
        } else if (prompt.is_array()) {
            rec.prompt = dataset_detail::parse_messages(r, prompt);
        } else {
            r.fail("prompt", "must be a string or a message list");
        }
        rec.chosen = r.string("chosen");
        rec.rejected = r.string("rejected");
        rec.source = r.string_or("source", "");
        if (rec.chosen.empty() || rec.rejected.empty()) r.fail("chosen/rejected", "must be non-empty");
        if (rec.chosen == rec.rejected) r.fail("rejected", "is identical to 'chosen'");
        rec.score = r.number_opt("score");
        out.push_back(std::move(rec));
    });
    return dataset_detail::finish(std::move(out), path, warn);
}

inline std::vector<RawDoc> load_raw(const std::filesystem::path& path, std::ostream* warn = &std::cerr) {
    std::vector<RawDoc> out;
    dataset_detail::for_each_line(path, RecordSchema::raw, [&](const auto& r) {
        RawDoc d{r.string("text"), r.string_or("lang", "")};
        if (templating_detail::trim(d.text).empty()) r.fail("text", "is empty");
        out.push_back(std::move(d));
    });
    return dataset_detail::finish(std::move(out), path, warn);
}

/// Task name is the file name up to its first '.'.
inline std::string task_name_from_path(const std::filesystem::path& path) {
    const auto name = path.filename().string();
    return name.substr(0, name.find('.'));
}

inline McTask load_mc_task(const std::filesystem::path& path, std::ostream* warn = &std::cerr) {
    McTask task;
    task.name = task_name_from_path(path);
    dataset_detail::for_each_line(path, RecordSchema::mc_task, [&](const auto& r) {
        McItem item;
        item.context = r.string("context");
        const auto& choices = r.field("choices");
        if (!choices.is_array()) r.fail("choices", "must be an array of strings");
        for (const auto& c : choices) {
            if (!c.is_string()) r.fail("choices", "must be an array of strings");
            item.choices.push_back(c.template get<std::string>());
        }
        const auto& gold = r.field("gold");
        if (!gold.is_number_integer() || gold.template get<long long>() < 0) r.fail("gold", "must be a non-negative integer");
        item.gold = gold.template get<std::size_t>();
        McTask one{task.name, {item}};
        one.validate();
        task.items.push_back(std::move(item));
    });
    if (task.items.empty() && warn) *warn << "warning: " << path.string() << " contains no records\n";
    return task;
}

inline GenTask load_gen_task(const std::filesystem::path& path, std::ostream* warn = &std::cerr) {
    GenTask task;
    task.name = task_name_from_path(path);
    dataset_detail::for_each_line(path, RecordSchema::gen_task, [&](const auto& r) {
        GenItem item{r.string("prompt"), r.string("answer")};
        if (item.answer.empty()) r.fail("answer", "is empty");
        task.items.push_back(std::move(item));
    });
    if (task.items.empty() && warn) *warn << "warning: " << path.string() << " contains no records\n";
    return task;
}

}  // namespace tinyadapt
