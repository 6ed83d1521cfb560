#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/tokenizer.hpp"

namespace tinyadapt {

inline constexpr std::string_view kHumanMarker = "<< human >>:";
inline constexpr std::string_view kAssistantMarker = "<< assistant >>:";

/// Default REPL system prompt.
inline constexpr std::string_view kDefaultSystemPrompt =
    "Sei un an assistente AI per la lingua Italiana di nome LLaMAntino-3 ANITA "
    "(Advanced Natural-based interaction for the ITALian language). Rispondi "
    "nella lingua usata per la domanda in modo chiaro, semplice ed esaustivo.";

inline constexpr std::string_view kResponseHeader = "### Response:\n";

struct SftRecord {
    std::string system;
    std::string instruction;
    std::string input;
    std::string output;

    bool operator==(const SftRecord&) const = default;
};

enum class Role { system, user, assistant };

inline std::string_view role_name(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

inline Role parse_role(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw DataError("unknown chat role '" + std::string(s) + "'");
}

struct ChatMessage {
    Role role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct RawDoc {
    std::string text;
    std::string lang;
};

namespace templating_detail {

inline bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_ws(s[b])) ++b;
    while (e > b && is_ws(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

inline bool has_role_marker(std::string_view s) {
    return s.find(kHumanMarker) != std::string_view::npos || s.find(kAssistantMarker) != std::string_view::npos;
}

}  // namespace templating_detail

/// Deletes every "<< human >>:" / "<< assistant >>:" marker, replacing the
/// marker and the whitespace around it with one space, then trims.
inline std::string strip_role_markers(std::string_view text) {
    using templating_detail::is_ws;
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto h = text.find(kHumanMarker, pos);
        const auto a = text.find(kAssistantMarker, pos);
        const auto at = std::min(h, a);
        if (at == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        out.append(text.substr(pos, at - pos));
        while (!out.empty() && is_ws(out.back())) out.pop_back();
        pos = at + (at == h ? kHumanMarker.size() : kAssistantMarker.size());
        while (pos < text.size() && is_ws(text[pos])) ++pos;
        out.push_back(' ');
    }
    return templating_detail::trim(out);
}

inline SftRecord normalize(SftRecord r) {
    r.system = strip_role_markers(r.system);
    r.instruction = strip_role_markers(r.instruction);
    r.input = strip_role_markers(r.input);
    r.output = strip_role_markers(r.output);
    return r;
}

namespace templating_detail {

inline void validate_sft(const SftRecord& r) {
    if (r.instruction.empty()) throw DataError("sft record has an empty instruction");
    if (r.output.empty()) throw DataError("sft record has an empty output");
    for (const auto* f : {&r.system, &r.instruction, &r.input, &r.output}) {
        if (has_role_marker(*f)) throw DataError("sft record still contains a role marker; run strip_role_markers first");
    }
}

}  // namespace templating_detail

/// Alpaca body up to and including "### Response:\n" (no special tokens).
inline std::string alpaca_prompt_body(const SftRecord& r) {
    templating_detail::validate_sft(r);
    std::string s = r.system + "\n\n### Instruction:\n" + r.instruction;
    if (!r.input.empty()) s += "\n\n### Input:\n" + r.input;
    s += "\n\n";
    s += kResponseHeader;
    return s;
}

/// "<|begin_of_text|>{system}\n\n### Instruction:\n{instruction}[\n\n### Input:\n{input}]\n\n### Response:\n{output}<|eot_id|>"
inline std::string format_alpaca(const SftRecord& r) {
    return std::string(kBeginOfText) + alpaca_prompt_body(r) + r.output + std::string(kEotId);
}

/// Optional leading system message, then user/assistant alternating from user.
inline void validate_chat(const std::vector<ChatMessage>& messages) {
    std::size_t i = 0;
    if (!messages.empty() && messages[0].role == Role::system) i = 1;
    for (std::size_t k = 0; i < messages.size(); ++i, ++k) {
        const Role expected = k % 2 == 0 ? Role::user : Role::assistant;
        if (messages[i].role != expected) {
            throw DataError("chat message " + std::to_string(i) + " has role '" + std::string(role_name(messages[i].role)) +
                            "', expected '" + std::string(role_name(expected)) + "'");
        }
    }
}

inline std::string chat_header(Role role) {
    return std::string(kStartHeader) + std::string(role_name(role)) + std::string(kEndHeader) + "\n";
}

inline std::string format_chat(const std::vector<ChatMessage>& messages, bool add_generation_prompt) {
    validate_chat(messages);
    std::string s(kBeginOfText);
    for (const auto& m : messages) s += chat_header(m.role) + m.content + std::string(kEotId);
    if (add_generation_prompt) s += chat_header(Role::assistant);
    return s;
}

/// "<|begin_of_text|> {text} <|eot_id|>", spaces included.
inline std::string format_raw(const RawDoc& d) {
    if (templating_detail::trim(d.text).empty()) throw DataError("raw document text is empty");
    return std::string(kBeginOfText) + " " + d.text + " " + std::string(kEotId);
}

}  // namespace tinyadapt
