#pragma once

#include <string>
#include <variant>
#include <vector>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/templating.hpp"
#include "tinyadapt/tokenizer.hpp"

namespace tinyadapt {

enum class LossMaskMode { response_only, full_sequence };

/// Token ids with the split point between context and supervised region:
/// targets ids[t] with t >= prompt_len are trained on (prompt_len >= 1).
struct TokenizedExample {
    std::vector<TokenId> ids;
    std::size_t prompt_len = 1;

    std::size_t supervised_count() const { return ids.size() - prompt_len; }
};

/// Joins prompt and response ids, dropping prompt tokens right after the
/// leading begin-of-text until the sequence fits. The response is never cut.
inline TokenizedExample fit_to_length(std::vector<TokenId> prompt, const std::vector<TokenId>& response,
                                      std::size_t max_seq_len) {
    if (prompt.empty()) throw DataError("example prompt must start with begin-of-text");
    if (response.empty()) throw DataError("example has no supervised tokens");
    if (response.size() + 1 > max_seq_len) {
        throw LengthError("response of " + std::to_string(response.size()) + " tokens does not fit max_seq_len " +
                          std::to_string(max_seq_len));
    }
    const std::size_t total = prompt.size() + response.size();
    if (total > max_seq_len) {
        const std::size_t drop = total - max_seq_len;
        prompt.erase(prompt.begin() + 1, prompt.begin() + 1 + static_cast<std::ptrdiff_t>(drop));
    }
    TokenizedExample ex;
    ex.prompt_len = prompt.size();
    ex.ids = std::move(prompt);
    ex.ids.insert(ex.ids.end(), response.begin(), response.end());
    return ex;
}

/// Alpaca-formatted record. response_only supervises output + <|eot_id|>;
/// full_sequence supervises every position after the first.
inline TokenizedExample encode_sft(const Vocabulary& v, const SftRecord& r, LossMaskMode mode,
                                   std::size_t max_seq_len) {
    std::vector<TokenId> prompt{v.bos()};
    const auto body = v.encode(alpaca_prompt_body(r), false);
    prompt.insert(prompt.end(), body.begin(), body.end());
    auto response = v.encode(r.output, false);
    response.push_back(v.eot());
    if (mode == LossMaskMode::response_only) return fit_to_length(std::move(prompt), response, max_seq_len);
    std::vector<TokenId> rest(prompt.begin() + 1, prompt.end());
    rest.insert(rest.end(), response.begin(), response.end());
    return fit_to_length({v.bos()}, rest, max_seq_len);
}

/// "<|begin_of_text|> {text} <|eot_id|>" with every position after the first
/// supervised. Documents longer than max_seq_len keep their leading tokens.
inline TokenizedExample encode_raw(const Vocabulary& v, const RawDoc& d, std::size_t max_seq_len) {
    (void)format_raw(d);  // validates the text
    auto body = v.encode(" " + d.text + " ", false);
    body.push_back(v.eot());
    if (body.size() + 1 > max_seq_len) body.resize(max_seq_len - 1);
    return fit_to_length({v.bos()}, body, max_seq_len);
}

/// Token-level format_chat: specials become single ids, message content is
/// always plain text.
inline std::vector<TokenId> encode_chat(const Vocabulary& v, const std::vector<ChatMessage>& messages,
                                        bool add_generation_prompt) {
    validate_chat(messages);
    std::vector<TokenId> ids{v.bos()};
    auto header = [&](Role role) {
        ids.push_back(v.special_id(kStartHeader));
        const auto name = v.encode(role_name(role), false);
        ids.insert(ids.end(), name.begin(), name.end());
        ids.push_back(v.special_id(kEndHeader));
        const auto nl = v.encode("\n", false);
        ids.insert(ids.end(), nl.begin(), nl.end());
    };
    for (const auto& m : messages) {
        header(m.role);
        const auto c = v.encode(m.content, false);
        ids.insert(ids.end(), c.begin(), c.end());
        ids.push_back(v.eot());
    }
    if (add_generation_prompt) header(Role::assistant);
    return ids;
}

using PreferencePrompt = std::variant<std::string, std::vector<ChatMessage>>;

inline std::vector<ChatMessage> as_messages(const PreferencePrompt& p) {
    if (const auto* s = std::get_if<std::string>(&p)) return {ChatMessage{Role::user, *s}};
    return std::get<std::vector<ChatMessage>>(p);
}

/// Chat-formatted prompt with the assistant header, completion + <|eot_id|>
/// as the supervised region.
inline TokenizedExample encode_completion(const Vocabulary& v, const PreferencePrompt& prompt,
                                          const std::string& completion, std::size_t max_seq_len) {
    auto ids = encode_chat(v, as_messages(prompt), true);
    auto response = v.encode(completion, false);
    response.push_back(v.eot());
    return fit_to_length(std::move(ids), response, max_seq_len);
}

}  // namespace tinyadapt
