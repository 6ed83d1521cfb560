#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/ops.hpp"

namespace tinyadapt {

inline constexpr std::string_view kBeginOfText = "<|begin_of_text|>";
inline constexpr std::string_view kEotId = "<|eot_id|>";
inline constexpr std::string_view kStartHeader = "<|start_header_id|>";
inline constexpr std::string_view kEndHeader = "<|end_header_id|>";

struct SpecialTokens {
    std::string begin_of_text{kBeginOfText};
    std::string eot{kEotId};
    std::string start_header{kStartHeader};
    std::string end_header{kEndHeader};

    std::vector<std::string> ordered() const { return {begin_of_text, eot, start_header, end_header}; }
};

namespace bpe_detail {

/// GPT-2 style reversible byte -> printable code point table, used only to
/// store arbitrary byte strings inside JSON.
inline const std::array<std::uint32_t, 256>& byte_to_codepoint() {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        std::array<bool, 256> printable{};
        for (int b = '!'; b <= '~'; ++b) printable[b] = true;
        for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
        for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
        std::uint32_t extra = 0;
        for (int b = 0; b < 256; ++b) t[b] = printable[b] ? static_cast<std::uint32_t>(b) : 256 + extra++;
        return t;
    }();
    return table;
}

inline void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

inline std::string bytes_to_printable(const std::string& bytes) {
    std::string out;
    for (const char c : bytes) append_utf8(out, byte_to_codepoint()[static_cast<unsigned char>(c)]);
    return out;
}

inline std::string printable_to_bytes(const std::string& text) {
    static const auto inverse = [] {
        std::unordered_map<std::uint32_t, unsigned char> m;
        for (int b = 0; b < 256; ++b) m[byte_to_codepoint()[b]] = static_cast<unsigned char>(b);
        return m;
    }();
    std::string out;
    for (std::size_t i = 0; i < text.size();) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::uint32_t cp = 0;
        std::size_t len = 1;
        if (c < 0x80) {
            cp = c;
        } else if ((c & 0xE0) == 0xC0 && i + 1 < text.size()) {
            cp = ((c & 0x1Fu) << 6) | (static_cast<unsigned char>(text[i + 1]) & 0x3Fu);
            len = 2;
        } else if ((c & 0xF0) == 0xE0 && i + 2 < text.size()) {
            cp = ((c & 0x0Fu) << 12) | ((static_cast<unsigned char>(text[i + 1]) & 0x3Fu) << 6) |
                 (static_cast<unsigned char>(text[i + 2]) & 0x3Fu);
            len = 3;
        } else {
            throw FormatError("vocabulary token is not valid UTF-8");
        }
        const auto it = inverse.find(cp);
        if (it == inverse.end()) throw FormatError("vocabulary token contains unmapped code point");
        out += static_cast<char>(it->second);
        i += len;
    }
    return out;
}

inline bool is_space(unsigned char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; }

/// Pre-tokenization: every whitespace byte starts a new chunk, so merges
/// never cross a word boundary.
inline std::vector<std::string_view> split_chunks(std::string_view text) {
    std::vector<std::string_view> chunks;
    std::size_t start = 0;
    for (std::size_t i = 1; i < text.size(); ++i) {
        if (is_space(static_cast<unsigned char>(text[i]))) {
            chunks.push_back(text.substr(start, i - start));
            start = i;
        }
    }
    if (start < text.size()) chunks.push_back(text.substr(start));
    return chunks;
}

}  // namespace bpe_detail

/// Byte-level BPE vocabulary. Ids 0..255 are raw bytes, merged tokens follow
/// in the order they were learned, and the special tokens occupy the top ids.
class Vocabulary {
public:
    using Merge = std::pair<TokenId, TokenId>;

    static constexpr int kFormatVersion = 1;

    Vocabulary() : Vocabulary(SpecialTokens{}.ordered()) {}

    explicit Vocabulary(std::vector<std::string> specials) : specials_(std::move(specials)) {
        for (int b = 0; b < 256; ++b) tokens_.emplace_back(1, static_cast<char>(b));
        rebuild_lookup();
    }

    std::size_t size() const { return tokens_.size() + specials_.size(); }
    std::size_t merge_count() const { return merges_.size(); }
    const std::vector<Merge>& merges() const { return merges_; }
    const std::vector<std::string>& specials() const { return specials_; }

    TokenId special_id(std::string_view literal) const {
        for (std::size_t i = 0; i < specials_.size(); ++i)
            if (specials_[i] == literal) return static_cast<TokenId>(tokens_.size() + i);
        throw ConfigError("unknown special token '" + std::string(literal) + "'");
    }
    bool is_special(TokenId id) const {
        return id >= static_cast<TokenId>(tokens_.size()) && id < static_cast<TokenId>(size());
    }
    TokenId bos() const { return special_id(kBeginOfText); }
    TokenId eot() const { return special_id(kEotId); }

    const std::string& token_bytes(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= size()) {
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
        }
        const auto u = static_cast<std::size_t>(id);
        return u < tokens_.size() ? tokens_[u] : specials_[u - tokens_.size()];
    }

    /// Registers merge (left, right); reuses an existing id when the merged
    /// byte string is already a token.
    TokenId add_merge(TokenId left, TokenId right) {
        const std::string merged = token_bytes(left) + token_bytes(right);
        if (is_special(left) || is_special(right)) throw DataError("special tokens never take part in merges");
        TokenId id;
        if (const auto it = by_bytes_.find(merged); it != by_bytes_.end()) {
            id = it->second;
        } else {
            id = static_cast<TokenId>(tokens_.size());
            tokens_.push_back(merged);
            by_bytes_.emplace(merged, id);
        }
        merge_rank_.emplace(key(left, right), std::make_pair(static_cast<std::uint32_t>(merges_.size()), id));
        merges_.emplace_back(left, right);
        return id;
    }

    /// With parse_special, literal special strings map to their single ids;
    /// otherwise they are encoded as ordinary bytes.
    std::vector<TokenId> encode(std::string_view text, bool parse_special) const {
        std::vector<TokenId> out;
        if (!parse_special) {
            encode_plain(text, out);
            return out;
        }
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t best_at = std::string_view::npos;
            std::size_t best_idx = 0;
            for (std::size_t i = 0; i < specials_.size(); ++i) {
                const auto at = text.find(specials_[i], pos);
                if (at < best_at || (at == best_at && at != std::string_view::npos &&
                                     specials_[i].size() > specials_[best_idx].size())) {
                    best_at = at;
                    best_idx = i;
                }
            }
            if (best_at == std::string_view::npos) {
                encode_plain(text.substr(pos), out);
                break;
            }
            encode_plain(text.substr(pos, best_at - pos), out);
            out.push_back(static_cast<TokenId>(tokens_.size() + best_idx));
            pos = best_at + specials_[best_idx].size();
        }
        return out;
    }

    std::string decode(std::span<const TokenId> ids) const {
        std::string out;
        for (const auto id : ids) out += token_bytes(id);
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json merges = nlohmann::json::array();
        for (const auto& [l, r] : merges_) {
            merges.push_back({bpe_detail::bytes_to_printable(token_bytes(l)), bpe_detail::bytes_to_printable(token_bytes(r))});
        }
        return {{"version", kFormatVersion}, {"merges", merges}, {"specials", specials_}};
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        if (!j.is_object() || !j.contains("version") || !j.contains("merges") || !j.contains("specials")) {
            throw FormatError("vocabulary file needs 'version', 'merges' and 'specials'");
        }
        if (j.at("version") != kFormatVersion) throw FormatError("unsupported vocabulary version " + j.at("version").dump());
        Vocabulary v(j.at("specials").get<std::vector<std::string>>());
        for (const auto& m : j.at("merges")) {
            if (!m.is_array() || m.size() != 2) throw FormatError("merge entries must be string pairs");
            const auto l = v.lookup_bytes(bpe_detail::printable_to_bytes(m[0].get<std::string>()));
            const auto r = v.lookup_bytes(bpe_detail::printable_to_bytes(m[1].get<std::string>()));
            v.add_merge(l, r);
        }
        return v;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("cannot write vocabulary to " + path.string());
        os << to_json().dump(1) << '\n';
    }

    static Vocabulary load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError("cannot read vocabulary " + path.string());
        try {
            return from_json(nlohmann::json::parse(is));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("vocabulary ") + path.string() + ": " + e.what());
        }
    }

private:
    static std::uint64_t key(TokenId l, TokenId r) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
    }

    TokenId lookup_bytes(const std::string& bytes) const {
        const auto it = by_bytes_.find(bytes);
        if (it == by_bytes_.end()) throw FormatError("merge references unknown token");
        return it->second;
    }

    void rebuild_lookup() {
        by_bytes_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) by_bytes_.emplace(tokens_[i], static_cast<TokenId>(i));
    }

    void encode_plain(std::string_view text, std::vector<TokenId>& out) const {
        for (const auto chunk : bpe_detail::split_chunks(text)) {
            std::vector<TokenId> ids;
            ids.reserve(chunk.size());
            for (const char c : chunk) ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
            while (ids.size() > 1) {
                std::uint32_t best_rank = UINT32_MAX;
                TokenId best_id = -1;
                std::size_t best_pos = 0;
                for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
                    const auto it = merge_rank_.find(key(ids[i], ids[i + 1]));
                    if (it != merge_rank_.end() && it->second.first < best_rank) {
                        best_rank = it->second.first;
                        best_id = it->second.second;
                        best_pos = i;
                    }
                }
                if (best_id < 0) break;
                const Merge pair{ids[best_pos], ids[best_pos + 1]};
                std::vector<TokenId> next;
                next.reserve(ids.size());
                for (std::size_t i = 0; i < ids.size();) {
                    if (i + 1 < ids.size() && ids[i] == pair.first && ids[i + 1] == pair.second) {
                        next.push_back(best_id);
                        i += 2;
                    } else {
                        next.push_back(ids[i++]);
                    }
                }
                ids.swap(next);
            }
            out.insert(out.end(), ids.begin(), ids.end());
        }
    }

    std::vector<std::string> tokens_;  // non-special tokens by id
    std::vector<std::string> specials_;
    std::vector<Merge> merges_;
    std::unordered_map<std::uint64_t, std::pair<std::uint32_t, TokenId>> merge_rank_;
    std::unordered_map<std::string, TokenId> by_bytes_;
};

/// Greedy BPE: repeatedly merge the most frequent adjacent pair (ties go to
/// the lexicographically smallest (left, right) id pair) until the vocabulary
/// holds vocab_size entries or no pair occurs more than once. Special strings
/// in the corpus are plain bytes here.
inline Vocabulary train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size,
                            const SpecialTokens& special = {}) {
    const auto specials = special.ordered();
    if (vocab_size < 256 + specials.size()) {
        throw ConfigError("vocab_size " + std::to_string(vocab_size) + " is below the byte-level minimum " +
                          std::to_string(256 + specials.size()));
    }
    std::map<std::string, std::uint64_t> chunk_freq;
    for (const auto& doc : corpus)
        for (const auto chunk : bpe_detail::split_chunks(doc)) ++chunk_freq[std::string(chunk)];
    if (chunk_freq.empty()) throw DataError("train_bpe: corpus is empty");

    struct Word {
        std::vector<TokenId> ids;
        std::uint64_t freq;
    };
    std::vector<Word> words;
    words.reserve(chunk_freq.size());
    for (const auto& [chunk, freq] : chunk_freq) {
        Word w{{}, freq};
        for (const char c : chunk) w.ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
        words.push_back(std::move(w));
    }

    Vocabulary vocab(specials);
    while (vocab.size() < vocab_size) {
        std::map<std::pair<TokenId, TokenId>, std::uint64_t> counts;
        for (const auto& w : words)
            for (std::size_t i = 0; i + 1 < w.ids.size(); ++i) counts[{w.ids[i], w.ids[i + 1]}] += w.freq;
        std::pair<TokenId, TokenId> best{-1, -1};
        std::uint64_t best_count = 0;
        for (const auto& [pair, count] : counts) {
            if (count > best_count) {  // map order gives the lowest pair among ties
                best = pair;
                best_count = count;
            }
        }
        if (best_count < 2) break;
        const TokenId id = vocab.add_merge(best.first, best.second);
        for (auto& w : words) {
            std::vector<TokenId> next;
            next.reserve(w.ids.size());
            for (std::size_t i = 0; i < w.ids.size();) {
                if (i + 1 < w.ids.size() && w.ids[i] == best.first && w.ids[i + 1] == best.second) {
                    next.push_back(id);
                    i += 2;
                } else {
                    next.push_back(w.ids[i++]);
                }
            }
            w.ids.swap(next);
        }
    }
    return vocab;
}

}  // namespace tinyadapt
