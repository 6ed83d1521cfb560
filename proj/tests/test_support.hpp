#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "tinyadapt/rng.hpp"
#include "tinyadapt/tokenizer.hpp"

namespace tinyadapt::fixtures {

inline void put_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

/// Random valid UTF-8 mixing ASCII, whitespace, accented Latin, CJK and
/// astral code points (surrogates excluded).
inline std::string random_utf8(Rng& rng, std::size_t max_chars) {
    std::string s;
    const std::size_t n = rng.below(max_chars + 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t cp = 0;
        switch (rng.below(6)) {
            case 0: cp = static_cast<std::uint32_t>(0x20 + rng.below(0x5F)); break;
            case 1: cp = std::array<std::uint32_t, 4>{' ', '\n', '\t', '\r'}[rng.below(4)]; break;
            case 2: cp = static_cast<std::uint32_t>(0xC0 + rng.below(0x140)); break;
            case 3: cp = static_cast<std::uint32_t>(0x4E00 + rng.below(0x5000)); break;
            case 4: cp = static_cast<std::uint32_t>(0x1F300 + rng.below(0x300)); break;
            default: cp = static_cast<std::uint32_t>(rng.below(0x80)); break;
        }
        put_utf8(s, cp);
    }
    return s;
}

/// Text with special literals, partial literals and near misses spliced in.
inline std::string adversarial_special_text(Rng& rng) {
    static const std::array<std::string_view, 10> pieces{
        kBeginOfText, kEotId,         kStartHeader, kEndHeader, "<|eot_id",
        "|>",         "<|<|eot_id|>|>", "<|begin_of_", "text|>",  "<|start_header_id|><|end_header_id|>"};
    std::string s;
    const std::size_t n = 1 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
        if (rng.below(2)) s += pieces[rng.below(pieces.size())];
        s += random_utf8(rng, 4);
    }
    return s;
}

/// Training text drawn from a small alphabet so that merges repeat.
inline std::string small_alphabet_text(Rng& rng, std::size_t len) {
    static constexpr std::string_view alphabet = "aab ba\ncab";
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
    return s;
}

}  // namespace tinyadapt::fixtures
