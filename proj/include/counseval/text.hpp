#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <unicode/unorm2.h>
#include <unicode/ustring.h>

namespace counseval {

struct DecodedChar {
    char32_t cp;
    std::size_t offset; // byte offset in the source string
    std::size_t size;   // byte length of the encoded codepoint
};

// Decodes UTF-8; ill-formed sequences come back as one U+FFFD per bad byte.
inline std::vector<DecodedChar> utf8_decode(std::string_view s) {
    std::vector<DecodedChar> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char b0 = static_cast<unsigned char>(s[i]);
        char32_t cp = 0xFFFD;
        std::size_t len = 1;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0 && i + 1 < s.size() &&
                   (static_cast<unsigned char>(s[i + 1]) & 0xC0) == 0x80) {
            cp = (char32_t(b0 & 0x1F) << 6) | (static_cast<unsigned char>(s[i + 1]) & 0x3F);
            len = 2;
            if (cp < 0x80) cp = 0xFFFD; // overlong
        } else if ((b0 & 0xF0) == 0xE0 && i + 2 < s.size() &&
                   (static_cast<unsigned char>(s[i + 1]) & 0xC0) == 0x80 &&
                   (static_cast<unsigned char>(s[i + 2]) & 0xC0) == 0x80) {
            cp = (char32_t(b0 & 0x0F) << 12) |
                 (char32_t(static_cast<unsigned char>(s[i + 1]) & 0x3F) << 6) |
                 (static_cast<unsigned char>(s[i + 2]) & 0x3F);
            len = 3;
            if (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
        } else if ((b0 & 0xF8) == 0xF0 && i + 3 < s.size() &&
                   (static_cast<unsigned char>(s[i + 1]) & 0xC0) == 0x80 &&
                   (static_cast<unsigned char>(s[i + 2]) & 0xC0) == 0x80 &&
                   (static_cast<unsigned char>(s[i + 3]) & 0xC0) == 0x80) {
            cp = (char32_t(b0 & 0x07) << 18) |
                 (char32_t(static_cast<unsigned char>(s[i + 1]) & 0x3F) << 12) |
                 (char32_t(static_cast<unsigned char>(s[i + 2]) & 0x3F) << 6) |
                 (static_cast<unsigned char>(s[i + 3]) & 0x3F);
            len = 4;
            if (cp < 0x10000 || cp > 0x10FFFF) cp = 0xFFFD;
        }
        if (cp == 0xFFFD && len > 1) len = 1;
        out.push_back({cp, i, len});
        i += len;
    }
    return out;
}

inline void utf8_append(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::size_t utf8_codepoint_count(std::string_view s) {
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

// Canonical NFC via ICU. Ill-formed input bytes are substituted with U+FFFD.
inline std::string nfc_normalize(std::string_view s) {
    if (s.empty()) return {};
    UErrorCode ec = U_ZERO_ERROR;
    const UNormalizer2* norm = unorm2_getNFCInstance(&ec);
    if (U_FAILURE(ec)) throw std::runtime_error("ICU NFC instance unavailable");

    int32_t ulen = 0;
    ec = U_ZERO_ERROR;
    u_strFromUTF8WithSub(nullptr, 0, &ulen, s.data(), static_cast<int32_t>(s.size()),
                         0xFFFD, nullptr, &ec);
    std::vector<UChar> u16(static_cast<std::size_t>(ulen) + 1);
    ec = U_ZERO_ERROR;
    u_strFromUTF8WithSub(u16.data(), ulen + 1, nullptr, s.data(),
                         static_cast<int32_t>(s.size()), 0xFFFD, nullptr, &ec);
    if (U_FAILURE(ec)) throw std::runtime_error("UTF-8 to UTF-16 conversion failed");

    ec = U_ZERO_ERROR;
    int32_t nlen = unorm2_normalize(norm, u16.data(), ulen, nullptr, 0, &ec);
    std::vector<UChar> nrm(static_cast<std::size_t>(nlen) + 1);
    ec = U_ZERO_ERROR;
    unorm2_normalize(norm, u16.data(), ulen, nrm.data(), nlen + 1, &ec);
    if (U_FAILURE(ec)) throw std::runtime_error("NFC normalization failed");

    int32_t olen = 0;
    ec = U_ZERO_ERROR;
    u_strToUTF8(nullptr, 0, &olen, nrm.data(), nlen, &ec);
    std::string out(static_cast<std::size_t>(olen), '\0');
    ec = U_ZERO_ERROR;
    u_strToUTF8(out.data(), olen + 1, nullptr, nrm.data(), nlen, &ec);
    if (U_FAILURE(ec)) throw std::runtime_error("UTF-16 to UTF-8 conversion failed");
    return out;
}

inline bool is_space_cp(char32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
        case 0x20: case 0x85: case 0xA0: case 0x1680:
        case 0x2028: case 0x2029: case 0x202F: case 0x205F:
        case 0x3000: case 0xFEFF:
            return true;
        default:
            // general-punctuation spaces and zero-width/directional marks
            return (cp >= 0x2000 && cp <= 0x200F);
    }
}

// Curated punctuation/symbol set covering ASCII plus the blocks that occur in
// Hebrew, Arabic and general text. Everything that is neither whitespace nor
// listed here counts as a word character (letters, marks and digits of any
// script), which is what the tokenizer wants.
inline bool is_punct_cp(char32_t cp) {
    if (cp < 0x80) {
        return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
               (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
    }
    switch (cp) {
        case 0xA1: case 0xA6: case 0xA7: case 0xAB: case 0xB6: case 0xB7:
        case 0xBB: case 0xBF: case 0xD7: case 0xF7:
        case 0x05BE: case 0x05C0: case 0x05C3: case 0x05F3: case 0x05F4: // Hebrew maqaf/paseq/geresh
        case 0x060C: case 0x060D: case 0x061B: case 0x061E: case 0x061F: // Arabic comma/semicolon/qmark
        case 0x066A: case 0x066B: case 0x066C: case 0x066D: case 0x06D4:
            return true;
        default:
            return (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
                   (cp >= 0x3001 && cp <= 0x303F) ||
                   (cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
                   (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65);
    }
}

inline bool is_word_cp(char32_t cp) { return !is_space_cp(cp) && !is_punct_cp(cp); }

// Simple case fold for the common bicameral ranges (ASCII, Latin-1, Greek,
// Cyrillic). Hebrew and Arabic have no case, so this is a no-op for them.
inline char32_t fold_case_cp(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
    if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 0x20;
    if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;
    if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
    return cp;
}

inline std::string fold_case(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (const auto& d : utf8_decode(s)) utf8_append(out, fold_case_cp(d.cp));
    return out;
}

struct RawTokens {
    std::vector<std::string> tokens;                       // case-folded token text
    std::vector<std::pair<std::size_t, std::size_t>> spans; // byte spans into source
    std::string source;                                     // NFC-normalized input
};

// Shared tokenization: NFC-normalize, then emit maximal runs of word
// characters (letters, marks, digits of any script) plus each punctuation
// character as its own token; whitespace is dropped and cased scripts are
// folded. Spans are byte offsets into the normalized source.
inline RawTokens tokenize_core(std::string_view text) {
    RawTokens out;
    out.source = nfc_normalize(text);
    const auto cps = utf8_decode(out.source);
    std::string run;
    std::size_t run_begin = 0;
    auto flush = [&](std::size_t end_offset) {
        if (!run.empty()) {
            out.tokens.push_back(run);
            out.spans.emplace_back(run_begin, end_offset);
            run.clear();
        }
    };
    for (const DecodedChar& d : cps) {
        if (is_space_cp(d.cp)) {
            flush(d.offset);
        } else if (is_punct_cp(d.cp)) {
            flush(d.offset);
            std::string p;
            utf8_append(p, d.cp);
            out.tokens.push_back(std::move(p));
            out.spans.emplace_back(d.offset, d.offset + d.size);
        } else {
            if (run.empty()) run_begin = d.offset;
            utf8_append(run, fold_case_cp(d.cp));
        }
    }
    flush(out.source.size());
    return out;
}

inline std::vector<std::string> word_tokens(std::string_view text) {
    return tokenize_core(text).tokens;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    auto is_ascii_space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
    };
    while (b < e && is_ascii_space(s[b])) ++b;
    while (e > b && is_ascii_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

} // namespace counseval
