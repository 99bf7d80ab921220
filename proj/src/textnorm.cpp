#include "rforge/textnorm.hpp"

#include <cctype>

#include "rforge/errors.hpp"

namespace rforge {

namespace {

bool is_word_char(unsigned char c) {
    // Bytes >= 128 (UTF-8 continuation/lead bytes) are treated as letters;
    // no Unicode handling beyond ASCII case folding.
    return std::isalnum(c) != 0 || c >= 128;
}

bool is_space_char(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace

std::string ngram_key(const TokenSeq& seq, std::size_t start, int n) {
    std::string key;
    for (int i = 0; i < n; ++i) {
        if (i > 0) key.push_back('\x1f');
        key += seq[start + static_cast<std::size_t>(i)];
    }
    return key;
}

TokenSeq normalize(const std::string& text) {
    TokenSeq out;
    std::string cur;
    const std::size_t len = text.size();
    for (std::size_t i = 0; i < len; ++i) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_char(c)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            continue;
        }
        if (is_word_char(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
            continue;
        }
        // Punctuation. '.', ',' and '/' between two digits stay inside the
        // numeral ("3.5", "1/2"); everything else becomes its own token.
        const bool numeric_sep =
            (c == '.' || c == ',' || c == '/') && !cur.empty() &&
            std::isdigit(static_cast<unsigned char>(cur.back())) != 0 &&
            i + 1 < len && std::isdigit(static_cast<unsigned char>(text[i + 1])) != 0;
        if (numeric_sep) {
            cur.push_back(static_cast<char>(c));
            continue;
        }
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
        out.emplace_back(1, static_cast<char>(c));
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

NGramBag ngrams(const TokenSeq& seq, int n) {
    if (n < 1) throw ArgError("ngrams: n must be >= 1");
    NGramBag bag;
    bag.n = n;
    if (seq.size() < static_cast<std::size_t>(n)) return bag;
    const std::size_t windows = seq.size() - static_cast<std::size_t>(n) + 1;
    for (std::size_t i = 0; i < windows; ++i) {
        ++bag.counts[ngram_key(seq, i, n)];
    }
    return bag;
}

std::string join_tokens(const TokenSeq& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += seq[i];
    }
    return out;
}

}  // namespace rforge
