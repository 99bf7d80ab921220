#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace rforge {

// Canonical token sequence shared by every metric and the toy LM vocabulary.
// Invariants: no token is empty, no token contains whitespace.
using TokenSeq = std::vector<std::string>;

// Bag of n-grams with multiplicity. Keys are the n tokens joined with a
// non-printing separator so they stay unambiguous.
struct NGramBag {
    int n = 1;
    std::unordered_map<std::string, int> counts;

    int total() const {
        int s = 0;
        for (const auto& kv : counts) s += kv.second;
        return s;
    }
};

// Joins n consecutive tokens into a bag key.
std::string ngram_key(const TokenSeq& seq, std::size_t start, int n);

// Lowercases, splits punctuation into standalone tokens, keeps numerals
// intact (including fractions like "1/2" and decimals like "3.5"), and
// collapses whitespace. Idempotent on its own space-joined output.
TokenSeq normalize(const std::string& text);

// All contiguous n-grams of seq with multiplicity; empty bag when |seq| < n.
NGramBag ngrams(const TokenSeq& seq, int n);

std::string join_tokens(const TokenSeq& seq);

}  // namespace rforge
