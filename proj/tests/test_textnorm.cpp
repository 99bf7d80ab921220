#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rforge/textnorm.hpp"

using namespace rforge;

TEST_CASE("normalize basic rules") {
    CHECK(normalize("Mix Well.") == TokenSeq{"mix", "well", "."});
    CHECK(normalize("") == TokenSeq{});
    CHECK(normalize("Bake at 350 degrees F.") ==
          TokenSeq{"bake", "at", "350", "degrees", "f", "."});
}

TEST_CASE("normalize keeps numerals intact") {
    CHECK(normalize("1/2 cup") == TokenSeq{"1/2", "cup"});
    CHECK(normalize("3.5 oz") == TokenSeq{"3.5", "oz"});
    // A slash between non-digits still splits.
    CHECK(normalize("a/b") == TokenSeq{"a", "/", "b"});
}

TEST_CASE("normalize collapses whitespace") {
    CHECK(normalize("  mix \t well \n ") == TokenSeq{"mix", "well"});
}

TEST_CASE("normalize token invariants") {
    const TokenSeq toks = normalize("Stir, then (gently) fold-in 1/2 cup!");
    for (const std::string& t : toks) {
        CHECK(!t.empty());
        CHECK(t.find(' ') == std::string::npos);
    }
}

TEST_CASE("normalize idempotent on rejoined output") {
    for (const char* text : {"Mix Well.", "Bake at 350 degrees F.", "1/2 cup, sifted",
                             "Serve the SOUP   warm!"}) {
        const TokenSeq once = normalize(text);
        CHECK(normalize(join_tokens(once)) == once);
    }
}

TEST_CASE("ngrams counting") {
    const TokenSeq seq = {"a", "b", "a"};
    const NGramBag uni = ngrams(seq, 1);
    CHECK(uni.counts.at(ngram_key(seq, 0, 1)) == 2);  // "a"
    CHECK(uni.counts.at(ngram_key(seq, 1, 1)) == 1);  // "b"
    CHECK(uni.counts.size() == 2);

    const NGramBag tri = ngrams(seq, 3);
    CHECK(tri.counts.size() == 1);
    CHECK(tri.counts.at(ngram_key(seq, 0, 3)) == 1);

    CHECK(ngrams({"a", "b"}, 3).counts.empty());
}

TEST_CASE("ngrams total count property") {
    const TokenSeq seq = {"a", "b", "a", "c", "a", "b"};
    for (int n = 1; n <= 7; ++n) {
        const int expect = std::max(0, static_cast<int>(seq.size()) - n + 1);
        CHECK(ngrams(seq, n).total() == expect);
    }
}
