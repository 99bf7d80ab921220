#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rforge/textnorm.hpp"

namespace rforge {

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

PRF make_prf(double p, double r);

// Full per-corpus score vector in the reporting column order:
// BLEU-1..4, SacreBLEU, METEOR, ROUGE-1/2/L, CIDEr, perplexity.
struct MetricReport {
    double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;
    double sacrebleu = 0.0;
    double meteor = 0.0;
    PRF rouge1, rouge2, rougeL;
    double cider = 0.0;
    std::optional<double> perplexity;
};

// Document frequencies of 1..4-grams over a reference corpus, for CIDEr.
struct IdfTable {
    int max_n = 4;
    std::unordered_map<std::string, int> doc_counts;
    int num_docs = 0;
};

// BLEU-k: geometric mean of clipped n-gram precisions for n = 1..k times the
// brevity penalty min(1, exp(1 - r/c)). Zero when any precision is zero or
// the candidate is empty.
double bleu_k(const TokenSeq& candidate, const TokenSeq& reference, int k);

// BLEU-4 with exponential smoothing: the j-th zero numerator (in order
// n = 1..4) is replaced by 1/2^j over the true denominator. A candidate with
// no unigram overlap at all scores 0.
double sacrebleu(const TokenSeq& candidate, const TokenSeq& reference);

PRF rouge_n(const TokenSeq& candidate, const TokenSeq& reference, int n);

// LCS-based ROUGE: P = |LCS|/|candidate|, R = |LCS|/|reference|.
PRF rouge_l(const TokenSeq& candidate, const TokenSeq& reference);

// Two-pass unigram alignment (exact, then suffix-strip stems) with the
// classic parameters: Fmean = 10PR/(R+9P), penalty = 0.5*(chunks/m)^3.
double meteor(const TokenSeq& candidate, const TokenSeq& reference);

// Suffix-stripping stemmer used by METEOR's second matching pass.
std::string meteor_stem(const std::string& word);

IdfTable build_idf(const std::vector<TokenSeq>& references);

// Mean over n = 1..4 of the cosine between TF-IDF n-gram vectors, times 10.
double cider(const TokenSeq& candidate, const TokenSeq& reference, const IdfTable& idf);

// exp(-mean) of natural-log token probabilities.
double perplexity(const std::vector<double>& token_logprobs);

// Macro-averaged corpus report. CIDEr idf is built from this corpus's
// references; perplexity is computed over the concatenation of the logprob
// lists when provided. Per-pair scoring may fan out over threads
// (RECIPE_FORGE_THREADS caps the worker count) with an ordered reduction,
// so results do not depend on the worker count.
MetricReport evaluate_corpus(const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                             const std::vector<std::vector<double>>* logprobs = nullptr);

// Serialization for reports: flat JSON object, and CSV/Markdown rows in the
// reporting column order.
std::string report_to_json(const MetricReport& report);
std::string report_csv_header();
std::string report_csv_row(const std::string& name, const MetricReport& report);
std::string report_markdown_header();
std::string report_markdown_row(const std::string& name, const MetricReport& report);

}  // namespace rforge
