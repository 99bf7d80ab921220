#pragma once

#include <string>
#include <vector>

#include "rforge/textnorm.hpp"

namespace rforge::oracle {

// Independent brute-force transcriptions of the metric formulas, kept
// deliberately separate from the production implementations in metrics.cpp.
// They exist only to cross-check; never call them from the scoring path.

// Longest common subsequence by exhaustive subsequence enumeration
// (2^|candidate| candidates; fine for |candidate| <= ~20).
int lcs_exhaustive(const TokenSeq& candidate, const TokenSeq& reference);

double bleu_bruteforce(const TokenSeq& candidate, const TokenSeq& reference, int k);
double sacrebleu_bruteforce(const TokenSeq& candidate, const TokenSeq& reference);

struct PrfBruteforce {
    double precision = 0, recall = 0, f1 = 0;
};
PrfBruteforce rouge_n_bruteforce(const TokenSeq& candidate, const TokenSeq& reference,
                                 int n);

// Dense-vector cosine over the union of observed n-grams in the whole
// reference corpus.
double cider_bruteforce(const TokenSeq& candidate, const TokenSeq& reference,
                        const std::vector<TokenSeq>& corpus_references);

// Upper-tail chi-squared p-value, via the regularized incomplete gamma.
double chi2_pvalue(double statistic, int dof);

// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace rforge::oracle
