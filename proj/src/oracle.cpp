#include "rforge/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rforge::oracle {

namespace {

using Gram = std::vector<std::string>;

std::vector<Gram> all_ngrams(const TokenSeq& seq, int n) {
    std::vector<Gram> out;
    if (seq.size() < static_cast<std::size_t>(n)) return out;
    for (std::size_t i = 0; i + n <= seq.size(); ++i)
        out.emplace_back(seq.begin() + static_cast<long>(i),
                         seq.begin() + static_cast<long>(i) + n);
    return out;
}

int count_occurrences(const std::vector<Gram>& grams, const Gram& g) {
    int c = 0;
    for (const Gram& h : grams)
        if (h == g) ++c;
    return c;
}

int clipped_count(const std::vector<Gram>& cand, const std::vector<Gram>& ref) {
    int total = 0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        bool first = true;
        for (std::size_t j = 0; j < i; ++j)
            if (cand[j] == cand[i]) first = false;
        if (!first) continue;
        total += std::min(count_occurrences(cand, cand[i]), count_occurrences(ref, cand[i]));
    }
    return total;
}

double bp(std::size_t c, std::size_t r) {
    if (c == 0) return 0.0;
    if (c >= r) return 1.0;
    return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

bool is_subsequence(const TokenSeq& sub, const TokenSeq& seq) {
    std::size_t j = 0;
    for (const std::string& tok : seq) {
        if (j < sub.size() && sub[j] == tok) ++j;
    }
    return j == sub.size();
}

// Series and continued-fraction evaluations of the regularized incomplete
// gamma functions P and Q.
double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) return 1.0;
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_contfrac(a, x);
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size(), 0.0);
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

int lcs_exhaustive(const TokenSeq& candidate, const TokenSeq& reference) {
    const std::size_t n = candidate.size();
    int best = 0;
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
        TokenSeq sub;
        for (std::size_t i = 0; i < n; ++i)
            if ((mask >> i) & 1ull) sub.push_back(candidate[i]);
        if (static_cast<int>(sub.size()) <= best) continue;
        if (is_subsequence(sub, reference)) best = static_cast<int>(sub.size());
    }
    return best;
}

double bleu_bruteforce(const TokenSeq& candidate, const TokenSeq& reference, int k) {
    if (candidate.empty()) return 0.0;
    double product = 1.0;
    for (int n = 1; n <= k; ++n) {
        const auto cg = all_ngrams(candidate, n);
        const auto rg = all_ngrams(reference, n);
        if (cg.empty()) return 0.0;
        const int num = clipped_count(cg, rg);
        if (num == 0) return 0.0;
        product *= static_cast<double>(num) / static_cast<double>(cg.size());
    }
    return bp(candidate.size(), reference.size()) * std::pow(product, 1.0 / k);
}

double sacrebleu_bruteforce(const TokenSeq& candidate, const TokenSeq& reference) {
    if (candidate.empty()) return 0.0;
    const auto c1 = all_ngrams(candidate, 1);
    if (clipped_count(c1, all_ngrams(reference, 1)) == 0) return 0.0;
    double product = 1.0;
    int zeros = 0;
    for (int n = 1; n <= 4; ++n) {
        const auto cg = all_ngrams(candidate, n);
        const auto rg = all_ngrams(reference, n);
        const double denom = cg.empty() ? 1.0 : static_cast<double>(cg.size());
        double num = static_cast<double>(clipped_count(cg, rg));
        if (num == 0.0) {
            ++zeros;
            num = 1.0 / std::pow(2.0, zeros);
        }
        product *= num / denom;
    }
    return bp(candidate.size(), reference.size()) * std::pow(product, 0.25);
}

PrfBruteforce rouge_n_bruteforce(const TokenSeq& candidate, const TokenSeq& reference,
                                 int n) {
    const auto cg = all_ngrams(candidate, n);
    const auto rg = all_ngrams(reference, n);
    const int overlap = clipped_count(cg, rg);
    PrfBruteforce out;
    out.precision = cg.empty() ? 0.0 : static_cast<double>(overlap) / cg.size();
    out.recall = rg.empty() ? 0.0 : static_cast<double>(overlap) / rg.size();
    out.f1 = (out.precision + out.recall) > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

double cider_bruteforce(const TokenSeq& candidate, const TokenSeq& reference,
                        const std::vector<TokenSeq>& corpus_references) {
    const double num_docs = static_cast<double>(corpus_references.size());
    double sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        const auto cg = all_ngrams(candidate, n);
        const auto rg = all_ngrams(reference, n);
        // Union of observed n-grams forms the dense vector axes.
        std::vector<Gram> axes;
        for (const Gram& g : cg)
            if (count_occurrences(axes, g) == 0) axes.push_back(g);
        for (const Gram& g : rg)
            if (count_occurrences(axes, g) == 0) axes.push_back(g);

        std::vector<double> vc(axes.size()), vr(axes.size());
        for (std::size_t i = 0; i < axes.size(); ++i) {
            int df = 0;
            for (const TokenSeq& doc : corpus_references)
                if (count_occurrences(all_ngrams(doc, n), axes[i]) > 0) ++df;
            const double idf = std::log(num_docs / std::max(1, df));
            vc[i] = count_occurrences(cg, axes[i]) * idf;
            vr[i] = count_occurrences(rg, axes[i]) * idf;
        }
        double dot = 0.0, nc = 0.0, nr = 0.0;
        for (std::size_t i = 0; i < axes.size(); ++i) {
            dot += vc[i] * vr[i];
            nc += vc[i] * vc[i];
            nr += vr[i] * vr[i];
        }
        if (nc > 0.0 && nr > 0.0) sum += dot / (std::sqrt(nc) * std::sqrt(nr));
    }
    return 10.0 * sum / 4.0;
}

double chi2_pvalue(double statistic, int dof) {
    if (dof < 1) return 1.0;
    return gamma_q(static_cast<double>(dof) / 2.0, statistic / 2.0);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) return 0.0;
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace rforge::oracle
