#include "rforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rforge/errors.hpp"

namespace rforge {

namespace {

// Clipped n-gram overlap: each candidate n-gram's credit is capped by its
// count in the reference.
int clipped_matches(const NGramBag& cand, const NGramBag& ref) {
    int overlap = 0;
    for (const auto& kv : cand.counts) {
        const auto it = ref.counts.find(kv.first);
        if (it != ref.counts.end()) overlap += std::min(kv.second, it->second);
    }
    return overlap;
}

double brevity_penalty(std::size_t cand_len, std::size_t ref_len) {
    if (cand_len == 0) return 0.0;
    if (cand_len >= ref_len) return 1.0;
    return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
}

// --- METEOR alignment -------------------------------------------------

using EqFn = bool (*)(const std::string&, const std::string&);

bool eq_exact(const std::string& a, const std::string& b) { return a == b; }
bool eq_stem(const std::string& a, const std::string& b) {
    return meteor_stem(a) == meteor_stem(b);
}

// Greedy longest-common-fragment matching over still-unmatched positions.
// Matching fragments (rather than single words) keeps the chunk count low,
// and every common unigram eventually matches, so the match count is maximal
// for the stage's equivalence.
void align_stage(const TokenSeq& cand, const TokenSeq& ref, EqFn eq,
                 std::vector<int>& cand_to_ref, std::vector<bool>& ref_used) {
    for (;;) {
        std::size_t best_i = 0, best_j = 0, best_len = 0;
        for (std::size_t i = 0; i < cand.size(); ++i) {
            if (cand_to_ref[i] >= 0) continue;
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (ref_used[j]) continue;
                std::size_t len = 0;
                while (i + len < cand.size() && j + len < ref.size() &&
                       cand_to_ref[i + len] < 0 && !ref_used[j + len] &&
                       eq(cand[i + len], ref[j + len]))
                    ++len;
                if (len > best_len) {
                    best_len = len;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        if (best_len == 0) return;
        for (std::size_t t = 0; t < best_len; ++t) {
            cand_to_ref[best_i + t] = static_cast<int>(best_j + t);
            ref_used[best_j + t] = true;
        }
    }
}

struct PairScores {
    double bleu1, bleu2, bleu3, bleu4, sacre, met;
    PRF r1, r2, rl;
    double cid;
};

}  // namespace

PRF make_prf(double p, double r) {
    PRF out;
    out.precision = p;
    out.recall = r;
    out.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
    return out;
}

double bleu_k(const TokenSeq& candidate, const TokenSeq& reference, int k) {
    if (k < 1 || k > 4) throw ArgError("bleu_k: k must be in 1..4");
    if (candidate.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= k; ++n) {
        const NGramBag cb = ngrams(candidate, n);
        const NGramBag rb = ngrams(reference, n);
        const int denom = cb.total();
        if (denom == 0) return 0.0;
        const int num = clipped_matches(cb, rb);
        if (num == 0) return 0.0;
        log_sum += std::log(static_cast<double>(num) / denom);
    }
    return brevity_penalty(candidate.size(), reference.size()) * std::exp(log_sum / k);
}

double sacrebleu(const TokenSeq& candidate, const TokenSeq& reference) {
    if (candidate.empty()) return 0.0;
    // No unigram overlap at all means no signal to smooth; score 0. This also
    // makes the zero-overlap scaling-penalty case exact.
    {
        const NGramBag c1 = ngrams(candidate, 1);
        const NGramBag r1 = ngrams(reference, 1);
        if (clipped_matches(c1, r1) == 0) return 0.0;
    }
    double log_sum = 0.0;
    int zeros_seen = 0;
    for (int n = 1; n <= 4; ++n) {
        const NGramBag cb = ngrams(candidate, n);
        const NGramBag rb = ngrams(reference, n);
        const double denom = std::max(cb.total(), 1);
        double num = static_cast<double>(clipped_matches(cb, rb));
        if (num == 0.0) {
            ++zeros_seen;
            num = 1.0 / std::pow(2.0, zeros_seen);
        }
        log_sum += std::log(num / denom);
    }
    return brevity_penalty(candidate.size(), reference.size()) * std::exp(log_sum / 4.0);
}

PRF rouge_n(const TokenSeq& candidate, const TokenSeq& reference, int n) {
    if (n < 1) throw ArgError("rouge_n: n must be >= 1");
    const NGramBag cb = ngrams(candidate, n);
    const NGramBag rb = ngrams(reference, n);
    const int overlap = clipped_matches(cb, rb);
    const int cn = cb.total();
    const int rn = rb.total();
    const double p = cn > 0 ? static_cast<double>(overlap) / cn : 0.0;
    const double r = rn > 0 ? static_cast<double>(overlap) / rn : 0.0;
    return make_prf(p, r);
}

PRF rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
    const std::size_t m = candidate.size(), n = reference.size();
    if (m == 0 || n == 0) return PRF{};
    // Classic LCS table, rolling rows.
    std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            if (candidate[i - 1] == reference[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = prev[n];
    return make_prf(lcs / static_cast<double>(m), lcs / static_cast<double>(n));
}

std::string meteor_stem(const std::string& word) {
    static const std::pair<const char*, const char*> rules[] = {
        {"ies", "y"}, {"ied", "y"}, {"ing", ""}, {"edly", ""},
        {"ed", ""},   {"es", ""},   {"ly", ""},  {"s", ""},
    };
    for (const auto& [suffix, repl] : rules) {
        const std::size_t slen = std::char_traits<char>::length(suffix);
        if (word.size() >= slen + 3 && word.compare(word.size() - slen, slen, suffix) == 0)
            return word.substr(0, word.size() - slen) + repl;
    }
    return word;
}

double meteor(const TokenSeq& candidate, const TokenSeq& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    std::vector<int> cand_to_ref(candidate.size(), -1);
    std::vector<bool> ref_used(reference.size(), false);
    align_stage(candidate, reference, eq_exact, cand_to_ref, ref_used);
    align_stage(candidate, reference, eq_stem, cand_to_ref, ref_used);

    int matches = 0;
    int chunks = 0;
    int prev_i = -2, prev_j = -2;
    for (std::size_t i = 0; i < cand_to_ref.size(); ++i) {
        if (cand_to_ref[i] < 0) continue;
        ++matches;
        if (static_cast<int>(i) != prev_i + 1 || cand_to_ref[i] != prev_j + 1) ++chunks;
        prev_i = static_cast<int>(i);
        prev_j = cand_to_ref[i];
    }
    if (matches == 0) return 0.0;
    const double p = static_cast<double>(matches) / candidate.size();
    const double r = static_cast<double>(matches) / reference.size();
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / matches;
    const double penalty = 0.5 * frag * frag * frag;
    return fmean * (1.0 - penalty);
}

IdfTable build_idf(const std::vector<TokenSeq>& references) {
    if (references.empty()) throw ArgError("build_idf: reference corpus is empty");
    IdfTable table;
    table.num_docs = static_cast<int>(references.size());
    for (const TokenSeq& doc : references) {
        for (int n = 1; n <= table.max_n; ++n) {
            const NGramBag bag = ngrams(doc, n);
            for (const auto& kv : bag.counts) ++table.doc_counts[kv.first];
        }
    }
    return table;
}

double cider(const TokenSeq& candidate, const TokenSeq& reference, const IdfTable& idf) {
    double sum = 0.0;
    for (int n = 1; n <= idf.max_n; ++n) {
        const NGramBag cb = ngrams(candidate, n);
        const NGramBag rb = ngrams(reference, n);
        auto weight = [&](const std::string& key, int tf) {
            const auto it = idf.doc_counts.find(key);
            const int df = it != idf.doc_counts.end() ? it->second : 0;
            return tf * std::log(static_cast<double>(idf.num_docs) / std::max(1, df));
        };
        double dot = 0.0, norm_c = 0.0, norm_r = 0.0;
        for (const auto& kv : cb.counts) {
            const double wc = weight(kv.first, kv.second);
            norm_c += wc * wc;
            const auto it = rb.counts.find(kv.first);
            if (it != rb.counts.end()) dot += wc * weight(kv.first, it->second);
        }
        for (const auto& kv : rb.counts) {
            const double wr = weight(kv.first, kv.second);
            norm_r += wr * wr;
        }
        if (norm_c > 0.0 && norm_r > 0.0) sum += dot / (std::sqrt(norm_c) * std::sqrt(norm_r));
    }
    return 10.0 * sum / idf.max_n;
}

double perplexity(const std::vector<double>& token_logprobs) {
    if (token_logprobs.empty()) throw ArgError("perplexity: logprob list is empty");
    double mean = 0.0;
    for (double lp : token_logprobs) mean += lp;
    mean /= static_cast<double>(token_logprobs.size());
    return std::exp(-mean);
}

MetricReport evaluate_corpus(const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                             const std::vector<std::vector<double>>* logprobs) {
    if (pairs.empty()) throw ArgError("evaluate_corpus: no candidate/reference pairs");

    std::vector<TokenSeq> refs;
    refs.reserve(pairs.size());
    for (const auto& pr : pairs) refs.push_back(pr.second);
    const IdfTable idf = build_idf(refs);

    std::vector<PairScores> scores(pairs.size());
    auto score_pair = [&](std::size_t i) {
        const TokenSeq& c = pairs[i].first;
        const TokenSeq& r = pairs[i].second;
        scores[i] = PairScores{bleu_k(c, r, 1), bleu_k(c, r, 2), bleu_k(c, r, 3),
                               bleu_k(c, r, 4), sacrebleu(c, r),  meteor(c, r),
                               rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r),
                               cider(c, r, idf)};
    };

    unsigned workers = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("RECIPE_FORGE_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap > 0) workers = std::min<unsigned>(workers, static_cast<unsigned>(cap));
    }
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(pairs.size())));
    if (workers <= 1) {
        for (std::size_t i = 0; i < pairs.size(); ++i) score_pair(i);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < pairs.size(); i += workers) score_pair(i);
            });
        for (auto& t : pool) t.join();
    }

    // Ordered reduction: the sum always runs in pair order, so the report is
    // identical for any worker count.
    MetricReport rep;
    double p1 = 0, r1 = 0, f1 = 0, p2 = 0, r2 = 0, f2 = 0, pl = 0, rl = 0, fl = 0;
    for (const PairScores& s : scores) {
        rep.bleu1 += s.bleu1;
        rep.bleu2 += s.bleu2;
        rep.bleu3 += s.bleu3;
        rep.bleu4 += s.bleu4;
        rep.sacrebleu += s.sacre;
        rep.meteor += s.met;
        p1 += s.r1.precision; r1 += s.r1.recall; f1 += s.r1.f1;
        p2 += s.r2.precision; r2 += s.r2.recall; f2 += s.r2.f1;
        pl += s.rl.precision; rl += s.rl.recall; fl += s.rl.f1;
        rep.cider += s.cid;
    }
    const double n = static_cast<double>(pairs.size());
    rep.bleu1 /= n; rep.bleu2 /= n; rep.bleu3 /= n; rep.bleu4 /= n;
    rep.sacrebleu /= n;
    rep.meteor /= n;
    rep.rouge1 = PRF{p1 / n, r1 / n, f1 / n};
    rep.rouge2 = PRF{p2 / n, r2 / n, f2 / n};
    rep.rougeL = PRF{pl / n, rl / n, fl / n};
    rep.cider /= n;

    if (logprobs) {
        std::vector<double> all;
        for (const auto& lst : *logprobs) all.insert(all.end(), lst.begin(), lst.end());
        if (!all.empty()) rep.perplexity = perplexity(all);
    }
    return rep;
}

std::string report_to_json(const MetricReport& report) {
    nlohmann::json j;
    j["bleu1"] = report.bleu1;
    j["bleu2"] = report.bleu2;
    j["bleu3"] = report.bleu3;
    j["bleu4"] = report.bleu4;
    j["sacrebleu"] = report.sacrebleu;
    j["meteor"] = report.meteor;
    j["rouge1"] = report.rouge1.f1;
    j["rouge2"] = report.rouge2.f1;
    j["rougeL"] = report.rougeL.f1;
    j["cider"] = report.cider;
    if (report.perplexity)
        j["perplexity"] = *report.perplexity;
    else
        j["perplexity"] = nullptr;
    return j.dump();
}

namespace {

std::string row_cells(const MetricReport& r, const char* sep) {
    std::ostringstream os;
    os.precision(6);
    os << r.bleu1 << sep << r.bleu2 << sep << r.bleu3 << sep << r.bleu4 << sep
       << r.sacrebleu << sep << r.meteor << sep << r.rouge1.f1 << sep << r.rouge2.f1
       << sep << r.rougeL.f1 << sep << r.cider << sep;
    if (r.perplexity)
        os << *r.perplexity;
    else
        os << "-";
    return os.str();
}

}  // namespace

std::string report_csv_header() {
    return "name,BLEU-1,BLEU-2,BLEU-3,BLEU-4,SacreBLEU,METEOR,ROUGE-1,ROUGE-2,"
           "ROUGE-L,CIDEr,Perplexity";
}

std::string report_csv_row(const std::string& name, const MetricReport& report) {
    return name + "," + row_cells(report, ",");
}

std::string report_markdown_header() {
    return "| name | BLEU-1 | BLEU-2 | BLEU-3 | BLEU-4 | SacreBLEU | METEOR | "
           "ROUGE-1 | ROUGE-2 | ROUGE-L | CIDEr | Perplexity |\n"
           "|---|---|---|---|---|---|---|---|---|---|---|---|";
}

std::string report_markdown_row(const std::string& name, const MetricReport& report) {
    return "| " + name + " | " + row_cells(report, " | ") + " |";
}

}  // namespace rforge
