#include "rforge/scaledloss.hpp"

#include <algorithm>
#include <cmath>

#include "rforge/errors.hpp"
#include "rforge/metrics.hpp"
#include "rforge/textnorm.hpp"

namespace rforge {

namespace {
constexpr double kProbFloor = 1e-12;
}

std::string scale_mode_name(ScaleMode m) {
    return m == ScaleMode::paper_literal ? "paper_literal" : "penalty";
}

double cross_entropy(const TokenDistSeq& pred, const std::vector<int>& target,
                     int* clamped_count) {
    if (pred.size() != target.size())
        throw ArgError("cross_entropy: " + std::to_string(pred.size()) +
                       " distributions vs " + std::to_string(target.size()) + " targets");
    if (pred.empty()) throw ArgError("cross_entropy: empty sequence");
    int clamped = 0;
    double sum = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        const int id = target[t];
        if (id < 0 || static_cast<std::size_t>(id) >= pred[t].size())
            throw ArgError("cross_entropy: target id " + std::to_string(id) +
                           " outside vocabulary at position " + std::to_string(t));
        double p = pred[t][static_cast<std::size_t>(id)];
        if (p < kProbFloor) {
            p = kProbFloor;
            ++clamped;
        }
        sum -= std::log(p);
    }
    if (clamped_count) *clamped_count = clamped;
    return sum / static_cast<double>(pred.size());
}

double metric_scale(const std::string& y_pred, const std::string& y_label,
                    const ScaleConfig& config) {
    const TokenSeq cand = normalize(y_pred);
    const TokenSeq ref = normalize(y_label);
    const double b = sacrebleu(cand, ref);
    const double r = rouge_l(cand, ref).f1;
    if (config.mode == ScaleMode::paper_literal)
        return config.lambda_bleu * b + config.lambda_rougeL * r;
    return config.lambda_bleu * (1.0 - b) + config.lambda_rougeL * (1.0 - r);
}

ScaledLossValue scale_breakdown(const std::string& y_pred, const std::string& y_label,
                                double l_ce, const ScaleConfig& config) {
    const TokenSeq cand = normalize(y_pred);
    const TokenSeq ref = normalize(y_label);
    const double b = sacrebleu(cand, ref);
    const double r = rouge_l(cand, ref).f1;
    ScaledLossValue v;
    v.l_ce = l_ce;
    v.l_bleu = 1.0 - b;
    v.l_rougeL = 1.0 - r;
    v.l_br = config.mode == ScaleMode::paper_literal
                 ? config.lambda_bleu * b + config.lambda_rougeL * r
                 : config.lambda_bleu * v.l_bleu + config.lambda_rougeL * v.l_rougeL;
    v.l_final = scaled_loss(v.l_ce, v.l_br);
    v.y_label = y_label;
    v.y_pred = y_pred;
    return v;
}

std::string detokenize(const std::vector<int>& ids, const std::vector<std::string>& vocab) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
            throw ArgError("detokenize: id " + std::to_string(id) + " outside vocabulary");
        // Sentinels (PAD/STOP/IMAGE) are structure, not text.
        if (id <= 2) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab[static_cast<std::size_t>(id)];
    }
    return out;
}

std::pair<double, std::vector<ScaledLossValue>> scaled_loss_batch(
    const std::vector<ScaledBatchItem>& batch, const std::vector<std::string>& vocab,
    const ScaleConfig& config) {
    if (batch.empty()) throw ArgError("scaled_loss_batch: empty batch");
    std::vector<ScaledLossValue> values;
    values.reserve(batch.size());
    double mean = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const ScaledBatchItem& item = batch[s];
        double l_ce;
        std::vector<int> greedy;
        try {
            l_ce = cross_entropy(item.pred, item.target);
            greedy.reserve(item.pred.size());
            for (const auto& dist : item.pred) {
                const auto it = std::max_element(dist.begin(), dist.end());
                greedy.push_back(static_cast<int>(it - dist.begin()));
            }
        } catch (const std::exception& e) {
            throw ArgError("scaled_loss_batch sample " + std::to_string(s) + ": " + e.what());
        }
        const std::string y_pred = detokenize(greedy, vocab);
        values.push_back(scale_breakdown(y_pred, item.y_label, l_ce, config));
        mean += values.back().l_final;
    }
    mean /= static_cast<double>(batch.size());
    return {mean, std::move(values)};
}

}  // namespace rforge
