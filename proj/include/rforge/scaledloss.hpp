#pragma once

#include <string>
#include <utility>
#include <vector>

namespace rforge {

// Per-position probability vectors over the vocabulary.
using TokenDistSeq = std::vector<std::vector<double>>;

enum class ScaleMode { paper_literal, penalty };

std::string scale_mode_name(ScaleMode m);

struct ScaleConfig {
    double lambda_bleu = 1.01;
    double lambda_rougeL = 1.0;
    ScaleMode mode = ScaleMode::paper_literal;
};

struct ScaledLossValue {
    double l_ce = 0.0;
    double l_bleu = 0.0;    // 1 - SacreBLEU
    double l_rougeL = 0.0;  // 1 - RougeL F1
    double l_br = 0.0;
    double l_final = 0.0;   // always exactly l_br * l_ce
    std::string y_label;
    std::string y_pred;
};

// Mean over positions of -log p(target token). Probabilities below 1e-12 are
// floored there; clamped_count reports how many positions hit the floor.
double cross_entropy(const TokenDistSeq& pred, const std::vector<int>& target,
                     int* clamped_count = nullptr);

// The joint scaling factor over normalized decoded/label text.
// paper_literal: lambda_bleu*B + lambda_rougeL*R (the printed equation);
// penalty:       lambda_bleu*(1-B) + lambda_rougeL*(1-R) (the prose reading).
double metric_scale(const std::string& y_pred, const std::string& y_label,
                    const ScaleConfig& config);

inline double scaled_loss(double l_ce, double l_br) { return l_br * l_ce; }

// One batch element for the scaled loss: distributions plus the ground-truth
// ids and label text. y_pred comes from the teacher-forced greedy decode
// (per-position argmax, detokenized through vocab).
struct ScaledBatchItem {
    TokenDistSeq pred;
    std::vector<int> target;
    std::string y_label;
};

std::pair<double, std::vector<ScaledLossValue>> scaled_loss_batch(
    const std::vector<ScaledBatchItem>& batch, const std::vector<std::string>& vocab,
    const ScaleConfig& config);

// Breakdown used by both scaled_loss_batch and the trainer.
ScaledLossValue scale_breakdown(const std::string& y_pred, const std::string& y_label,
                                double l_ce, const ScaleConfig& config);

// Space-joins tokens; the reserved sentinel ids (0 = PAD, 1 = STOP,
// 2 = IMAGE) are dropped from the text.
std::string detokenize(const std::vector<int>& ids, const std::vector<std::string>& vocab);

}  // namespace rforge
