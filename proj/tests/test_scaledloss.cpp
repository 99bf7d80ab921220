#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rforge/errors.hpp"
#include "rforge/scaledloss.hpp"

using namespace rforge;

namespace {

const std::vector<std::string> kVocab = {"<pad>", "<stop>", "<image>", "<unk>",
                                         "mix",   "the",    "flour",   "bake"};

// A distribution peaked on `id` with the rest of the mass spread evenly.
std::vector<double> peaked(int id, double peak = 0.9) {
    std::vector<double> v(kVocab.size(), (1.0 - peak) / (kVocab.size() - 1));
    v[static_cast<std::size_t>(id)] = peak;
    return v;
}

TokenDistSeq peaked_seq(const std::vector<int>& ids, double peak = 0.9) {
    TokenDistSeq out;
    for (int id : ids) out.push_back(peaked(id, peak));
    return out;
}

}  // namespace

TEST_CASE("cross_entropy closed forms") {
    CHECK(cross_entropy(peaked_seq({4, 5}, 1.0 - 1e-15), {4, 5}) ==
          doctest::Approx(0.0).epsilon(1e-9));
    CHECK(cross_entropy(peaked_seq({4, 5, 6}, 0.5), {4, 5, 6}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy(peaked_seq({4}), {4, 5}), ArgError);
}

TEST_CASE("cross_entropy floors vanishing probabilities") {
    TokenDistSeq pred = peaked_seq({4});
    pred[0][5] = 0.0;  // target token gets exactly zero mass
    int clamped = 0;
    const double ce = cross_entropy(pred, {5}, &clamped);
    CHECK(clamped == 1);
    CHECK(ce == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
}

TEST_CASE("metric_scale closed forms") {
    const ScaleConfig literal{1.01, 1.0, ScaleMode::paper_literal};
    const ScaleConfig penalty{1.01, 1.0, ScaleMode::penalty};
    const std::string text = "mix the flour well then bake";

    CHECK(metric_scale(text, text, literal) == doctest::Approx(2.01).epsilon(1e-9));
    CHECK(metric_scale(text, text, penalty) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(metric_scale("totally disjoint words", "mix the flour", literal) ==
          doctest::Approx(0.0).epsilon(1e-9));
    CHECK(metric_scale("totally disjoint words", "mix the flour", penalty) ==
          doctest::Approx(2.01).epsilon(1e-9));
}

TEST_CASE("scaled_loss is a bare product") {
    CHECK(scaled_loss(0.5, 2.01) == doctest::Approx(1.005));
    for (double x : {0.0, 0.3, 7.25}) {
        CHECK(scaled_loss(x, 1.0) == x);
        CHECK(scaled_loss(x, 0.0) == 0.0);
    }
}

TEST_CASE("scale_breakdown invariants") {
    const ScaleConfig literal{1.01, 1.0, ScaleMode::paper_literal};
    const ScaledLossValue v = scale_breakdown("mix the flour", "mix the batter", 0.7, literal);
    CHECK(v.l_final == v.l_br * v.l_ce);  // exact, single multiplication
    CHECK(v.l_ce == 0.7);
    CHECK(v.l_bleu >= 0.0);
    CHECK(v.l_bleu <= 1.0);
    CHECK(v.l_rougeL >= 0.0);
    CHECK(v.l_rougeL <= 1.0);
    CHECK(v.l_br >= 0.0);
    CHECK(v.l_br <= 2.01 + 1e-12);
    CHECK(v.y_pred == "mix the flour");
    CHECK(v.y_label == "mix the batter");
}

TEST_CASE("detokenize skips sentinels") {
    CHECK(detokenize({4, 5, 6}, kVocab) == "mix the flour");
    CHECK(detokenize({0, 4, 2, 5, 1}, kVocab) == "mix the");
    CHECK(detokenize({}, kVocab).empty());
}

TEST_CASE("scaled_loss_batch single and perfect batches") {
    const ScaleConfig literal{1.01, 1.0, ScaleMode::paper_literal};

    // Four tokens so every sacrebleu order has a real n-gram (no smoothing).
    ScaledBatchItem item;
    item.target = {4, 5, 6, 7};
    item.pred = peaked_seq(item.target, 0.8);
    item.y_label = "mix the flour bake";
    const auto [mean1, values1] = scaled_loss_batch({item}, kVocab, literal);
    REQUIRE(values1.size() == 1);
    CHECK(mean1 == values1[0].l_final);
    CHECK(values1[0].y_pred == "mix the flour bake");
    CHECK(values1[0].l_br == doctest::Approx(2.01).epsilon(1e-9));

    // All-perfect distributions: l_ce = 0, so mean l_final = 0.
    ScaledBatchItem perfect = item;
    perfect.pred = peaked_seq(item.target, 1.0 - 1e-15);
    const auto [mean2, values2] = scaled_loss_batch({perfect, perfect}, kVocab, literal);
    CHECK(mean2 == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("scaled_loss_batch matches per-sample recomputation") {
    const ScaleConfig config{1.01, 1.0, ScaleMode::penalty};
    std::vector<ScaledBatchItem> batch(3);
    batch[0].target = {4, 5, 6};
    batch[0].pred = peaked_seq({4, 5, 6}, 0.8);
    batch[0].y_label = "mix the flour";
    batch[1].target = {7, 5, 6};
    batch[1].pred = peaked_seq({7, 7, 6}, 0.7);  // decodes differently from target
    batch[1].y_label = "bake the flour";
    batch[2].target = {4, 7};
    batch[2].pred = peaked_seq({5, 6}, 0.6);
    batch[2].y_label = "mix bake";

    const auto [mean, values] = scaled_loss_batch(batch, kVocab, config);
    REQUIRE(values.size() == 3);
    double expect = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::vector<int> argmax;
        for (const auto& dist : batch[i].pred)
            argmax.push_back(static_cast<int>(
                std::max_element(dist.begin(), dist.end()) - dist.begin()));
        const double ce = cross_entropy(batch[i].pred, batch[i].target);
        const double l_br =
            metric_scale(detokenize(argmax, kVocab), batch[i].y_label, config);
        CHECK(values[i].l_final == doctest::Approx(l_br * ce).epsilon(1e-12));
        expect += l_br * ce;
    }
    CHECK(mean == doctest::Approx(expect / 3.0).epsilon(1e-12));
}

TEST_CASE("l_br depends only on the decoded text") {
    const ScaleConfig config{1.01, 1.0, ScaleMode::paper_literal};
    ScaledBatchItem item;
    item.target = {4, 5, 6};
    item.pred = peaked_seq({4, 5, 7}, 0.8);
    item.y_label = "mix the flour";
    const auto [mean_a, a] = scaled_loss_batch({item}, kVocab, config);

    // Nudge the probabilities without moving any argmax.
    ScaledBatchItem nudged = item;
    nudged.pred[0][4] -= 0.01;
    nudged.pred[0][0] += 0.01;
    const auto [mean_b, b] = scaled_loss_batch({nudged}, kVocab, config);
    CHECK(a[0].l_br == b[0].l_br);  // bit-identical
    CHECK(a[0].y_pred == b[0].y_pred);
    CHECK(a[0].l_ce != b[0].l_ce);
}
