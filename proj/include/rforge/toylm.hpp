#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rforge/promptkit.hpp"
#include "rforge/scaledloss.hpp"
#include "rforge/textnorm.hpp"

namespace rforge {

// Frequency-built vocabulary with reserved sentinel ids.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kStop = 1;
    static constexpr int kImage = 2;
    static constexpr int kUnk = 3;

    std::vector<std::string> tokens;  // tokens[id]

    int size() const { return static_cast<int>(tokens.size()); }
    int id(const std::string& token) const;

    static Vocab build(const std::vector<std::string>& texts, std::size_t max_size);
};

enum class ParamGroup { map_visual, embed, core, out };

std::string param_group_name(ParamGroup g);
const std::set<ParamGroup>& all_param_groups();

// Small autoregressive LM: token embeddings, a visual->embedding mapping
// layer applied at the single IMAGE-sentinel position, one causal
// attention-style mixing layer with a tanh MLP, and an output projection.
struct ModelParams {
    Vocab vocab;
    int d = 0;
    int d_vis = 0;
    int context = 0;

    std::vector<double> embed;          // V x d
    std::vector<double> map_w, map_b;   // d x d_vis, d
    std::vector<double> pos;            // C x d
    std::vector<double> wq, wk, wv;     // d x d each
    std::vector<double> w1, b1;         // h x d, h     (h = 2d)
    std::vector<double> w2, b2;         // d x h, d
    std::vector<double> out_w, out_b;   // V x d, V

    int hidden() const { return 2 * d; }
};

ModelParams init_model(Vocab vocab, int d, int d_vis, int context, std::uint64_t seed);

std::uint64_t param_group_hash(const ModelParams& params, ParamGroup group);
std::map<std::string, std::uint64_t> all_param_hashes(const ModelParams& params);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

// Per-position probability distributions under causal masking; the IMAGE
// position's embedding is map_w * visual + map_b.
TokenDistSeq forward(const ModelParams& params, const std::vector<int>& ids,
                     const std::vector<double>& visual);

// A tokenized training example: ids with exactly one IMAGE sentinel and a
// mask marking the assistant-turn target tokens (the only ones in the loss).
struct EncodedExample {
    std::vector<int> ids;
    std::vector<bool> target_mask;
    std::vector<double> visual;
    std::string target_text;  // y_label for the metric scaling
    std::string recipe_id;
};

EncodedExample encode_example(const Vocab& vocab, const DialogExample& dialog,
                              int context, const std::string& recipe_id = "");

struct Gradients {
    std::set<ParamGroup> groups;
    std::vector<double> embed;
    std::vector<double> map_w, map_b;
    std::vector<double> pos, wq, wk, wv, w1, b1, w2, b2;
    std::vector<double> out_w, out_b;
};

// Loss over target-turn tokens only: plain cross-entropy for S0-S2, the
// metric-scaled loss for S3 (scale_config required there). Gradients are
// produced only for the requested groups; the returned ScaledLossValue holds
// batch means (for S0-S2 l_br is fixed at 1, so l_final = l_ce).
std::pair<ScaledLossValue, Gradients> loss_and_grads(
    const ModelParams& params, const std::vector<EncodedExample>& batch, Stage stage,
    const std::optional<ScaleConfig>& scale_config,
    const std::set<ParamGroup>& trainable);

std::set<ParamGroup> default_trainable(Stage stage);

struct TrainConfig {
    Stage stage = Stage::S1;
    std::set<ParamGroup> trainable;  // empty = default_trainable(stage)
    int epochs = 2;
    double lr = 2e-5;
    double warmup_ratio = 0.03;
    int batch_size = 32;
    std::uint64_t seed = 0;
    std::optional<ScaleConfig> scale_config;  // required iff stage == S3
};

// Linear warmup to lr over warmup_ratio of total steps, cosine decay to 0.
double lr_at_step(const TrainConfig& config, int step, int total_steps);

struct TraceStep {
    int step = 0;
    double lr = 0.0;
    ScaledLossValue loss;
    std::map<std::string, std::uint64_t> param_hash;
};

struct TrainTrace {
    std::vector<TraceStep> steps;
};

void write_trace_jsonl(const TrainTrace& trace, const std::string& path,
                       ScaleMode mode = ScaleMode::paper_literal);

// Plain SGD over shuffled batches; deterministic for a fixed seed. Throws
// NumericError on a non-finite loss (the trace up to the abort is kept).
ModelParams train(ModelParams params, const std::vector<EncodedExample>& dataset,
                  const TrainConfig& config, TrainTrace& trace);

// Iterative argmax continuation until STOP or max_len new tokens; the STOP
// itself is not part of the returned continuation.
std::vector<int> greedy_decode(const ModelParams& params, const std::vector<int>& prompt,
                               const std::vector<double>& visual, int max_len);

// log p(ids[t]) at each masked position, teacher-forced (for perplexity).
std::vector<double> target_logprobs(const ModelParams& params, const EncodedExample& ex);

// Mean cross-entropy over a dataset, teacher-forced; the validation signal.
double dataset_cross_entropy(const ModelParams& params,
                             const std::vector<EncodedExample>& dataset);

}  // namespace rforge
