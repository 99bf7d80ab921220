#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rforge/corpus.hpp"
#include "rforge/metrics.hpp"
#include "rforge/promptkit.hpp"
#include "rforge/toylm.hpp"

namespace rforge {

inline constexpr const char* kToolVersion = "0.1.0";

// One emitted training-data row: {id, stage, serialized, visual_index} plus
// the resolved visual vector so the file is self-contained for training.
struct TrainingRecord {
    std::string id;
    Stage stage = Stage::S1;
    std::string serialized;
    int visual_index = -1;  // -1 = zero-vector placeholder
    std::vector<double> visual;
};

// Samples one task per recipe and instantiates it; deterministic per seed.
std::vector<TrainingRecord> build_training_records(const std::vector<PromptTemplate>& bank,
                                                   const RecipeSet& recipes, Stage stage,
                                                   std::uint64_t seed);

void write_training_data(const std::vector<TrainingRecord>& records,
                         const std::string& path);
std::vector<TrainingRecord> load_training_data(const std::string& path);

DialogExample record_to_dialog(const TrainingRecord& record);

Vocab build_vocab_from_records(const std::vector<TrainingRecord>& records,
                               std::size_t max_size);

std::vector<EncodedExample> encode_records(const Vocab& vocab,
                                           const std::vector<TrainingRecord>& records,
                                           int context);

// Model shape knobs for the staged runs; small enough for CPU test runs.
struct ModelShape {
    int d = 32;
    int context = 128;
    int vocab_max = 512;
};

// Runs one training stage. For S0 (no prior checkpoint) the vocabulary is
// built from the records and the model is freshly initialized.
ModelParams run_stage(std::optional<ModelParams> init,
                      const std::vector<TrainingRecord>& records,
                      const TrainConfig& config, const ModelShape& shape, int d_vis,
                      TrainTrace& trace);

struct EvalOptions {
    int max_len = 96;
    bool oracle_mode = false;  // score the references against themselves
    bool by_cuisine = false;
    std::set<InputKind> input_mask = {InputKind::image, InputKind::title,
                                      InputKind::ingredients};
};

struct NamedReport {
    std::string name;
    MetricReport report;
    std::size_t pairs = 0;
    bool available = true;
};

// Greedy-decodes instructions for every test recipe and scores the corpus;
// with by_cuisine, one row per cuisine plus "overall". When no template in
// the bank matches the input mask the single row comes back unavailable.
std::vector<NamedReport> evaluate_model(const ModelParams& params,
                                        const std::vector<PromptTemplate>& bank,
                                        const RecipeSet& test, const EvalOptions& options);

void write_reports_json(const std::vector<NamedReport>& reports, const std::string& path);
void write_reports_csv(const std::vector<NamedReport>& reports, const std::string& path);
std::string reports_markdown(const std::vector<NamedReport>& reports);

// Re-running the manifest's command with the recorded inputs and seeds must
// reproduce the outputs byte-identically.
void write_manifest(const std::string& path, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, std::uint64_t seed);

}  // namespace rforge
