#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rforge/corpus.hpp"
#include "rforge/rng.hpp"

namespace rforge {

enum class Stage { S0, S1, S2, S3 };

std::string stage_name(Stage s);
std::optional<Stage> parse_stage(const std::string& s);

enum class InputKind { image, title, ingredients };
enum class TargetKind { title, ingredients, instructions };

std::string input_kind_name(InputKind k);
std::string target_kind_name(TargetKind k);
std::optional<InputKind> parse_input_kind(const std::string& s);
std::optional<TargetKind> parse_target_kind(const std::string& s);

// A templated query. The template text must contain "<name>" iff title is a
// required input and "<ingredients>" iff ingredients is; S0/S1 templates
// always take image+title+ingredients and target instructions.
struct PromptTemplate {
    std::string id;
    std::set<Stage> stages;
    std::set<InputKind> required_inputs;
    std::vector<TargetKind> targets;  // non-empty, title < ingredients < instructions
    std::string text;
};

// Validates one template against the PromptTemplate invariants; throws
// DataError naming the template id on violation.
void validate_template(const PromptTemplate& tmpl);

std::vector<PromptTemplate> load_prompt_bank(const std::string& path);
void write_prompt_bank(const std::vector<PromptTemplate>& bank, const std::string& path);

// A drawn task: which template, which targets, and which of its required
// inputs are actually presented (ablation masks shrink this).
struct TaskSample {
    PromptTemplate tmpl;
    std::vector<TargetKind> target_kinds;
    std::set<InputKind> input_mask;
    Stage stage = Stage::S1;
};

// Two-stage draw: a target combination uniformly among those available at
// the stage, then a template uniformly among templates with that combination.
TaskSample sample_task(const std::vector<PromptTemplate>& bank, Stage stage, Rng& rng);

// Removes k ingredients, k drawn uniformly from {0..floor(max_frac*n)},
// survivors keep their relative order.
std::vector<std::string> ingredient_dropout(const std::vector<std::string>& ingredients,
                                            double max_frac, Rng& rng);

// A fully instantiated single-round training example.
struct DialogExample {
    std::string query;
    std::string target;
    std::vector<double> visual;   // d_vis; zero vector when no image presented
    bool visual_is_zero = true;
    std::string serialized;
};

// Substitutes placeholders (with ingredient dropout at S2/S3), assembles the
// target text, and picks the visual vector — the first image vector when the
// image is presented and available, else the zero vector (the "empty image"
// placeholder).
DialogExample instantiate(const TaskSample& sample, const Recipe& recipe, int d_vis,
                          Rng& rng);

// "Human : <query> <image> <STOP>\nAssistant : <target> <STOP>\n", with the
// literal "<image>" sentinel marking the visual injection point.
std::string serialize_dialog(const std::string& query, const std::string& target);

struct ParsedDialog {
    std::string query;
    std::string target;
};

// Inverse of serialize_dialog; nullopt when the text is not in the dialog
// format.
std::optional<ParsedDialog> parse_dialog(const std::string& serialized);

// Target-text assembly shared with evaluation: instructions become numbered
// steps, multiple targets get labeled sections in title/ingredients/
// instructions order.
std::string render_target(const std::vector<TargetKind>& targets, const Recipe& recipe);
std::string render_instructions(const std::vector<std::string>& steps);

}  // namespace rforge
