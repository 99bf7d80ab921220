#include "rforge/promptkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

#include <json.hpp>

#include "rforge/errors.hpp"

namespace rforge {

namespace {

using nlohmann::json;

const std::string kHumanPrefix = "Human : ";
const std::string kSeparator = " <image> <STOP>\nAssistant : ";
const std::string kSuffix = " <STOP>\n";

bool contains(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

// Canonical order for target combinations: title, ingredients, instructions.
int target_rank(TargetKind k) {
    switch (k) {
        case TargetKind::title: return 0;
        case TargetKind::ingredients: return 1;
        case TargetKind::instructions: return 2;
    }
    return 3;
}

std::string target_combo_key(const std::vector<TargetKind>& targets) {
    std::string key;
    for (TargetKind t : targets) key += target_kind_name(t) + "+";
    return key;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::S0: return "S0";
        case Stage::S1: return "S1";
        case Stage::S2: return "S2";
        case Stage::S3: return "S3";
    }
    return "S0";
}

std::optional<Stage> parse_stage(const std::string& s) {
    if (s == "S0" || s == "s0" || s == "0") return Stage::S0;
    if (s == "S1" || s == "s1" || s == "1") return Stage::S1;
    if (s == "S2" || s == "s2" || s == "2") return Stage::S2;
    if (s == "S3" || s == "s3" || s == "3") return Stage::S3;
    return std::nullopt;
}

std::string input_kind_name(InputKind k) {
    switch (k) {
        case InputKind::image: return "image";
        case InputKind::title: return "title";
        case InputKind::ingredients: return "ingredients";
    }
    return "image";
}

std::string target_kind_name(TargetKind k) {
    switch (k) {
        case TargetKind::title: return "title";
        case TargetKind::ingredients: return "ingredients";
        case TargetKind::instructions: return "instructions";
    }
    return "instructions";
}

std::optional<InputKind> parse_input_kind(const std::string& s) {
    if (s == "image") return InputKind::image;
    if (s == "title") return InputKind::title;
    if (s == "ingredients") return InputKind::ingredients;
    return std::nullopt;
}

std::optional<TargetKind> parse_target_kind(const std::string& s) {
    if (s == "title") return TargetKind::title;
    if (s == "ingredients") return TargetKind::ingredients;
    if (s == "instructions") return TargetKind::instructions;
    return std::nullopt;
}

void validate_template(const PromptTemplate& tmpl) {
    auto fail = [&](const std::string& why) {
        throw DataError("prompt template '" + tmpl.id + "': " + why);
    };
    if (tmpl.id.empty()) throw DataError("prompt template with empty id");
    if (tmpl.stages.empty()) fail("no stages declared");
    if (tmpl.targets.empty()) fail("targets must be non-empty");
    for (std::size_t i = 1; i < tmpl.targets.size(); ++i)
        if (target_rank(tmpl.targets[i - 1]) >= target_rank(tmpl.targets[i]))
            fail("targets must be unique and ordered title, ingredients, instructions");

    const bool needs_title = tmpl.required_inputs.count(InputKind::title) > 0;
    const bool needs_ing = tmpl.required_inputs.count(InputKind::ingredients) > 0;
    if (contains(tmpl.text, "<name>") != needs_title)
        fail(needs_title ? "required input 'title' but no <name> placeholder"
                         : "<name> placeholder without required input 'title'");
    if (contains(tmpl.text, "<ingredients>") != needs_ing)
        fail(needs_ing ? "required input 'ingredients' but no <ingredients> placeholder"
                       : "<ingredients> placeholder without required input 'ingredients'");

    if (tmpl.stages.count(Stage::S0) > 0 || tmpl.stages.count(Stage::S1) > 0) {
        if (tmpl.targets.size() != 1 || tmpl.targets[0] != TargetKind::instructions)
            fail("S0/S1 templates must target instructions only");
        if (tmpl.required_inputs.size() != 3)
            fail("S0/S1 templates must require image, title and ingredients");
    }
}

std::vector<PromptTemplate> load_prompt_bank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prompt bank: " + path);
    std::vector<PromptTemplate> bank;
    std::unordered_set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw DataError("prompt bank line " + std::to_string(line_no) + ": " + e.what());
        }
        PromptTemplate tmpl;
        tmpl.id = j.at("id").get<std::string>();
        for (const auto& s : j.at("stages")) {
            const auto st = parse_stage(s.get<std::string>());
            if (!st) throw DataError("prompt template '" + tmpl.id + "': bad stage");
            tmpl.stages.insert(*st);
        }
        for (const auto& s : j.at("required_inputs")) {
            const auto k = parse_input_kind(s.get<std::string>());
            if (!k) throw DataError("prompt template '" + tmpl.id + "': bad input kind");
            tmpl.required_inputs.insert(*k);
        }
        for (const auto& s : j.at("targets")) {
            const auto k = parse_target_kind(s.get<std::string>());
            if (!k) throw DataError("prompt template '" + tmpl.id + "': bad target kind");
            tmpl.targets.push_back(*k);
        }
        tmpl.text = j.at("template").get<std::string>();
        validate_template(tmpl);
        if (!seen.insert(tmpl.id).second)
            throw DataError("prompt template '" + tmpl.id + "': duplicate id");
        bank.push_back(std::move(tmpl));
    }
    return bank;
}

void write_prompt_bank(const std::vector<PromptTemplate>& bank, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write prompt bank: " + path);
    for (const PromptTemplate& t : bank) {
        json j;
        j["id"] = t.id;
        std::vector<std::string> stages, inputs, targets;
        for (Stage s : t.stages) stages.push_back(stage_name(s));
        for (InputKind k : t.required_inputs) inputs.push_back(input_kind_name(k));
        for (TargetKind k : t.targets) targets.push_back(target_kind_name(k));
        j["stages"] = stages;
        j["required_inputs"] = inputs;
        j["targets"] = targets;
        j["template"] = t.text;
        out << j.dump() << '\n';
    }
}

TaskSample sample_task(const std::vector<PromptTemplate>& bank, Stage stage, Rng& rng) {
    // Group applicable templates by target combination; std::map keeps the
    // combination order stable across runs.
    std::map<std::string, std::vector<const PromptTemplate*>> by_combo;
    for (const PromptTemplate& t : bank)
        if (t.stages.count(stage) > 0) by_combo[target_combo_key(t.targets)].push_back(&t);
    if (by_combo.empty())
        throw ConfigError("no prompt template applicable to stage " + stage_name(stage));

    const std::size_t combo_idx = static_cast<std::size_t>(rng.below(by_combo.size()));
    auto it = by_combo.begin();
    std::advance(it, static_cast<long>(combo_idx));
    const auto& candidates = it->second;
    const PromptTemplate& chosen =
        *candidates[static_cast<std::size_t>(rng.below(candidates.size()))];

    TaskSample sample;
    sample.tmpl = chosen;
    sample.target_kinds = chosen.targets;
    sample.input_mask = chosen.required_inputs;
    sample.stage = stage;
    return sample;
}

std::vector<std::string> ingredient_dropout(const std::vector<std::string>& ingredients,
                                            double max_frac, Rng& rng) {
    if (max_frac < 0.0 || max_frac >= 1.0)
        throw ArgError("ingredient_dropout: max_frac must be in [0, 1)");
    const std::size_t n = ingredients.size();
    const std::size_t max_drop =
        static_cast<std::size_t>(std::floor(max_frac * static_cast<double>(n)));
    const std::size_t k = static_cast<std::size_t>(rng.below(max_drop + 1));
    if (k == 0) return ingredients;

    // Choose k distinct victims by partial shuffle of indices.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<bool> dropped(n, false);
    for (std::size_t i = 0; i < k; ++i) dropped[idx[i]] = true;

    std::vector<std::string> out;
    out.reserve(n - k);
    for (std::size_t i = 0; i < n; ++i)
        if (!dropped[i]) out.push_back(ingredients[i]);
    return out;
}

std::string render_instructions(const std::vector<std::string>& steps) {
    std::vector<std::string> numbered;
    numbered.reserve(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i)
        numbered.push_back(std::to_string(i + 1) + ". " + steps[i]);
    return join(numbered, "\n");
}

std::string render_target(const std::vector<TargetKind>& targets, const Recipe& recipe) {
    auto single = [&](TargetKind k) -> std::string {
        switch (k) {
            case TargetKind::title: return recipe.title;
            case TargetKind::ingredients: return join(recipe.ingredients, ", ");
            case TargetKind::instructions: return render_instructions(recipe.instructions);
        }
        return {};
    };
    if (targets.size() == 1) return single(targets[0]);
    std::vector<std::string> sections;
    for (TargetKind k : targets) {
        std::string label = target_kind_name(k);
        label[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
        sections.push_back(label + ": " + single(k));
    }
    return join(sections, "\n");
}

DialogExample instantiate(const TaskSample& sample, const Recipe& recipe, int d_vis,
                          Rng& rng) {
    const PromptTemplate& tmpl = sample.tmpl;
    std::string query = tmpl.text;

    if (tmpl.required_inputs.count(InputKind::title) > 0) {
        if (sample.input_mask.count(InputKind::title) == 0)
            throw DataError("template '" + tmpl.id + "' requires title but the mask hides it");
        if (recipe.title.empty())
            throw DataError("recipe '" + recipe.id + "' has no title for template '" +
                            tmpl.id + "'");
        query = replace_all(query, "<name>", recipe.title);
    }
    if (tmpl.required_inputs.count(InputKind::ingredients) > 0) {
        if (sample.input_mask.count(InputKind::ingredients) == 0)
            throw DataError("template '" + tmpl.id +
                            "' requires ingredients but the mask hides them");
        if (recipe.ingredients.empty())
            throw DataError("recipe '" + recipe.id + "' has no ingredients for template '" +
                            tmpl.id + "'");
        std::vector<std::string> ing = recipe.ingredients;
        // Dropout enters the curriculum at S2; S0/S1 always see the full list.
        if (sample.stage == Stage::S2 || sample.stage == Stage::S3)
            ing = ingredient_dropout(ing, 0.5, rng);
        query = replace_all(query, "<ingredients>", join(ing, ", "));
    }

    DialogExample out;
    out.query = query;
    out.target = render_target(sample.target_kinds, recipe);
    if (out.target.empty())
        throw DataError("recipe '" + recipe.id + "' yields an empty target");

    const bool present_image = sample.input_mask.count(InputKind::image) > 0;
    if (present_image && recipe.has_image()) {
        out.visual = recipe.image_features.front();
        out.visual_is_zero = false;
    } else {
        out.visual.assign(static_cast<std::size_t>(d_vis), 0.0);
        out.visual_is_zero = true;
    }
    out.serialized = serialize_dialog(out.query, out.target);
    return out;
}

std::string serialize_dialog(const std::string& query, const std::string& target) {
    if (target.empty()) throw DataError("serialize_dialog: empty target");
    return kHumanPrefix + query + kSeparator + target + kSuffix;
}

std::optional<ParsedDialog> parse_dialog(const std::string& serialized) {
    if (serialized.rfind(kHumanPrefix, 0) != 0) return std::nullopt;
    const std::size_t sep = serialized.find(kSeparator);
    if (sep == std::string::npos) return std::nullopt;
    if (serialized.size() < kSuffix.size() ||
        serialized.compare(serialized.size() - kSuffix.size(), kSuffix.size(), kSuffix) != 0)
        return std::nullopt;
    ParsedDialog out;
    out.query = serialized.substr(kHumanPrefix.size(), sep - kHumanPrefix.size());
    const std::size_t target_begin = sep + kSeparator.size();
    const std::size_t target_end = serialized.size() - kSuffix.size();
    if (target_end < target_begin) return std::nullopt;
    out.target = serialized.substr(target_begin, target_end - target_begin);
    return out;
}

}  // namespace rforge
