#include "rforge/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <json.hpp>

#include "rforge/errors.hpp"
#include "rforge/rng.hpp"
#include "rforge/textnorm.hpp"

namespace rforge {

namespace {

using nlohmann::json;

// Deterministic template choice for evaluation: the lexicographically first
// instruction-generation template matching the input mask.
const PromptTemplate* eval_template(const std::vector<PromptTemplate>& bank,
                                    const std::set<InputKind>& mask) {
    const PromptTemplate* best = nullptr;
    for (const PromptTemplate& t : bank) {
        if (t.targets.size() != 1 || t.targets[0] != TargetKind::instructions) continue;
        if (t.required_inputs != mask) continue;
        if (!best || t.id < best->id) best = &t;
    }
    return best;
}

std::vector<int> encode_prompt(const Vocab& vocab, const std::string& query) {
    std::vector<int> ids;
    for (const std::string& tok : normalize("human :")) ids.push_back(vocab.id(tok));
    for (const std::string& tok : normalize(query)) ids.push_back(vocab.id(tok));
    ids.push_back(Vocab::kImage);
    ids.push_back(Vocab::kStop);
    for (const std::string& tok : normalize("assistant :")) ids.push_back(vocab.id(tok));
    return ids;
}

TokenSeq decode_to_tokens(const ModelParams& params, const std::vector<int>& ids) {
    TokenSeq out;
    for (int id : ids) {
        if (id == Vocab::kPad || id == Vocab::kStop || id == Vocab::kImage) continue;
        out.push_back(params.vocab.tokens[static_cast<std::size_t>(id)]);
    }
    return out;
}

std::string fold_case(const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

std::vector<TrainingRecord> build_training_records(const std::vector<PromptTemplate>& bank,
                                                   const RecipeSet& recipes, Stage stage,
                                                   std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainingRecord> out;
    out.reserve(recipes.size());
    for (const Recipe& r : recipes.recipes) {
        const TaskSample sample = sample_task(bank, stage, rng);
        const DialogExample dialog = instantiate(sample, r, recipes.d_vis, rng);
        TrainingRecord rec;
        rec.id = r.id;
        rec.stage = stage;
        rec.serialized = dialog.serialized;
        rec.visual_index = dialog.visual_is_zero ? -1 : 0;
        rec.visual = dialog.visual;
        out.push_back(std::move(rec));
    }
    return out;
}

void write_training_data(const std::vector<TrainingRecord>& records,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write training data: " + path);
    for (const TrainingRecord& r : records) {
        json j;
        j["id"] = r.id;
        j["stage"] = stage_name(r.stage);
        j["serialized"] = r.serialized;
        j["visual_index"] = r.visual_index;
        j["visual"] = r.visual;
        out << j.dump() << '\n';
    }
}

std::vector<TrainingRecord> load_training_data(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open training data: " + path);
    std::vector<TrainingRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            TrainingRecord rec;
            rec.id = j.at("id").get<std::string>();
            const auto stage = parse_stage(j.at("stage").get<std::string>());
            if (!stage) throw DataError("bad stage");
            rec.stage = *stage;
            rec.serialized = j.at("serialized").get<std::string>();
            rec.visual_index = j.at("visual_index").get<int>();
            rec.visual = j.at("visual").get<std::vector<double>>();
            out.push_back(std::move(rec));
        } catch (const std::exception& e) {
            throw DataError("training data line " + std::to_string(line_no) + ": " +
                            e.what());
        }
    }
    return out;
}

DialogExample record_to_dialog(const TrainingRecord& record) {
    const auto parsed = parse_dialog(record.serialized);
    if (!parsed)
        throw DataError("training record '" + record.id + "' is not in dialog format");
    DialogExample d;
    d.query = parsed->query;
    d.target = parsed->target;
    d.visual = record.visual;
    d.visual_is_zero = record.visual_index < 0;
    d.serialized = record.serialized;
    return d;
}

Vocab build_vocab_from_records(const std::vector<TrainingRecord>& records,
                               std::size_t max_size) {
    std::vector<std::string> texts;
    texts.reserve(records.size() * 2 + 1);
    texts.push_back("human : assistant :");
    for (const TrainingRecord& r : records) {
        const DialogExample d = record_to_dialog(r);
        texts.push_back(d.query);
        texts.push_back(d.target);
    }
    return Vocab::build(texts, max_size);
}

std::vector<EncodedExample> encode_records(const Vocab& vocab,
                                           const std::vector<TrainingRecord>& records,
                                           int context) {
    std::vector<EncodedExample> out;
    out.reserve(records.size());
    for (const TrainingRecord& r : records)
        out.push_back(encode_example(vocab, record_to_dialog(r), context, r.id));
    return out;
}

ModelParams run_stage(std::optional<ModelParams> init,
                      const std::vector<TrainingRecord>& records,
                      const TrainConfig& config, const ModelShape& shape, int d_vis,
                      TrainTrace& trace) {
    if (records.empty()) throw DataError("run_stage: no training records");
    ModelParams params;
    if (init) {
        params = std::move(*init);
        if (params.d_vis != static_cast<int>(records.front().visual.size()))
            throw DataError("run_stage: checkpoint d_vis " + std::to_string(params.d_vis) +
                            " does not match data d_vis " +
                            std::to_string(records.front().visual.size()));
    } else {
        const Vocab vocab = build_vocab_from_records(records,
                                                     static_cast<std::size_t>(shape.vocab_max));
        params = init_model(vocab, shape.d, d_vis, shape.context, config.seed);
    }
    const std::vector<EncodedExample> dataset =
        encode_records(params.vocab, records, params.context);
    return train(std::move(params), dataset, config, trace);
}

std::vector<NamedReport> evaluate_model(const ModelParams& params,
                                        const std::vector<PromptTemplate>& bank,
                                        const RecipeSet& test, const EvalOptions& options) {
    if (test.recipes.empty()) throw DataError("evaluate_model: empty test set");
    if (test.d_vis != params.d_vis)
        throw DataError("evaluate_model: data d_vis " + std::to_string(test.d_vis) +
                        " does not match checkpoint d_vis " + std::to_string(params.d_vis));

    const PromptTemplate* tmpl = eval_template(bank, options.input_mask);
    if (!tmpl) {
        NamedReport row;
        row.name = "unavailable";
        row.available = false;
        return {row};
    }

    std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
    std::vector<std::vector<double>> logprobs;
    std::vector<std::string> cuisines;
    pairs.reserve(test.size());

    Rng rng(0);  // instantiate at a dropout-free stage; the rng is unused noise
    for (const Recipe& r : test.recipes) {
        TaskSample sample;
        sample.tmpl = *tmpl;
        sample.target_kinds = {TargetKind::instructions};
        sample.input_mask = options.input_mask;
        sample.stage = Stage::S1;  // evaluation never applies ingredient dropout
        const DialogExample dialog = instantiate(sample, r, test.d_vis, rng);

        const TokenSeq reference = normalize(dialog.target);
        TokenSeq candidate;
        if (options.oracle_mode) {
            candidate = reference;
        } else {
            const std::vector<int> prompt = encode_prompt(params.vocab, dialog.query);
            candidate = decode_to_tokens(
                params, greedy_decode(params, prompt, dialog.visual, options.max_len));
        }
        pairs.emplace_back(std::move(candidate), reference);
        logprobs.push_back(target_logprobs(
            params, encode_example(params.vocab, dialog, params.context, r.id)));
        cuisines.push_back(r.cuisine);
    }

    std::vector<NamedReport> out;
    if (options.by_cuisine) {
        std::vector<std::string> labels;
        std::map<std::string, std::string> display;
        for (const std::string& c : cuisines) {
            if (c.empty()) continue;
            const std::string key = fold_case(c);
            if (display.emplace(key, c).second) labels.push_back(key);
        }
        std::sort(labels.begin(), labels.end());
        for (const std::string& key : labels) {
            std::vector<std::pair<TokenSeq, TokenSeq>> sub;
            std::vector<std::vector<double>> sub_lp;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                if (fold_case(cuisines[i]) != key) continue;
                sub.push_back(pairs[i]);
                sub_lp.push_back(logprobs[i]);
            }
            NamedReport row;
            row.name = display[key];
            row.pairs = sub.size();
            row.report = evaluate_corpus(sub, &sub_lp);
            out.push_back(std::move(row));
        }
    }
    NamedReport overall;
    overall.name = "overall";
    overall.pairs = pairs.size();
    overall.report = evaluate_corpus(pairs, &logprobs);
    out.push_back(std::move(overall));
    return out;
}

void write_reports_json(const std::vector<NamedReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    json rows = json::array();
    for (const NamedReport& r : reports) {
        json row;
        row["name"] = r.name;
        row["pairs"] = r.pairs;
        row["available"] = r.available;
        row["metrics"] = r.available ? json::parse(report_to_json(r.report)) : json();
        rows.push_back(std::move(row));
    }
    out << rows.dump(2) << '\n';
}

void write_reports_csv(const std::vector<NamedReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << report_csv_header() << '\n';
    for (const NamedReport& r : reports) {
        if (r.available)
            out << report_csv_row(r.name, r.report) << '\n';
        else
            out << r.name << ",unavailable\n";
    }
}

std::string reports_markdown(const std::vector<NamedReport>& reports) {
    std::string out = report_markdown_header();
    for (const NamedReport& r : reports) {
        out += '\n';
        out += r.available ? report_markdown_row(r.name, r.report)
                           : "| " + r.name + " | unavailable |";
    }
    return out;
}

void write_manifest(const std::string& path, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, std::uint64_t seed) {
    json j;
    j["tool_version"] = kToolVersion;
    j["command"] = command;
    json cfg;
    for (const auto& [k, v] : config) cfg[k] = v;
    j["config"] = std::move(cfg);
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace rforge
