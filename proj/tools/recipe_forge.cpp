// recipe-forge: dataset ingestion, prompt compilation, staged training, and
// evaluation for the recipe LM pipeline.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rforge/corpus.hpp"
#include "rforge/errors.hpp"
#include "rforge/metrics.hpp"
#include "rforge/oracle.hpp"
#include "rforge/pipeline.hpp"
#include "rforge/promptkit.hpp"
#include "rforge/rng.hpp"
#include "rforge/scaledloss.hpp"
#include "rforge/synth.hpp"
#include "rforge/textnorm.hpp"
#include "rforge/toylm.hpp"

namespace {

using nlohmann::json;
using namespace rforge;

std::string str(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

Stage require_stage(const std::string& s) {
    const auto st = parse_stage(s);
    if (!st) throw ArgError("unknown stage '" + s + "' (expected S0..S3)");
    return *st;
}

ScaleMode require_mode(const std::string& s) {
    if (s == "paper-literal" || s == "paper_literal") return ScaleMode::paper_literal;
    if (s == "penalty") return ScaleMode::penalty;
    throw ArgError("unknown scale mode '" + s + "' (expected paper-literal|penalty)");
}

void write_rejections(const RejectionReport& report, const std::string& path) {
    json rows = json::array();
    for (const auto& item : report.items) {
        json j;
        j["line"] = item.line;
        j["id"] = item.id;
        j["reason"] = item.reason;
        rows.push_back(std::move(j));
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write rejection report: " + path);
    out << rows.dump(2) << '\n';
}

// --- synth ------------------------------------------------------------

int cmd_synth(const SynthConfig& config, const std::string& out_path,
              const std::string& sidecar_path) {
    const RecipeSet set = make_synthetic_corpus(config);
    const bool split = !sidecar_path.empty();
    write_recipes_jsonl(set, out_path, /*inline_features=*/!split);
    std::vector<std::string> outputs = {out_path};
    if (split) {
        write_visual_sidecar(set, sidecar_path);
        outputs.push_back(sidecar_path);
    }
    write_manifest(out_path + ".manifest.json", "synth",
                   {{"count", std::to_string(config.count)},
                    {"d_vis", std::to_string(config.d_vis)},
                    {"image_frac", str(config.image_frac)}},
                   {}, outputs, config.seed);
    std::size_t imaged = 0;
    for (const Recipe& r : set.recipes) imaged += r.has_image() ? 1 : 0;
    std::cout << "recipes=" << set.size() << " imaged=" << imaged
              << " d_vis=" << set.d_vis << "\n";
    return 0;
}

// --- ingest -----------------------------------------------------------

int cmd_ingest(const std::string& recipes_path, const std::string& sidecar_path,
               const std::string& out_path, int d_vis, std::uint64_t seed) {
    LoadResult loaded = load_recipes(recipes_path, d_vis);
    RejectionReport warnings;
    std::vector<std::string> inputs = {recipes_path};
    if (!sidecar_path.empty()) {
        attach_visual_sidecar(loaded.set, sidecar_path, &warnings);
        inputs.push_back(sidecar_path);
    }
    write_recipes_jsonl(loaded.set, out_path, /*inline_features=*/true);
    const std::string reject_path = out_path + ".rejects.json";
    write_rejections(loaded.rejected, reject_path);
    write_manifest(out_path + ".manifest.json", "ingest",
                   {{"d_vis", std::to_string(d_vis)}}, inputs,
                   {out_path, reject_path}, seed);
    for (const auto& w : warnings.items)
        std::cerr << "warning: sidecar id '" << w.id << "': " << w.reason << "\n";
    std::cout << "loaded=" << loaded.set.size() << " rejected=" << loaded.rejected.count()
              << " sidecar_warnings=" << warnings.count() << "\n";
    return 0;
}

// --- build-data -------------------------------------------------------

int cmd_build_data(const std::string& stage_str, const std::string& bank_path,
                   const std::string& recipes_path, int d_vis,
                   const std::string& partition_str, std::uint64_t seed,
                   const std::string& out_path) {
    const Stage stage = require_stage(stage_str);
    const std::vector<PromptTemplate> bank = load_prompt_bank(bank_path);
    LoadResult loaded = load_recipes(recipes_path, d_vis);
    RecipeSet set = std::move(loaded.set);
    if (!partition_str.empty()) {
        const auto p = parse_partition(partition_str);
        if (!p) throw ArgError("unknown partition '" + partition_str + "'");
        set = partition_slice(set, *p);
    }
    if (set.recipes.empty()) throw DataError("build-data: no recipes after filtering");
    const auto records = build_training_records(bank, set, stage, seed);
    write_training_data(records, out_path);
    write_manifest(out_path + ".manifest.json", "build-data",
                   {{"stage", stage_name(stage)},
                    {"partition", partition_str},
                    {"d_vis", std::to_string(d_vis)}},
                   {bank_path, recipes_path}, {out_path}, seed);
    std::size_t zero_visual = 0;
    for (const auto& r : records) zero_visual += r.visual_index < 0 ? 1 : 0;
    std::cout << "records=" << records.size() << " zero_visual=" << zero_visual << "\n";
    return 0;
}

// --- train ------------------------------------------------------------

struct TrainFlags {
    std::string stage = "S1";
    std::string data_path;
    std::string init_path;
    std::string out_path;
    std::string trace_path;
    std::string config_path;
    bool force = false;
    int epochs = -1;
    double lr = -1.0;
    double warmup_ratio = -1.0;
    int batch_size = -1;
    std::uint64_t seed = 0;
    std::string scale_mode = "paper-literal";
    double lambda_bleu = 1.01;
    double lambda_rouge = 1.0;
    int d = -1, context = -1, vocab_max = -1;
};

// Flags override config-file values; unset flags fall back to the file, then
// to the library defaults.
void apply_config_file(TrainFlags& f) {
    if (f.config_path.empty()) return;
    std::ifstream in(f.config_path);
    if (!in) throw IoError("cannot open config: " + f.config_path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("bad config file: ") + e.what());
    }
    auto take_int = [&](const char* key, int& slot) {
        if (slot < 0 && j.contains(key)) slot = j.at(key).get<int>();
    };
    auto take_double = [&](const char* key, double& slot) {
        if (slot < 0 && j.contains(key)) slot = j.at(key).get<double>();
    };
    take_int("epochs", f.epochs);
    take_double("lr", f.lr);
    take_double("warmup_ratio", f.warmup_ratio);
    take_int("batch_size", f.batch_size);
    take_int("d", f.d);
    take_int("context", f.context);
    take_int("vocab_max", f.vocab_max);
}

int cmd_train(TrainFlags f) {
    const Stage stage = require_stage(f.stage);
    apply_config_file(f);

    if (stage == Stage::S0 && !f.init_path.empty() && !f.force)
        throw ConfigError("train: S0 starts from scratch; drop --init or pass --force");
    if (stage != Stage::S0 && f.init_path.empty() && !f.force)
        throw ConfigError("train: " + stage_name(stage) +
                          " needs the previous stage's checkpoint (--init), or --force");

    TrainConfig config;
    config.stage = stage;
    config.seed = f.seed;
    if (f.epochs >= 0) config.epochs = f.epochs;
    if (f.lr >= 0) config.lr = f.lr;
    if (f.warmup_ratio >= 0) config.warmup_ratio = f.warmup_ratio;
    if (f.batch_size >= 0) config.batch_size = f.batch_size;
    ScaleConfig scale;
    scale.mode = require_mode(f.scale_mode);
    scale.lambda_bleu = f.lambda_bleu;
    scale.lambda_rougeL = f.lambda_rouge;
    if (stage == Stage::S3) config.scale_config = scale;

    ModelShape shape;
    if (f.d > 0) shape.d = f.d;
    if (f.context > 0) shape.context = f.context;
    if (f.vocab_max > 0) shape.vocab_max = f.vocab_max;

    const auto records = load_training_data(f.data_path);
    if (records.empty()) throw DataError("train: empty training data");
    const int d_vis = static_cast<int>(records.front().visual.size());

    std::optional<ModelParams> init;
    std::vector<std::string> inputs = {f.data_path};
    if (!f.init_path.empty()) {
        init = load_checkpoint(f.init_path);
        inputs.push_back(f.init_path);
    }

    const std::string trace_path =
        f.trace_path.empty() ? f.out_path + ".trace.jsonl" : f.trace_path;
    TrainTrace trace;
    ModelParams trained;
    try {
        trained = run_stage(std::move(init), records, config, shape, d_vis, trace);
    } catch (const NumericError&) {
        write_trace_jsonl(trace, trace_path, scale.mode);  // keep the partial trace
        throw;
    }
    save_checkpoint(trained, f.out_path);
    write_trace_jsonl(trace, trace_path, scale.mode);
    write_manifest(f.out_path + ".manifest.json", "train",
                   {{"stage", stage_name(stage)},
                    {"epochs", std::to_string(config.epochs)},
                    {"lr", str(config.lr)},
                    {"warmup_ratio", str(config.warmup_ratio)},
                    {"batch_size", std::to_string(config.batch_size)},
                    {"scale_mode", scale_mode_name(scale.mode)},
                    {"lambda_bleu", str(scale.lambda_bleu)},
                    {"lambda_rouge", str(scale.lambda_rougeL)}},
                   inputs, {f.out_path, trace_path}, f.seed);
    const double final_loss =
        trace.steps.empty() ? 0.0 : trace.steps.back().loss.l_final;
    std::cout << "steps=" << trace.steps.size() << " final_loss=" << final_loss << "\n";
    return 0;
}

// --- eval / ablate ----------------------------------------------------

std::set<InputKind> parse_mask(const std::string& spec) {
    std::set<InputKind> mask;
    std::size_t start = 0;
    while (start <= spec.size()) {
        const std::size_t plus = spec.find('+', start);
        const std::string part = spec.substr(
            start, plus == std::string::npos ? std::string::npos : plus - start);
        if (!part.empty()) {
            const auto kind = parse_input_kind(part);
            if (!kind) throw ArgError("unknown input kind '" + part + "' in mask");
            mask.insert(*kind);
        }
        if (plus == std::string::npos) break;
        start = plus + 1;
    }
    if (mask.empty()) throw ArgError("empty input mask '" + spec + "'");
    return mask;
}

std::string mask_name(const std::set<InputKind>& mask) {
    std::string out;
    for (InputKind k : mask) {
        if (!out.empty()) out += "+";
        out += input_kind_name(k);
    }
    return out;
}

RecipeSet load_test_set(const std::string& path, const std::string& sidecar,
                        int d_vis) {
    LoadResult loaded = load_recipes(path, d_vis);
    // A wrong feature dimension here means the test data does not match the
    // checkpoint; silently evaluating without those images would mislead.
    for (const auto& item : loaded.rejected.items)
        if (item.reason.find("dimension") != std::string::npos)
            throw DataError("test set: " + item.id + ": " + item.reason +
                            " (checkpoint expects d_vis " + std::to_string(d_vis) + ")");
    if (!sidecar.empty()) attach_visual_sidecar(loaded.set, sidecar);
    return std::move(loaded.set);
}

int cmd_eval(const std::string& checkpoint_path, const std::string& test_path,
             const std::string& sidecar_path, const std::string& bank_path,
             const std::string& out_path, const std::string& csv_path, bool by_cuisine,
             bool oracle_mode, int max_len, std::uint64_t seed) {
    const ModelParams params = load_checkpoint(checkpoint_path);
    const RecipeSet test = load_test_set(test_path, sidecar_path, params.d_vis);
    const std::vector<PromptTemplate> bank = load_prompt_bank(bank_path);

    EvalOptions options;
    options.max_len = max_len;
    options.oracle_mode = oracle_mode;
    options.by_cuisine = by_cuisine;
    const auto reports = evaluate_model(params, bank, test, options);

    write_reports_json(reports, out_path);
    std::vector<std::string> outputs = {out_path};
    if (!csv_path.empty()) {
        write_reports_csv(reports, csv_path);
        outputs.push_back(csv_path);
    }
    write_manifest(out_path + ".manifest.json", "eval",
                   {{"by_cuisine", by_cuisine ? "true" : "false"},
                    {"oracle_mode", oracle_mode ? "true" : "false"},
                    {"max_len", std::to_string(max_len)}},
                   {checkpoint_path, test_path, bank_path}, outputs, seed);
    std::cout << reports_markdown(reports) << "\n";
    return 0;
}

int cmd_ablate_inputs(const std::string& checkpoint_path, const std::string& test_path,
                      const std::string& sidecar_path, const std::string& bank_path,
                      const std::string& out_path, const std::vector<std::string>& masks,
                      int max_len, std::uint64_t seed) {
    if (masks.empty()) throw ArgError("ablate-inputs: at least one --mask is required");
    const ModelParams params = load_checkpoint(checkpoint_path);
    const RecipeSet test = load_test_set(test_path, sidecar_path, params.d_vis);
    const std::vector<PromptTemplate> bank = load_prompt_bank(bank_path);

    std::vector<std::set<InputKind>> parsed;
    for (const std::string& m : masks) {
        const auto mask = parse_mask(m);
        bool dup = false;
        for (const auto& seen : parsed) dup = dup || seen == mask;
        if (!dup) parsed.push_back(mask);
    }

    std::vector<NamedReport> grid;
    for (const auto& mask : parsed) {
        EvalOptions options;
        options.max_len = max_len;
        options.input_mask = mask;
        auto rows = evaluate_model(params, bank, test, options);
        NamedReport row = std::move(rows.back());  // the "overall" row
        row.name = mask_name(mask);
        grid.push_back(std::move(row));
    }

    write_reports_json(grid, out_path);
    write_manifest(out_path + ".manifest.json", "ablate-inputs",
                   {{"max_len", std::to_string(max_len)}},
                   {checkpoint_path, test_path, bank_path}, {out_path}, seed);
    std::cout << reports_markdown(grid) << "\n";
    return 0;
}

// --- oracle-check -----------------------------------------------------

bool close(double a, double b, double tol = 1e-9) { return std::fabs(a - b) <= tol; }

int cmd_oracle_check(int trials, std::uint64_t seed) {
    int failures = 0;
    auto report = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
        failures += ok ? 0 : 1;
    };

    // Closed-form points first.
    report("bleu1 clipped 0.25",
           close(bleu_k({"a", "a", "a", "a"}, {"a", "b", "c", "d"}, 1), 0.25));
    report("brevity penalty e^-1",
           close(bleu_k({"a"}, {"a", "a"}, 1), std::exp(1.0 - 2.0)));
    report("perplexity uniform 10",
           close(perplexity(std::vector<double>(5, std::log(0.1))), 10.0));
    {
        const TokenSeq s = {"mix", "the", "batter", "well"};
        const TokenSeq other = {"preheat", "oven", "to", "350"};
        report("cider self-match 10", close(cider(s, s, build_idf({s, other})), 10.0));
    }

    // Randomized agreement against the brute-force transcriptions.
    const std::vector<std::string> alphabet = {"a", "b", "c", "d", "e", "f"};
    Rng rng(seed);
    auto random_seq = [&]() {
        TokenSeq s(1 + rng.below(8));
        for (std::string& t : s) t = alphabet[rng.below(alphabet.size())];
        return s;
    };
    bool ok_lcs = true, ok_bleu = true, ok_sacre = true, ok_rouge = true, ok_cider = true;
    std::vector<TokenSeq> corpus;
    for (int i = 0; i < 16; ++i) corpus.push_back(random_seq());
    for (int t = 0; t < trials; ++t) {
        const TokenSeq cand = random_seq();
        const TokenSeq ref = random_seq();
        const PRF rl = rouge_l(cand, ref);
        const int lcs = oracle::lcs_exhaustive(cand, ref);
        ok_lcs = ok_lcs && close(rl.precision * static_cast<double>(cand.size()),
                                 static_cast<double>(lcs));
        for (int k = 1; k <= 4; ++k)
            ok_bleu = ok_bleu &&
                      close(bleu_k(cand, ref, k), oracle::bleu_bruteforce(cand, ref, k));
        ok_sacre = ok_sacre &&
                   close(sacrebleu(cand, ref), oracle::sacrebleu_bruteforce(cand, ref));
        for (int n = 1; n <= 2; ++n) {
            const PRF got = rouge_n(cand, ref, n);
            const auto want = oracle::rouge_n_bruteforce(cand, ref, n);
            ok_rouge = ok_rouge && close(got.precision, want.precision) &&
                       close(got.recall, want.recall) && close(got.f1, want.f1);
        }
        ok_cider = ok_cider && close(cider(cand, ref, build_idf(corpus)),
                                     oracle::cider_bruteforce(cand, ref, corpus));
    }
    report("rouge_l vs exhaustive lcs (" + std::to_string(trials) + " trials)", ok_lcs);
    report("bleu_k vs brute force", ok_bleu);
    report("sacrebleu vs brute force", ok_sacre);
    report("rouge_n vs brute force", ok_rouge);
    report("cider vs brute force", ok_cider);

    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recipe-forge: staged recipe-LM training and evaluation"};
    app.require_subcommand(1);

    // synth
    SynthConfig synth_config;
    std::string synth_out = "recipes.jsonl", synth_sidecar;
    auto* synth = app.add_subcommand("synth", "generate a deterministic synthetic corpus");
    synth->add_option("--count", synth_config.count);
    synth->add_option("--d-vis", synth_config.d_vis);
    synth->add_option("--image-frac", synth_config.image_frac);
    synth->add_option("--seed", synth_config.seed);
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--sidecar", synth_sidecar,
                      "write image features to a separate sidecar file");

    // ingest
    std::string in_recipes, in_sidecar, in_out = "validated.jsonl";
    int in_d_vis = 8;
    std::uint64_t in_seed = 0;
    auto* ingest = app.add_subcommand("ingest", "validate a recipe JSONL file");
    ingest->add_option("--recipes", in_recipes)->required();
    ingest->add_option("--sidecar", in_sidecar);
    ingest->add_option("--d-vis", in_d_vis);
    ingest->add_option("--out", in_out)->required();
    ingest->add_option("--seed", in_seed);

    // build-data
    std::string bd_stage = "S1", bd_bank, bd_recipes, bd_partition, bd_out;
    int bd_d_vis = 8;
    std::uint64_t bd_seed = 0;
    auto* build = app.add_subcommand("build-data", "compile dialog training data");
    build->add_option("--stage", bd_stage)->required();
    build->add_option("--bank", bd_bank)->required();
    build->add_option("--recipes", bd_recipes)->required();
    build->add_option("--d-vis", bd_d_vis);
    build->add_option("--partition", bd_partition, "train|val|test (default: all)");
    build->add_option("--seed", bd_seed);
    build->add_option("--out", bd_out)->required();

    // train
    TrainFlags tf;
    auto* train = app.add_subcommand("train", "run one training stage");
    train->add_option("--stage", tf.stage)->required();
    train->add_option("--data", tf.data_path)->required();
    train->add_option("--init", tf.init_path, "checkpoint from the previous stage");
    train->add_option("--out", tf.out_path)->required();
    train->add_option("--trace", tf.trace_path);
    train->add_option("--config", tf.config_path, "JSON config; flags override it");
    train->add_flag("--force", tf.force, "skip the stage-ordering check");
    train->add_option("--epochs", tf.epochs);
    train->add_option("--lr", tf.lr);
    train->add_option("--warmup-ratio", tf.warmup_ratio);
    train->add_option("--batch-size", tf.batch_size);
    train->add_option("--seed", tf.seed);
    train->add_option("--scale-mode", tf.scale_mode, "paper-literal|penalty");
    train->add_option("--lambda-bleu", tf.lambda_bleu);
    train->add_option("--lambda-rouge", tf.lambda_rouge);
    train->add_option("--dim", tf.d);
    train->add_option("--context", tf.context);
    train->add_option("--vocab-max", tf.vocab_max);

    // eval
    std::string ev_ckpt, ev_test, ev_sidecar, ev_bank, ev_out, ev_csv;
    bool ev_cuisines = false, ev_oracle = false;
    int ev_max_len = 96;
    std::uint64_t ev_seed = 0;
    auto* eval = app.add_subcommand("eval", "decode and score a test set");
    eval->add_option("--checkpoint", ev_ckpt)->required();
    eval->add_option("--test", ev_test)->required();
    eval->add_option("--sidecar", ev_sidecar);
    eval->add_option("--bank", ev_bank)->required();
    eval->add_option("--out", ev_out)->required();
    eval->add_option("--csv", ev_csv);
    eval->add_flag("--cuisines", ev_cuisines, "one row per cuisine plus overall");
    eval->add_flag("--oracle", ev_oracle, "score the references against themselves");
    eval->add_option("--max-len", ev_max_len);
    eval->add_option("--seed", ev_seed);

    // ablate-inputs
    std::string ab_ckpt, ab_test, ab_sidecar, ab_bank, ab_out;
    std::vector<std::string> ab_masks;
    int ab_max_len = 96;
    std::uint64_t ab_seed = 0;
    auto* ablate = app.add_subcommand("ablate-inputs", "evaluate under input masks");
    ablate->add_option("--checkpoint", ab_ckpt)->required();
    ablate->add_option("--test", ab_test)->required();
    ablate->add_option("--sidecar", ab_sidecar);
    ablate->add_option("--bank", ab_bank)->required();
    ablate->add_option("--out", ab_out)->required();
    ablate->add_option("--mask", ab_masks,
                       "'+'-joined inputs, e.g. image+title; repeatable");
    ablate->add_option("--max-len", ab_max_len);
    ablate->add_option("--seed", ab_seed);

    // oracle-check
    int oc_trials = 100;
    std::uint64_t oc_seed = 7;
    auto* oracle_cmd =
        app.add_subcommand("oracle-check", "cross-check metrics against brute force");
    oracle_cmd->add_option("--trials", oc_trials);
    oracle_cmd->add_option("--seed", oc_seed);

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(synth_config, synth_out, synth_sidecar);
        if (ingest->parsed())
            return cmd_ingest(in_recipes, in_sidecar, in_out, in_d_vis, in_seed);
        if (build->parsed())
            return cmd_build_data(bd_stage, bd_bank, bd_recipes, bd_d_vis, bd_partition,
                                  bd_seed, bd_out);
        if (train->parsed()) return cmd_train(tf);
        if (eval->parsed())
            return cmd_eval(ev_ckpt, ev_test, ev_sidecar, ev_bank, ev_out, ev_csv,
                            ev_cuisines, ev_oracle, ev_max_len, ev_seed);
        if (ablate->parsed())
            return cmd_ablate_inputs(ab_ckpt, ab_test, ab_sidecar, ab_bank, ab_out,
                                     ab_masks, ab_max_len, ab_seed);
        if (oracle_cmd->parsed()) return cmd_oracle_check(oc_trials, oc_seed);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ArgError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    }
}
