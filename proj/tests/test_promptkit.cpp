#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

#include "rforge/errors.hpp"
#include "rforge/promptkit.hpp"
#include "rforge/synth.hpp"

using namespace rforge;

namespace {

PromptTemplate make_template(const std::string& id, std::set<Stage> stages,
                             std::set<InputKind> inputs, std::vector<TargetKind> targets,
                             const std::string& text) {
    PromptTemplate t;
    t.id = id;
    t.stages = std::move(stages);
    t.required_inputs = std::move(inputs);
    t.targets = std::move(targets);
    t.text = text;
    return t;
}

Recipe make_recipe() {
    Recipe r;
    r.id = "r1";
    r.title = "Buttermilk Bread";
    r.ingredients = {"flour", "buttermilk", "yeast", "salt"};
    r.instructions = {"Mix everything.", "Bake until done."};
    r.image_features = {{0.5, -0.25}};
    return r;
}

std::vector<PromptTemplate> small_s2_bank() {
    return {
        make_template("a", {Stage::S2}, {InputKind::image}, {TargetKind::title},
                      "What is the name of the dish in this image?"),
        make_template("b", {Stage::S2}, {InputKind::image}, {TargetKind::ingredients},
                      "List the ingredients."),
        make_template("c", {Stage::S2}, {InputKind::title}, {TargetKind::instructions},
                      "Generate cooking instructions for <name>:"),
        make_template("d", {Stage::S2}, {InputKind::image},
                      {TargetKind::title, TargetKind::ingredients, TargetKind::instructions},
                      "Write the full recipe."),
        make_template("e", {Stage::S2}, {InputKind::title}, {TargetKind::instructions},
                      "How do I make <name>?"),
    };
}

}  // namespace

TEST_CASE("validate_template placeholder rules") {
    CHECK_THROWS_AS(
        validate_template(make_template("x", {Stage::S2}, {InputKind::title},
                                        {TargetKind::instructions}, "no placeholder")),
        DataError);
    CHECK_THROWS_AS(
        validate_template(make_template("x", {Stage::S2}, {InputKind::image},
                                        {TargetKind::instructions},
                                        "stray <ingredients> placeholder")),
        DataError);
    // S0/S1 must take all three inputs and target instructions.
    CHECK_THROWS_AS(
        validate_template(make_template("x", {Stage::S1}, {InputKind::title},
                                        {TargetKind::instructions}, "make <name>")),
        DataError);
    CHECK_THROWS_AS(validate_template(make_template(
                        "x", {Stage::S0},
                        {InputKind::image, InputKind::title, InputKind::ingredients},
                        {TargetKind::title}, "with <name> and <ingredients>")),
                    DataError);
    // Targets must be unique and ordered.
    CHECK_THROWS_AS(
        validate_template(make_template("x", {Stage::S2}, {InputKind::image},
                                        {TargetKind::instructions, TargetKind::title},
                                        "text")),
        DataError);
    CHECK_NOTHROW(validate_template(
        make_template("ok", {Stage::S2}, {InputKind::title}, {TargetKind::instructions},
                      "Generate cooking instructions for <name>:")));
}

TEST_CASE("shipped prompt bank loads and matches the published structure") {
    const auto bank = load_prompt_bank(PROMPT_BANK_PATH);
    CHECK(bank.size() == 102);

    std::size_t s01 = 0;
    bool has_table1 = false;
    for (const auto& t : bank) {
        if (t.stages.count(Stage::S0) > 0 || t.stages.count(Stage::S1) > 0) {
            ++s01;
            CHECK(t.targets == std::vector<TargetKind>{TargetKind::instructions});
            CHECK(t.required_inputs.size() == 3);
        }
        if (t.text == "Generate cooking instructions for <name>:") {
            has_table1 = true;
            CHECK(t.required_inputs == std::set<InputKind>{InputKind::title});
            CHECK(t.targets == std::vector<TargetKind>{TargetKind::instructions});
        }
    }
    CHECK(s01 == 35);
    CHECK(has_table1);

    // All six instruction-generation input masks are covered.
    std::set<std::set<InputKind>> masks;
    for (const auto& t : bank)
        if (t.targets == std::vector<TargetKind>{TargetKind::instructions} &&
            (t.stages.count(Stage::S2) > 0 || t.stages.count(Stage::S3) > 0))
            masks.insert(t.required_inputs);
    CHECK(masks.count({InputKind::image}) == 1);
    CHECK(masks.count({InputKind::title}) == 1);
    CHECK(masks.count({InputKind::image, InputKind::title}) == 1);
    CHECK(masks.count({InputKind::image, InputKind::ingredients}) == 1);
    CHECK(masks.count({InputKind::title, InputKind::ingredients}) == 1);
    CHECK(masks.count({InputKind::image, InputKind::title, InputKind::ingredients}) == 1);
}

TEST_CASE("load_prompt_bank rejects bad banks") {
    const std::string path = "promptkit_test_bank.jsonl";
    {
        std::ofstream out(path);
        out << R"({"id":"x","stages":["S2"],"required_inputs":["title"],"targets":["instructions"],"template":"missing placeholder"})"
            << "\n";
    }
    CHECK_THROWS_AS(load_prompt_bank(path), DataError);
    {
        std::ofstream out(path);
        out << R"({"id":"x","stages":["S2"],"required_inputs":[],"targets":["title"],"template":"t"})"
            << "\n"
            << R"({"id":"x","stages":["S2"],"required_inputs":[],"targets":["title"],"template":"t"})"
            << "\n";
    }
    CHECK_THROWS_AS(load_prompt_bank(path), DataError);  // duplicate id
    {
        std::ofstream out(path);
    }
    CHECK(load_prompt_bank(path).empty());
    std::remove(path.c_str());
}

TEST_CASE("sample_task stage filtering and determinism") {
    auto bank = small_s2_bank();
    bank.push_back(make_template(
        "s1", {Stage::S1}, {InputKind::image, InputKind::title, InputKind::ingredients},
        {TargetKind::instructions}, "Make <name> from <ingredients>."));

    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const TaskSample s = sample_task(bank, Stage::S1, rng);
        CHECK(s.target_kinds == std::vector<TargetKind>{TargetKind::instructions});
        CHECK(s.tmpl.id == "s1");
    }

    Rng a(9), b(9);
    for (int i = 0; i < 50; ++i)
        CHECK(sample_task(bank, Stage::S2, a).tmpl.id ==
              sample_task(bank, Stage::S2, b).tmpl.id);

    CHECK_THROWS_AS(sample_task(bank, Stage::S3, rng), ConfigError);
}

TEST_CASE("sample_task draws target combos uniformly") {
    const auto bank = small_s2_bank();  // 4 distinct target combos, 5 templates
    Rng rng(31);
    std::map<std::string, int> combo_counts;
    std::map<std::string, int> tmpl_counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const TaskSample s = sample_task(bank, Stage::S2, rng);
        std::string key;
        for (TargetKind t : s.target_kinds) key += target_kind_name(t) + "+";
        combo_counts[key]++;
        tmpl_counts[s.tmpl.id]++;
    }
    REQUIRE(combo_counts.size() == 4);
    for (const auto& [key, count] : combo_counts) {
        // Within 3 standard deviations of uniform.
        const double expect = draws / 4.0;
        const double sd = std::sqrt(draws * 0.25 * 0.75);
        CHECK(std::abs(count - expect) < 3.0 * sd);
    }
    // The instructions combo splits evenly between its two templates.
    const double pair_total = tmpl_counts["c"] + tmpl_counts["e"];
    CHECK(std::abs(tmpl_counts["c"] - pair_total / 2.0) <
          3.0 * std::sqrt(pair_total * 0.25));
}

TEST_CASE("ingredient_dropout bounds and identity") {
    const std::vector<std::string> four = {"a", "b", "c", "d"};
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto out = ingredient_dropout(four, 0.5, rng);
        CHECK(out.size() >= 2);
        CHECK(out.size() <= 4);
    }
    for (int i = 0; i < 20; ++i) CHECK(ingredient_dropout(four, 0.0, rng) == four);
}

TEST_CASE("ingredient_dropout never exceeds the cap and keeps order") {
    for (std::size_t n = 1; n <= 8; ++n) {
        std::vector<std::string> ing;
        for (std::size_t i = 0; i < n; ++i) ing.push_back("ing" + std::to_string(i));
        const std::size_t max_removed = n / 2;  // floor(0.5 * n)
        for (std::uint64_t seed = 0; seed < 300; ++seed) {
            Rng rng(seed);
            const auto out = ingredient_dropout(ing, 0.5, rng);
            CHECK(out.size() >= n - max_removed);
            // Survivors keep relative order.
            std::size_t pos = 0;
            for (const auto& s : out) {
                while (pos < n && ing[pos] != s) ++pos;
                CHECK(pos < n);
                ++pos;
            }
        }
    }
}

TEST_CASE("instantiate substitutes placeholders") {
    const Recipe r = make_recipe();
    TaskSample s;
    s.tmpl = make_template("c", {Stage::S2}, {InputKind::title},
                           {TargetKind::instructions},
                           "Generate cooking instructions for <name>:");
    s.target_kinds = {TargetKind::instructions};
    s.input_mask = {InputKind::title};
    s.stage = Stage::S2;
    Rng rng(1);
    const DialogExample d = instantiate(s, r, 2, rng);
    CHECK(d.query == "Generate cooking instructions for Buttermilk Bread:");
    CHECK(d.query.find("<name>") == std::string::npos);
    CHECK(d.target == "1. Mix everything.\n2. Bake until done.");
    CHECK(d.visual_is_zero);  // image not in the mask
    CHECK(d.visual == std::vector<double>{0.0, 0.0});
}

TEST_CASE("instantiate image policy") {
    TaskSample s;
    s.tmpl = make_template("img", {Stage::S2}, {InputKind::image},
                           {TargetKind::title}, "Name this dish.");
    s.target_kinds = {TargetKind::title};
    s.input_mask = {InputKind::image};
    s.stage = Stage::S2;
    Rng rng(1);

    const Recipe with_image = make_recipe();
    const DialogExample a = instantiate(s, with_image, 2, rng);
    CHECK(!a.visual_is_zero);
    CHECK(a.visual == with_image.image_features[0]);

    Recipe without = make_recipe();
    without.image_features.clear();
    const DialogExample b = instantiate(s, without, 2, rng);
    CHECK(b.visual_is_zero);
    CHECK(b.visual == std::vector<double>{0.0, 0.0});
}

TEST_CASE("instantiate without ingredients placeholder ignores dropout seed") {
    const Recipe r = make_recipe();
    TaskSample s;
    s.tmpl = make_template("c", {Stage::S3}, {InputKind::title},
                           {TargetKind::instructions}, "How do I make <name>?");
    s.target_kinds = {TargetKind::instructions};
    s.input_mask = {InputKind::title};
    s.stage = Stage::S3;
    Rng r1(1), r2(999);
    CHECK(instantiate(s, r, 2, r1).query == instantiate(s, r, 2, r2).query);
    CHECK(instantiate(s, r, 2, r1).query.find("flour") == std::string::npos);
}

TEST_CASE("instantiate applies dropout only at S2/S3") {
    Recipe r = make_recipe();
    r.ingredients = {"a1", "a2", "a3", "a4", "a5", "a6"};
    TaskSample s;
    s.tmpl = make_template(
        "f", {Stage::S1, Stage::S2},
        {InputKind::image, InputKind::title, InputKind::ingredients},
        {TargetKind::instructions}, "Make <name> from <ingredients>.");
    s.target_kinds = {TargetKind::instructions};
    s.input_mask = s.tmpl.required_inputs;

    s.stage = Stage::S1;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const DialogExample d = instantiate(s, r, 2, rng);
        CHECK(d.query.find("a1, a2, a3, a4, a5, a6") != std::string::npos);
    }

    s.stage = Stage::S2;
    bool dropped = false;
    for (std::uint64_t seed = 0; seed < 50 && !dropped; ++seed) {
        Rng rng(seed);
        dropped = instantiate(s, r, 2, rng).query.find("a1, a2, a3, a4, a5, a6") ==
                  std::string::npos;
    }
    CHECK(dropped);
}

TEST_CASE("render_target multi-target labeled sections") {
    const Recipe r = make_recipe();
    const std::string multi = render_target(
        {TargetKind::title, TargetKind::ingredients, TargetKind::instructions}, r);
    CHECK(multi ==
          "Title: Buttermilk Bread\n"
          "Ingredients: flour, buttermilk, yeast, salt\n"
          "Instructions: 1. Mix everything.\n2. Bake until done.");
    CHECK(render_target({TargetKind::title}, r) == "Buttermilk Bread");
}

TEST_CASE("serialize_dialog format and parse-back") {
    CHECK(serialize_dialog("Q", "T") == "Human : Q <image> <STOP>\nAssistant : T <STOP>\n");
    const auto parsed = parse_dialog("Human : Q <image> <STOP>\nAssistant : T <STOP>\n");
    REQUIRE(parsed.has_value());
    CHECK(parsed->query == "Q");
    CHECK(parsed->target == "T");
    CHECK(!parse_dialog("not a dialog").has_value());
    CHECK_THROWS_AS(serialize_dialog("Q", ""), DataError);

    // Round-trip with newlines inside the target.
    const std::string q = "Make Buttermilk Bread from flour, yeast.";
    const std::string t = "1. Mix everything.\n2. Bake until done.";
    const auto back = parse_dialog(serialize_dialog(q, t));
    REQUIRE(back.has_value());
    CHECK(back->query == q);
    CHECK(back->target == t);
}
