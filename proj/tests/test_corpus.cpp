#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "rforge/corpus.hpp"
#include "rforge/errors.hpp"
#include "rforge/synth.hpp"

using namespace rforge;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& content) {
        static int counter = 0;
        path = "corpus_test_" + std::to_string(counter++) + ".jsonl";
        std::ofstream out(path);
        out << content;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

const char* kValidLine =
    R"({"id":"r1","title":"Tomato Soup","ingredients":["2 tomatoes"],"instructions":["Simmer."],"cuisine":"Italian","partition":"train"})";

std::string valid_line(const std::string& id) {
    return std::string(R"({"id":")") + id +
           R"(","title":"T","ingredients":["i"],"instructions":["s"],"partition":"train"})";
}

}  // namespace

TEST_CASE("load_recipes accepts valid lines") {
    TempFile f(valid_line("a") + "\n" + valid_line("b") + "\n" + valid_line("c") + "\n");
    const LoadResult r = load_recipes(f.path, 4);
    CHECK(r.set.size() == 3);
    CHECK(r.rejected.count() == 0);
    CHECK(r.set.d_vis == 4);
}

TEST_CASE("load_recipes rejects a line missing title") {
    TempFile f(std::string(kValidLine) + "\n" +
               R"({"id":"r2","ingredients":["x"],"instructions":["y"]})" + "\n");
    const LoadResult r = load_recipes(f.path, 4);
    CHECK(r.set.size() == 1);
    REQUIRE(r.rejected.count() == 1);
    CHECK(r.rejected.items[0].line == 2);
}

TEST_CASE("load_recipes rejects invariant violations") {
    TempFile f(
        R"({"id":"a","title":"  ","ingredients":["x"],"instructions":["y"]})" "\n"
        R"({"id":"b","title":"T","ingredients":[],"instructions":["y"]})" "\n"
        R"({"id":"c","title":"T","ingredients":["x"],"instructions":[]})" "\n"
        "not json at all\n");
    const LoadResult r = load_recipes(f.path, 4);
    CHECK(r.set.size() == 0);
    CHECK(r.rejected.count() == 4);
}

TEST_CASE("load_recipes rejects duplicate ids") {
    TempFile f(valid_line("same") + "\n" + valid_line("same") + "\n");
    const LoadResult r = load_recipes(f.path, 4);
    CHECK(r.set.size() == 1);
    CHECK(r.rejected.count() == 1);
}

TEST_CASE("load_recipes on empty file") {
    TempFile f("");
    const LoadResult r = load_recipes(f.path, 4);
    CHECK(r.set.size() == 0);
    CHECK(r.rejected.count() == 0);
}

TEST_CASE("load_recipes on missing file throws IoError") {
    CHECK_THROWS_AS(load_recipes("does_not_exist.jsonl", 4), IoError);
}

TEST_CASE("load_recipes checks feature dimensions") {
    TempFile f(
        R"({"id":"a","title":"T","ingredients":["x"],"instructions":["y"],"image_features":[[1,2,3]]})" "\n");
    CHECK(load_recipes(f.path, 3).set.size() == 1);
    const LoadResult wrong = load_recipes(f.path, 4);
    CHECK(wrong.set.size() == 0);
    CHECK(wrong.rejected.count() == 1);
}

TEST_CASE("attach_visual_sidecar joins on id and warns on unknowns") {
    TempFile recipes(valid_line("a") + "\n" + valid_line("b") + "\n");
    TempFile sidecar(
        R"({"id":"a","vectors":[[1,2]]})" "\n"
        R"({"id":"ghost","vectors":[[3,4]]})" "\n"
        R"({"id":"b","vectors":[[5,6,7]]})" "\n");
    LoadResult r = load_recipes(recipes.path, 2);
    RejectionReport warnings;
    attach_visual_sidecar(r.set, sidecar.path, &warnings);
    CHECK(r.set.recipes[0].has_image());
    CHECK(!r.set.recipes[1].has_image());  // wrong dimension dropped
    CHECK(warnings.count() == 2);          // unknown id + bad dimension
}

TEST_CASE("write/load round-trip preserves the set") {
    const RecipeSet set = make_synthetic_corpus({.count = 30, .d_vis = 4, .seed = 9});
    TempFile f("");
    write_recipes_jsonl(set, f.path, /*inline_features=*/true);
    const LoadResult back = load_recipes(f.path, 4);
    REQUIRE(back.set.size() == set.size());
    CHECK(back.rejected.count() == 0);
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(back.set.recipes[i].id == set.recipes[i].id);
        CHECK(back.set.recipes[i].title == set.recipes[i].title);
        CHECK(back.set.recipes[i].image_features == set.recipes[i].image_features);
        CHECK(back.set.recipes[i].partition == set.recipes[i].partition);
    }
}

TEST_CASE("filter_with_images definition and idempotence") {
    RecipeSet set = make_synthetic_corpus({.count = 50, .d_vis = 4, .image_frac = 0.5, .seed = 3});
    const RecipeSet imaged = filter_with_images(set);
    std::size_t expect = 0;
    for (const Recipe& r : set.recipes) expect += r.has_image() ? 1 : 0;
    CHECK(imaged.size() == expect);
    for (const Recipe& r : imaged.recipes) CHECK(r.has_image());

    // Order preserved.
    std::size_t j = 0;
    for (const Recipe& r : set.recipes)
        if (r.has_image()) CHECK(r.id == imaged.recipes[j++].id);

    const RecipeSet twice = filter_with_images(imaged);
    CHECK(twice.size() == imaged.size());

    RecipeSet all = make_synthetic_corpus({.count = 20, .d_vis = 4, .image_frac = 1.0, .seed = 3});
    CHECK(filter_with_images(all).size() == all.size());
}

TEST_CASE("sample_subset determinism and bounds") {
    const RecipeSet set = make_synthetic_corpus({.count = 100, .d_vis = 4, .seed = 5});
    const RecipeSet a = sample_subset(set, 10, 42);
    const RecipeSet b = sample_subset(set, 10, 42);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.recipes[i].id == b.recipes[i].id);

    const RecipeSet other = sample_subset(set, 10, 43);
    bool same = true;
    for (std::size_t i = 0; i < other.size(); ++i)
        same = same && other.recipes[i].id == a.recipes[i].id;
    CHECK(!same);

    // n = |set| draws every recipe exactly once.
    const RecipeSet full = sample_subset(set, set.size(), 7);
    std::set<std::string> ids;
    for (const Recipe& r : full.recipes) ids.insert(r.id);
    CHECK(ids.size() == set.size());

    CHECK_THROWS_AS(sample_subset(set, 0, 1), ArgError);
    CHECK_THROWS_AS(sample_subset(set, set.size() + 1, 1), ArgError);
}

TEST_CASE("cuisine_slice case folding and partition_slice") {
    RecipeSet set;
    set.d_vis = 1;
    auto mk = [](const std::string& id, const std::string& cuisine) {
        Recipe r;
        r.id = id;
        r.title = "t";
        r.ingredients = {"i"};
        r.instructions = {"s"};
        r.cuisine = cuisine;
        return r;
    };
    set.recipes = {mk("1", "Italian"), mk("2", "Thai"), mk("3", "Italian"),
                   mk("4", "Thai"), mk("5", "Italian")};
    CHECK(cuisine_slice(set, "Italian").size() == 3);
    CHECK(cuisine_slice(set, "thai").size() == 2);
    CHECK(cuisine_slice(set, "THAI").size() == 2);
    CHECK(cuisine_slice(set, "French").size() == 0);
    CHECK(cuisine_slice(set, "Italian").size() + cuisine_slice(set, "Thai").size() <=
          set.size());

    const RecipeSet synth = make_synthetic_corpus({.count = 40, .d_vis = 2, .seed = 8});
    std::size_t total = 0;
    for (Partition p : {Partition::train, Partition::val, Partition::test})
        total += partition_slice(synth, p).size();
    CHECK(total == synth.size());
}

TEST_CASE("cuisine_labels first-seen order") {
    const RecipeSet set = make_synthetic_corpus({.count = 60, .d_vis = 2, .seed = 1});
    const auto labels = cuisine_labels(set);
    std::set<std::string> seen;
    for (const std::string& l : labels) CHECK(seen.insert(l).second);
    CHECK(!labels.empty());
}

TEST_CASE("synthetic corpus is deterministic") {
    const RecipeSet a = make_synthetic_corpus({.count = 25, .d_vis = 4, .seed = 11});
    const RecipeSet b = make_synthetic_corpus({.count = 25, .d_vis = 4, .seed = 11});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.recipes[i].id == b.recipes[i].id);
        CHECK(a.recipes[i].title == b.recipes[i].title);
        CHECK(a.recipes[i].image_features == b.recipes[i].image_features);
    }
}
