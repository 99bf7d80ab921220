#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rforge {

enum class Partition { train, val, test };

std::string partition_name(Partition p);
std::optional<Partition> parse_partition(const std::string& s);

// One recipe record: title, ingredients, instructions, optional per-image
// feature vectors (the stand-in for the encoded food image) and an optional
// free-form cuisine label.
struct Recipe {
    std::string id;
    std::string title;
    std::vector<std::string> ingredients;
    std::vector<std::string> instructions;
    std::vector<std::vector<double>> image_features;
    std::string cuisine;  // empty = untagged
    Partition partition = Partition::train;

    bool has_image() const { return !image_features.empty(); }
};

// Immutable after construction; all operations below are pure.
struct RecipeSet {
    std::vector<Recipe> recipes;
    int d_vis = 0;

    std::size_t size() const { return recipes.size(); }
};

struct RejectionReport {
    struct Item {
        int line = 0;  // 1-based line in the source file, 0 when not line-bound
        std::string id;
        std::string reason;
    };
    std::vector<Item> items;

    std::size_t count() const { return items.size(); }
};

struct LoadResult {
    RecipeSet set;
    RejectionReport rejected;
};

// Reads a JSONL recipe file. Malformed or invariant-violating lines are
// collected in the rejection report, never fatal; only an unreadable file
// throws (IoError).
LoadResult load_recipes(const std::string& path, int d_vis);

// Joins a JSONL sidecar of {id, vectors} onto the set. Vectors for unknown
// ids or with a wrong dimension are dropped and reported as warnings.
void attach_visual_sidecar(RecipeSet& set, const std::string& path,
                           RejectionReport* warnings = nullptr);

void write_recipes_jsonl(const RecipeSet& set, const std::string& path,
                         bool inline_features = false);
void write_visual_sidecar(const RecipeSet& set, const std::string& path);

// Exactly the recipes with at least one image feature vector, order preserved.
RecipeSet filter_with_images(const RecipeSet& set);

// n distinct recipes, deterministic for a fixed seed. Throws ArgError when
// n = 0 or n > |set|.
RecipeSet sample_subset(const RecipeSet& set, std::size_t n, std::uint64_t seed);

// Case-insensitive exact cuisine match, order preserved.
RecipeSet cuisine_slice(const RecipeSet& set, const std::string& label);

RecipeSet partition_slice(const RecipeSet& set, Partition p);

// Distinct cuisine labels present in the set, in first-seen order
// (case-folded for identity, original casing kept for display).
std::vector<std::string> cuisine_labels(const RecipeSet& set);

}  // namespace rforge
