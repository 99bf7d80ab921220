#include "rforge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "rforge/errors.hpp"
#include "rforge/rng.hpp"

namespace rforge {

namespace {

using nlohmann::json;

std::string fold_case(const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool blank_after_trim(const std::string& s) {
    for (unsigned char c : s)
        if (std::isspace(c) == 0) return false;
    return true;
}

std::vector<std::string> string_array(const json& j, const char* key) {
    std::vector<std::string> out;
    for (const auto& v : j.at(key)) {
        if (!v.is_string()) throw DataError(std::string(key) + " entries must be strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

// Parses one JSONL line into a Recipe, enforcing the Recipe invariants.
Recipe parse_recipe(const json& j, int d_vis) {
    Recipe r;
    r.id = j.at("id").get<std::string>();
    r.title = j.at("title").get<std::string>();
    if (blank_after_trim(r.title)) throw DataError("title is empty");
    r.ingredients = string_array(j, "ingredients");
    r.instructions = string_array(j, "instructions");
    if (r.ingredients.empty()) throw DataError("ingredients list is empty");
    if (r.instructions.empty()) throw DataError("instructions list is empty");
    if (j.contains("cuisine") && !j["cuisine"].is_null())
        r.cuisine = j["cuisine"].get<std::string>();
    if (j.contains("partition")) {
        const auto p = parse_partition(j["partition"].get<std::string>());
        if (!p) throw DataError("unknown partition '" + j["partition"].get<std::string>() + "'");
        r.partition = *p;
    }
    if (j.contains("image_features") && !j["image_features"].is_null()) {
        for (const auto& vec : j["image_features"]) {
            std::vector<double> v = vec.get<std::vector<double>>();
            if (static_cast<int>(v.size()) != d_vis)
                throw DataError("image feature vector has dimension " +
                                std::to_string(v.size()) + ", expected " +
                                std::to_string(d_vis));
            r.image_features.push_back(std::move(v));
        }
    }
    return r;
}

json recipe_to_json(const Recipe& r, bool inline_features) {
    json j;
    j["id"] = r.id;
    j["title"] = r.title;
    j["ingredients"] = r.ingredients;
    j["instructions"] = r.instructions;
    if (!r.cuisine.empty()) j["cuisine"] = r.cuisine;
    j["partition"] = partition_name(r.partition);
    if (inline_features && r.has_image()) j["image_features"] = r.image_features;
    return j;
}

}  // namespace

std::string partition_name(Partition p) {
    switch (p) {
        case Partition::train: return "train";
        case Partition::val: return "val";
        case Partition::test: return "test";
    }
    return "train";
}

std::optional<Partition> parse_partition(const std::string& s) {
    if (s == "train") return Partition::train;
    if (s == "val") return Partition::val;
    if (s == "test") return Partition::test;
    return std::nullopt;
}

LoadResult load_recipes(const std::string& path, int d_vis) {
    if (d_vis <= 0) throw ArgError("load_recipes: d_vis must be positive");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open recipe file: " + path);

    LoadResult result;
    result.set.d_vis = d_vis;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank_after_trim(line)) continue;
        try {
            const json j = json::parse(line);
            Recipe r = parse_recipe(j, d_vis);
            if (!seen_ids.insert(r.id).second) throw DataError("duplicate id '" + r.id + "'");
            result.set.recipes.push_back(std::move(r));
        } catch (const std::exception& e) {
            result.rejected.items.push_back({line_no, "", e.what()});
        }
    }
    return result;
}

void attach_visual_sidecar(RecipeSet& set, const std::string& path,
                           RejectionReport* warnings) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open visual sidecar: " + path);

    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < set.recipes.size(); ++i) by_id[set.recipes[i].id] = i;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank_after_trim(line)) continue;
        try {
            const json j = json::parse(line);
            const std::string id = j.at("id").get<std::string>();
            const auto it = by_id.find(id);
            if (it == by_id.end()) throw DataError("unknown recipe id '" + id + "'");
            std::vector<std::vector<double>> vecs;
            for (const auto& vec : j.at("vectors")) {
                std::vector<double> v = vec.get<std::vector<double>>();
                if (static_cast<int>(v.size()) != set.d_vis)
                    throw DataError("vector dimension " + std::to_string(v.size()) +
                                    " != d_vis " + std::to_string(set.d_vis));
                vecs.push_back(std::move(v));
            }
            set.recipes[it->second].image_features = std::move(vecs);
        } catch (const std::exception& e) {
            if (warnings) warnings->items.push_back({line_no, "", e.what()});
        }
    }
}

void write_recipes_jsonl(const RecipeSet& set, const std::string& path,
                         bool inline_features) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write recipe file: " + path);
    for (const Recipe& r : set.recipes) out << recipe_to_json(r, inline_features).dump() << '\n';
}

void write_visual_sidecar(const RecipeSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write visual sidecar: " + path);
    for (const Recipe& r : set.recipes) {
        if (!r.has_image()) continue;
        json j;
        j["id"] = r.id;
        j["vectors"] = r.image_features;
        out << j.dump() << '\n';
    }
}

RecipeSet filter_with_images(const RecipeSet& set) {
    RecipeSet out;
    out.d_vis = set.d_vis;
    for (const Recipe& r : set.recipes)
        if (r.has_image()) out.recipes.push_back(r);
    return out;
}

RecipeSet sample_subset(const RecipeSet& set, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ArgError("sample_subset: n must be positive");
    if (n > set.size())
        throw ArgError("sample_subset: n = " + std::to_string(n) + " exceeds set size " +
                       std::to_string(set.size()));
    std::vector<std::size_t> idx(set.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    // Partial Fisher-Yates: the first n slots are the draw.
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    RecipeSet out;
    out.d_vis = set.d_vis;
    for (std::size_t i = 0; i < n; ++i) out.recipes.push_back(set.recipes[idx[i]]);
    return out;
}

RecipeSet cuisine_slice(const RecipeSet& set, const std::string& label) {
    const std::string want = fold_case(label);
    RecipeSet out;
    out.d_vis = set.d_vis;
    for (const Recipe& r : set.recipes)
        if (!r.cuisine.empty() && fold_case(r.cuisine) == want) out.recipes.push_back(r);
    return out;
}

RecipeSet partition_slice(const RecipeSet& set, Partition p) {
    RecipeSet out;
    out.d_vis = set.d_vis;
    for (const Recipe& r : set.recipes)
        if (r.partition == p) out.recipes.push_back(r);
    return out;
}

std::vector<std::string> cuisine_labels(const RecipeSet& set) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const Recipe& r : set.recipes) {
        if (r.cuisine.empty()) continue;
        if (seen.insert(fold_case(r.cuisine)).second) out.push_back(r.cuisine);
    }
    return out;
}

}  // namespace rforge
