#include "rforge/synth.hpp"

#include <cctype>
#include <cstdio>

#include "rforge/errors.hpp"
#include "rforge/rng.hpp"

namespace rforge {

namespace {

const char* kIngredients[] = {
    "tomato", "basil",  "chicken", "rice",    "garlic", "onion",  "cheese",
    "noodles", "beef",  "pepper",  "mushroom", "carrot", "tofu",  "lemon",
    "potato", "spinach", "beans",  "corn",    "shrimp", "ginger",
};
const char* kQuantities[] = {"1 cup", "2 cups", "1/2 cup", "1 tbsp", "2 tsp", "3 oz"};
const char* kForms[] = {"soup", "stew", "salad", "curry", "bake", "pasta", "pie", "gratin"};
const char* kAdjectives[] = {"spicy", "creamy", "rustic", "quick", "hearty", "zesty"};
const char* kVerbs[] = {"simmer", "saute", "roast", "stir", "whisk", "fold"};
const char* kCuisines[] = {"Italian", "Thai", "Mexican", "Indian", "French", "American"};

template <typename T, std::size_t N>
const T& pick(const T (&arr)[N], Rng& rng) {
    return arr[rng.below(N)];
}

std::string title_case(std::string s) {
    bool start = true;
    for (char& c : s) {
        if (start && std::isalpha(static_cast<unsigned char>(c)) != 0)
            c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        start = c == ' ';
    }
    return s;
}

}  // namespace

RecipeSet make_synthetic_corpus(const SynthConfig& config) {
    if (config.count < 1) throw ArgError("make_synthetic_corpus: count must be >= 1");
    if (config.d_vis < 1) throw ArgError("make_synthetic_corpus: d_vis must be >= 1");

    constexpr std::size_t n_ing = std::size(kIngredients);
    RecipeSet set;
    set.d_vis = config.d_vis;
    Rng rng(config.seed);

    for (int i = 0; i < config.count; ++i) {
        Recipe r;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%06d", i);
        r.id = idbuf;

        const std::size_t main_idx = rng.below(n_ing);
        const std::size_t form_idx = rng.below(std::size(kForms));
        const std::string main = kIngredients[main_idx];
        const std::string form = kForms[form_idx];
        r.title = title_case(std::string(pick(kAdjectives, rng)) + " " + main + " " + form);

        const std::size_t n_extras = 2 + rng.below(3);
        std::vector<std::string> used = {main};
        r.ingredients.push_back(std::string(pick(kQuantities, rng)) + " " + main);
        while (r.ingredients.size() < n_extras + 1) {
            const std::string extra = kIngredients[rng.below(n_ing)];
            bool dup = false;
            for (const std::string& u : used) dup = dup || u == extra;
            if (dup) continue;
            used.push_back(extra);
            r.ingredients.push_back(std::string(pick(kQuantities, rng)) + " " + extra);
        }

        r.instructions.push_back("Chop the " + main + " and the " + used[1] + ".");
        r.instructions.push_back(std::string(pick(kVerbs, rng)) + " the " + used[2] +
                                 " with the " + main + " for " +
                                 std::to_string(5 + rng.below(20)) + " minutes.");
        if (rng.below(2) == 0)
            r.instructions.push_back("Bake at 350 degrees for " +
                                     std::to_string(10 + rng.below(30)) + " minutes.");
        r.instructions.push_back("Season with salt and pepper.");
        r.instructions.push_back("Serve the " + form + " warm.");

        r.cuisine = pick(kCuisines, rng);
        const int slot = i % 10;
        r.partition = slot == 0 ? Partition::test
                               : (slot == 1 ? Partition::val : Partition::train);

        if (rng.uniform01() < config.image_frac) {
            // Feature vector carries the main ingredient and the dish form,
            // so the mapping layer has real signal to align.
            std::vector<double> v(static_cast<std::size_t>(config.d_vis));
            for (double& x : v) x = 0.05 * rng.normal();
            v[main_idx % static_cast<std::size_t>(config.d_vis)] += 1.0;
            v[form_idx % static_cast<std::size_t>(config.d_vis)] += 0.5;
            r.image_features.push_back(std::move(v));
        }
        set.recipes.push_back(std::move(r));
    }
    return set;
}

}  // namespace rforge
