#pragma once

#include <cstdint>

#include "rforge/corpus.hpp"

namespace rforge {

// Deterministic templated-recipe generator over a fixed ingredient/verb
// inventory. Stands in for a real recipe corpus in tests and the demo
// pipeline; the same seed always yields the same set.
struct SynthConfig {
    int count = 500;
    int d_vis = 8;
    double image_frac = 0.8;  // fraction of recipes that carry image features
    std::uint64_t seed = 1;
};

RecipeSet make_synthetic_corpus(const SynthConfig& config);

}  // namespace rforge
