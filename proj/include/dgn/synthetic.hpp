#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dgn/corpus.hpp"

namespace dgn::synthetic {

inline constexpr std::size_t kMaxPhaseTypes = 3;

struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t recipes = 2000;
  std::size_t phase_types = 3;
  std::size_t image_dim = 32;
  bool grid_images = false;
  double noise = 0.1;
  std::size_t min_steps = 2;
  std::size_t max_steps = 7;
  std::size_t min_ingredients = 3;
  std::size_t max_ingredients = 6;
  double dominant_probability = 0.7;
  // Chance that a step names a second ingredient.
  double second_ingredient_probability = 0.3;
};

/// Five verbs per phase type: PREP, COOK, FINISH.
std::span<const std::string_view> phase_verbs(std::size_t type);
std::span<const std::string_view> phase_complements(std::size_t type);
std::span<const std::string_view> ingredient_lexicon();
std::string_view phase_type_name(std::size_t type);

struct PhaseTemplate {
  std::vector<int> types;  // one type per phase slot
  double probability = 0;
};

/// The dominant template cycles through the types in order; the remaining
/// probability mass is split evenly over the other orderings of its slots.
std::vector<PhaseTemplate> phase_templates(const SyntheticConfig& config);

corpus::Corpus generate(const SyntheticConfig& config);

/// Key/value lines describing a generated corpus.
std::string manifest(const SyntheticConfig& config, const corpus::Corpus& corpus);

}  // namespace dgn::synthetic
