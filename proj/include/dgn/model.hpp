#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dgn/encoders.hpp"
#include "dgn/generator.hpp"
#include "dgn/model_config.hpp"
#include "dgn/structure.hpp"

namespace dgn {

/// Per-batch loss sums. Terms a model does not have stay undefined.
struct LossTerms {
  Tensor pre;  // structure prediction
  Tensor gen;  // token generation
  Tensor pos;  // phase-slot classification
  std::size_t recipes = 0;
  std::size_t tokens = 0;  // positions scored by `gen`
  std::size_t phases = 0;
};

struct Generation {
  std::vector<int> structure;            // empty for the baseline
  std::vector<std::vector<int>> phases;  // generated tokens per phase
  std::vector<int> tokens;               // concatenation, capped at max_recipe_tokens
};

/// Common surface of the decomposed model and the single-decoder baseline.
class RecipeModel {
 public:
  virtual ~RecipeModel() = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  /// Teacher-forced losses over a batch of labeled recipes.
  virtual LossTerms losses(Session& s, std::span<const EncodedRecipe* const> batch) const = 0;
  /// Greedy two-stage inference (or plain greedy decoding for the baseline).
  virtual Generation generate(const EncodedRecipe& recipe) const = 0;

 protected:
  explicit RecipeModel(const ModelConfig& config) : config_(config) {}

  ModelConfig config_;
  ParameterStore store_;
};

class DgnModel final : public RecipeModel {
 public:
  DgnModel(const ModelConfig& config, std::uint64_t seed);

  LossTerms losses(Session& s, std::span<const EncodedRecipe* const> batch) const override;
  Generation generate(const EncodedRecipe& recipe) const override;

  const ImageEncoder& image_encoder() const { return image_; }
  const IngredientEncoder& ingredient_encoder() const { return ingredients_; }
  const StructurePredictor& structure() const { return structure_; }
  const PhaseFusion& fusion() const { return fusion_; }
  const PositionClassifier& position_classifier() const { return position_; }
  const GeneratorEnsemble& generators() const { return generators_; }

 private:
  ImageEncoder image_;
  IngredientEncoder ingredients_;
  StructurePredictor structure_;
  PhaseFusion fusion_;
  PositionClassifier position_;
  GeneratorEnsemble generators_;
};

/// One decoder over the whole recipe: phases joined by [EOPHASE] and closed
/// by [END], cross-attending to the image and ingredient rows.
class BaselineModel final : public RecipeModel {
 public:
  BaselineModel(const ModelConfig& config, std::uint64_t seed);

  LossTerms losses(Session& s, std::span<const EncodedRecipe* const> batch) const override;
  Generation generate(const EncodedRecipe& recipe) const override;

  std::size_t width() const { return width_; }
  /// Decoder input [START, p_1, EOP, p_2, ...] and targets [p_1, EOP, ..., END].
  static std::vector<int> flatten(const EncodedRecipe& recipe, bool as_targets);

 private:
  std::size_t width_ = 0;
  ImageEncoder image_;
  IngredientEncoder ingredients_;
  Decoder decoder_;
};

/// Builds the model named by `config.kind`. Validates the config first.
std::unique_ptr<RecipeModel> make_model(const ModelConfig& config, std::uint64_t seed);

/// Number of trainable values a model with this config would hold.
std::size_t parameter_count(const ModelConfig& config);

/// Baseline width (a multiple of n_head) whose parameter count is closest to
/// that of the decomposed model described by `config`.
std::size_t matched_baseline_width(const ModelConfig& config);

}  // namespace dgn
