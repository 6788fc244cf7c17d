#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dgn/corpus.hpp"
#include "dgn/model_config.hpp"
#include "dgn/nn.hpp"

namespace dgn {

/// A recipe converted to ids once, ready for batching.
struct EncodedRecipe {
  std::string id;
  std::vector<Real> image;  // raw vector, or the grid flattened row-major
  std::vector<int> ingredients;
  std::vector<std::vector<int>> phases;  // step tokens of each phase, no special tokens
  std::vector<int> labels;               // pseudo labels; empty when unlabeled
  std::vector<int> planted;
};

/// Tokenizes ingredients (capped, with a warning) and phase steps, and
/// checks the image against the configured input form.
EncodedRecipe encode_recipe(const corpus::RecipeRecord& record, const corpus::Vocabulary& vocab,
                            const ModelConfig& config);
std::vector<EncodedRecipe> encode_corpus(const corpus::Corpus& corpus,
                                         const corpus::Vocabulary& vocab,
                                         const ModelConfig& config);

/// Keeps the first `cap` ids and logs a warning when something is dropped.
void truncate_tokens(std::vector<int>& ids, std::size_t cap, const std::string& what);

/// Image features: one row for raw vectors, four quadrant rows for grids.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng);

  std::size_t rows_per_image() const { return grid_ ? 4 : 1; }
  std::size_t input_size() const { return grid_ ? side_ * side_ : raw_dim_; }
  Tensor encode(Session& s, std::span<const Real> image) const;
  /// Images stacked in order; image i covers rows [i·rows, (i+1)·rows).
  nn::SequenceBatch encode_batch(Session& s, std::span<const std::span<const Real>> images) const;

 private:
  Tensor conv(const Tensor& x, std::size_t images, std::size_t in_channels,
              const Parameter& kernel, Session& s) const;

  bool grid_ = false;
  std::size_t raw_dim_ = 0;
  std::size_t side_ = 0;
  std::size_t channels_ = 0;
  const Parameter* conv1_ = nullptr;
  const Parameter* conv2_ = nullptr;
  nn::Linear out_;
};

/// Ingredient token rows: embedding lookup followed by a linear map.
class IngredientEncoder {
 public:
  IngredientEncoder() = default;
  IngredientEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng);

  /// Empty lists encode as a single [UNK] row so the memory is never empty.
  Tensor encode(Session& s, std::span<const int> ids) const;
  nn::SequenceBatch encode_batch(Session& s, std::span<const std::span<const int>> lists) const;
  /// Mean over token rows.
  static Tensor pooled(const Tensor& rows);

 private:
  const Parameter* embed_ = nullptr;
  nn::Linear proj_;
};

}  // namespace dgn
