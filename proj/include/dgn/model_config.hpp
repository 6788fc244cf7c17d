#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace dgn {

enum class Fusion { Cat, Attn };
enum class ModelKind { Dgn, Baseline };

std::string_view to_string(Fusion f);
std::string_view to_string(ModelKind k);
Fusion parse_fusion(std::string_view text);
ModelKind parse_model_kind(std::string_view text);

/// Architecture hyperparameters shared by the DGN and the baseline decoder.
struct ModelConfig {
  ModelKind kind = ModelKind::Dgn;
  std::size_t hidden = 64;
  std::size_t n_head = 4;
  std::size_t structure_layers = 2;
  std::size_t shared_layers = 2;
  std::size_t independent_layers = 1;
  // Number of sub-generators N.
  std::size_t generators = 3;
  std::size_t max_phases = 3;
  Fusion fusion = Fusion::Attn;
  // Feed-forward inner width is ffn_multiplier * hidden.
  std::size_t ffn_multiplier = 4;
  // Dropout on every block's sublayer outputs, active only while training.
  double dropout = 0.1;

  std::size_t vocab_size = 0;
  // Raw image feature length, or grid side length when grid_images is set.
  std::size_t image_dim = 32;
  bool grid_images = false;
  std::size_t grid_side = 6;
  std::size_t conv_channels = 8;
  bool freeze_image_encoder = false;
  std::size_t max_ingredient_tokens = 30;

  // Baseline decoder depth and width; width is chosen to match the DGN
  // parameter count when baseline_hidden is 0.
  std::size_t baseline_layers = 3;
  std::size_t baseline_hidden = 0;

  std::size_t max_phase_tokens = 60;
  std::size_t max_recipe_tokens = 150;

  std::size_t ffn_inner() const { return ffn_multiplier * hidden; }
  /// Throws DataError on inconsistent settings.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
  bool operator==(const ModelConfig&) const = default;
};

}  // namespace dgn
