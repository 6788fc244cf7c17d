#include "dgn/model_config.hpp"

#include <nlohmann/json.hpp>

#include "dgn/errors.hpp"

namespace dgn {

std::string_view to_string(Fusion f) { return f == Fusion::Cat ? "cat" : "attn"; }

std::string_view to_string(ModelKind k) { return k == ModelKind::Dgn ? "dgn" : "baseline"; }

Fusion parse_fusion(std::string_view text) {
  if (text == "cat") return Fusion::Cat;
  if (text == "attn") return Fusion::Attn;
  throw DataError("unknown fusion mode '" + std::string(text) + "' (expected cat or attn)");
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "dgn") return ModelKind::Dgn;
  if (text == "baseline") return ModelKind::Baseline;
  throw DataError("unknown model kind '" + std::string(text) + "' (expected dgn or baseline)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw DataError("invalid model config: " + what);
  };
  require(hidden > 0 && n_head > 0 && hidden % n_head == 0, "hidden must be a multiple of n_head");
  require(generators >= 1, "generators must be at least 1");
  require(max_phases >= 1 && max_phases <= 3, "max_phases must be in [1, 3]");
  require(shared_layers + independent_layers >= 1, "generator needs at least one block");
  require(structure_layers >= 1, "structure predictor needs at least one block");
  require(ffn_multiplier >= 1, "ffn_multiplier must be positive");
  require(dropout >= 0 && dropout < 1, "dropout must be in [0, 1)");
  require(vocab_size > 5, "vocab_size must exceed the reserved tokens");
  require(image_dim > 0, "image_dim must be positive");
  require(!grid_images || (grid_side >= 2 && conv_channels > 0), "grid encoder needs side >= 2");
  require(max_ingredient_tokens > 0, "max_ingredient_tokens must be positive");
  require(baseline_layers >= 1, "baseline needs at least one block");
  require(baseline_hidden == 0 || baseline_hidden % n_head == 0,
          "baseline_hidden must be a multiple of n_head");
  require(max_phase_tokens > 0 && max_recipe_tokens > 0, "token caps must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = to_string(kind);
  j["hidden"] = hidden;
  j["n_head"] = n_head;
  j["structure_layers"] = structure_layers;
  j["shared_layers"] = shared_layers;
  j["independent_layers"] = independent_layers;
  j["generators"] = generators;
  j["max_phases"] = max_phases;
  j["fusion"] = to_string(fusion);
  j["ffn_multiplier"] = ffn_multiplier;
  j["dropout"] = dropout;
  j["vocab_size"] = vocab_size;
  j["image_dim"] = image_dim;
  j["grid_images"] = grid_images;
  j["grid_side"] = grid_side;
  j["conv_channels"] = conv_channels;
  j["freeze_image_encoder"] = freeze_image_encoder;
  j["max_ingredient_tokens"] = max_ingredient_tokens;
  j["baseline_layers"] = baseline_layers;
  j["baseline_hidden"] = baseline_hidden;
  j["max_phase_tokens"] = max_phase_tokens;
  j["max_recipe_tokens"] = max_recipe_tokens;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.hidden = j.at("hidden");
    c.n_head = j.at("n_head");
    c.structure_layers = j.at("structure_layers");
    c.shared_layers = j.at("shared_layers");
    c.independent_layers = j.at("independent_layers");
    c.generators = j.at("generators");
    c.max_phases = j.at("max_phases");
    c.fusion = parse_fusion(j.at("fusion").get<std::string>());
    c.ffn_multiplier = j.at("ffn_multiplier");
    c.dropout = j.value("dropout", 0.1);
    c.vocab_size = j.at("vocab_size");
    c.image_dim = j.at("image_dim");
    c.grid_images = j.at("grid_images");
    c.grid_side = j.at("grid_side");
    c.conv_channels = j.at("conv_channels");
    c.freeze_image_encoder = j.at("freeze_image_encoder");
    c.max_ingredient_tokens = j.at("max_ingredient_tokens");
    c.baseline_layers = j.at("baseline_layers");
    c.baseline_hidden = j.at("baseline_hidden");
    c.max_phase_tokens = j.at("max_phase_tokens");
    c.max_recipe_tokens = j.at("max_recipe_tokens");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

}  // namespace dgn
