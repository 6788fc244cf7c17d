#include "dgn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dgn/corpus.hpp"
#include "dgn/errors.hpp"

namespace dgn {
namespace {

using corpus::Vocabulary;

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t w = x.cols();
  std::vector<long> index;
  index.reserve(rows.size() * w);
  for (std::size_t r : rows)
    for (std::size_t c = 0; c < w; ++c) index.push_back(static_cast<long>(r * w + c));
  return gather(x, index, {rows.size(), w});
}

struct Encoded {
  nn::SequenceBatch image;
  nn::SequenceBatch ingredients;
};

Encoded encode_inputs(Session& s, const ImageEncoder& image, const IngredientEncoder& ingredients,
                      std::span<const EncodedRecipe* const> batch) {
  std::vector<std::span<const Real>> images;
  std::vector<std::span<const int>> lists;
  for (const EncodedRecipe* r : batch) {
    images.emplace_back(r->image);
    lists.emplace_back(r->ingredients);
  }
  return {image.encode_batch(s, images), ingredients.encode_batch(s, lists)};
}

void check_labeled(const EncodedRecipe& r, std::size_t generators, std::size_t max_phases) {
  if (r.phases.empty()) throw DataError("recipe '" + r.id + "' has no phases");
  if (r.phases.size() > max_phases) {
    throw DataError("recipe '" + r.id + "' has more than " + std::to_string(max_phases) + " phases");
  }
  if (r.labels.size() != r.phases.size()) {
    throw DataError("recipe '" + r.id + "' is not labeled; run the phase labeler first");
  }
  for (int l : r.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= generators) {
      throw DataError("recipe '" + r.id + "' has label " + std::to_string(l) + " but only " +
                      std::to_string(generators) + " sub-generators exist");
    }
  }
}

void cap_tokens(Generation& g, std::size_t cap) {
  if (g.tokens.size() > cap) g.tokens.resize(cap);
}

}  // namespace

DgnModel::DgnModel(const ModelConfig& config, std::uint64_t seed) : RecipeModel(config) {
  config_.validate();
  Rng rng(seed);
  image_ = ImageEncoder(store_, config_, rng);
  ingredients_ = IngredientEncoder(store_, config_, rng);
  structure_ = StructurePredictor(store_, config_, rng);
  fusion_ = PhaseFusion(store_, config_, rng);
  position_ = PositionClassifier(store_, config_);
  generators_ = GeneratorEnsemble(store_, config_, rng);
  if (config_.freeze_image_encoder) store_.set_frozen("image.", true);
}

LossTerms DgnModel::losses(Session& s, std::span<const EncodedRecipe* const> batch) const {
  if (batch.empty()) throw DataError("empty batch");
  for (const EncodedRecipe* r : batch) check_labeled(*r, config_.generators, config_.max_phases);

  const Encoded enc = encode_inputs(s, image_, ingredients_, batch);
  const nn::SequenceBatch condition = build_condition(enc.image, enc.ingredients, config_.hidden);

  std::vector<std::vector<int>> structure_inputs;
  std::vector<int> structure_targets;
  for (const EncodedRecipe* r : batch) {
    std::vector<int> in{structure_.start_label()};
    in.insert(in.end(), r->labels.begin(), r->labels.end());
    structure_inputs.push_back(std::move(in));
    const auto t = structure_.targets(r->labels);
    structure_targets.insert(structure_targets.end(), t.begin(), t.end());
  }
  const auto st = structure_.forward(s, structure_inputs, condition);

  // Phases grouped by sub-generator so each generator sees a contiguous block.
  struct PhaseRef {
    int label;
    std::size_t recipe;
    std::size_t position;
  };
  std::vector<PhaseRef> phases;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t p = 0; p < batch[i]->phases.size(); ++p) {
      phases.push_back({batch[i]->labels[p], i, p});
    }
  std::stable_sort(phases.begin(), phases.end(),
                   [](const PhaseRef& a, const PhaseRef& b) { return a.label < b.label; });

  FusionInputs fin{enc.image, enc.ingredients, {}, {}, {}};
  std::vector<std::size_t> phase_rows;
  std::vector<std::vector<int>> gen_inputs;
  std::vector<int> gen_targets, routing;
  for (const PhaseRef& ph : phases) {
    phase_rows.push_back(st.segments[ph.recipe].offset + 1 + ph.position);
    fin.positions.push_back(static_cast<int>(ph.position));
    fin.recipe_of.push_back(ph.recipe);
    routing.push_back(ph.label);
    const auto& tokens = batch[ph.recipe]->phases[ph.position];
    std::vector<int> in{Vocabulary::kStart};
    in.insert(in.end(), tokens.begin(), tokens.end());
    gen_inputs.push_back(std::move(in));
    gen_targets.insert(gen_targets.end(), tokens.begin(), tokens.end());
    gen_targets.push_back(Vocabulary::kEndOfPhase);
  }
  fin.phase_vectors = select_rows(st.cross_states, phase_rows);
  const nn::SequenceBatch r = fusion_.fuse(s, fin);

  LossTerms out;
  out.pre = structure_loss(st.logits, structure_targets);
  out.pos = cross_entropy(position_.logits(s, r), fin.positions, Reduction::Sum);
  out.gen = generation_loss(generators_.logits(s, gen_inputs, routing, r), gen_targets);
  out.recipes = batch.size();
  out.tokens = gen_targets.size();
  out.phases = phases.size();
  return out;
}

Generation DgnModel::generate(const EncodedRecipe& recipe) const {
  Session s(store_, false);
  const EncodedRecipe* one[] = {&recipe};
  const Encoded enc = encode_inputs(s, image_, ingredients_, one);
  const Tensor condition = build_condition(enc.image.rows, enc.ingredients.rows, config_.hidden);
  const StructurePrediction structure = structure_.decode(s, condition);

  const std::size_t count = structure.labels.size();
  FusionInputs fin{enc.image, enc.ingredients, structure.phase_vectors, {}, {}};
  for (std::size_t p = 0; p < count; ++p) {
    fin.positions.push_back(static_cast<int>(p));
    fin.recipe_of.push_back(0);
  }
  const nn::SequenceBatch r = fusion_.fuse(s, fin);

  Generation g;
  g.structure = structure.labels;
  for (std::size_t p = 0; p < count; ++p) {
    auto tokens = generators_.decode_phase(s, structure.labels[p], r.sequence(p),
                                           config_.max_phase_tokens);
    g.tokens.insert(g.tokens.end(), tokens.begin(), tokens.end());
    g.phases.push_back(std::move(tokens));
  }
  cap_tokens(g, config_.max_recipe_tokens);
  return g;
}

BaselineModel::BaselineModel(const ModelConfig& config, std::uint64_t seed) : RecipeModel(config) {
  config_.validate();
  width_ = config_.baseline_hidden ? config_.baseline_hidden : matched_baseline_width(config_);
  ModelConfig local = config_;
  local.hidden = width_;
  Rng rng(seed);
  image_ = ImageEncoder(store_, local, rng);
  ingredients_ = IngredientEncoder(store_, local, rng);
  decoder_ = Decoder(store_, "baseline", local.vocab_size, width_, local.n_head, local.ffn_inner(),
                     local.baseline_layers, local.max_phases * local.max_phase_tokens + 1, rng);
  if (config_.freeze_image_encoder) store_.set_frozen("image.", true);
}

std::vector<int> BaselineModel::flatten(const EncodedRecipe& recipe, bool as_targets) {
  std::vector<int> seq;
  if (!as_targets) seq.push_back(Vocabulary::kStart);
  for (std::size_t p = 0; p < recipe.phases.size(); ++p) {
    seq.insert(seq.end(), recipe.phases[p].begin(), recipe.phases[p].end());
    const bool last = p + 1 == recipe.phases.size();
    if (!last || as_targets) seq.push_back(last ? Vocabulary::kEnd : Vocabulary::kEndOfPhase);
  }
  return seq;
}

LossTerms BaselineModel::losses(Session& s, std::span<const EncodedRecipe* const> batch) const {
  if (batch.empty()) throw DataError("empty batch");
  std::vector<std::vector<int>> inputs;
  std::vector<int> targets;
  std::size_t phases = 0;
  for (const EncodedRecipe* r : batch) {
    if (r->phases.empty()) throw DataError("recipe '" + r->id + "' has no phases");
    inputs.push_back(flatten(*r, false));
    const auto t = flatten(*r, true);
    targets.insert(targets.end(), t.begin(), t.end());
    phases += r->phases.size();
  }
  const Encoded enc = encode_inputs(s, image_, ingredients_, batch);
  const nn::SequenceBatch memory = build_condition(enc.image, enc.ingredients, width_);
  LossTerms out;
  out.gen = generation_loss(decoder_.logits(s, inputs, memory), targets);
  out.recipes = batch.size();
  out.tokens = targets.size();
  out.phases = phases;
  return out;
}

Generation BaselineModel::generate(const EncodedRecipe& recipe) const {
  Session s(store_, false);
  const EncodedRecipe* one[] = {&recipe};
  const Encoded enc = encode_inputs(s, image_, ingredients_, one);
  const Tensor memory = build_condition(enc.image.rows, enc.ingredients.rows, width_);
  const int stops[] = {Vocabulary::kEnd};
  // Room for the phase separators on top of the content cap.
  const std::size_t budget = config_.max_recipe_tokens + config_.max_phases;
  const std::vector<int> out = decoder_.decode_greedy(s, memory, budget, stops);

  Generation g;
  g.phases.emplace_back();
  for (int t : out) {
    if (t == Vocabulary::kEndOfPhase) {
      g.phases.emplace_back();
      continue;
    }
    g.phases.back().push_back(t);
    g.tokens.push_back(t);
  }
  if (g.phases.back().empty() && g.phases.size() > 1) g.phases.pop_back();
  cap_tokens(g, config_.max_recipe_tokens);
  return g;
}

std::unique_ptr<RecipeModel> make_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.kind == ModelKind::Baseline) return std::make_unique<BaselineModel>(config, seed);
  return std::make_unique<DgnModel>(config, seed);
}

std::size_t parameter_count(const ModelConfig& config) {
  return make_model(config, 0)->store().total_values();
}

std::size_t matched_baseline_width(const ModelConfig& config) {
  ModelConfig dgn = config;
  dgn.kind = ModelKind::Dgn;
  const double target = static_cast<double>(parameter_count(dgn));
  ModelConfig base = config;
  base.kind = ModelKind::Baseline;
  std::size_t best = config.n_head;
  double best_gap = std::numeric_limits<double>::infinity();
  // Parameter count grows monotonically with width, so stop once past the target.
  for (std::size_t w = config.n_head;; w += config.n_head) {
    base.baseline_hidden = w;
    const double count = static_cast<double>(parameter_count(base));
    const double gap = std::abs(count - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = w;
    }
    if (count > target) break;
  }
  return best;
}

}  // namespace dgn
