#include "dgn/structure.hpp"

#include <algorithm>
#include <cmath>

#include "dgn/errors.hpp"

namespace dgn {

Tensor build_condition(const Tensor& image, const Tensor& ingredients, std::size_t width) {
  if (image.cols() != width || ingredients.cols() != width) {
    throw ShapeError("condition parts must have width " + std::to_string(width) + ", got " +
                     shape_string(image.shape()) + " and " + shape_string(ingredients.shape()));
  }
  return concat({image, ingredients}, 0);
}

nn::SequenceBatch build_condition(const nn::SequenceBatch& image,
                                  const nn::SequenceBatch& ingredients, std::size_t width) {
  if (image.count() != ingredients.count()) {
    throw ShapeError("condition parts hold different recipe counts");
  }
  if (image.rows.cols() != width || ingredients.rows.cols() != width) {
    throw ShapeError("condition parts must have width " + std::to_string(width));
  }
  std::vector<Tensor> parts;
  std::vector<std::size_t> lengths;
  for (std::size_t i = 0; i < image.count(); ++i) {
    parts.push_back(image.sequence(i));
    parts.push_back(ingredients.sequence(i));
    lengths.push_back(image.segments[i].length + ingredients.segments[i].length);
  }
  return {concat(parts, 0), nn::make_segments(lengths)};
}

StructurePredictor::StructurePredictor(ParameterStore& store, const ModelConfig& config, Rng& rng)
    : n_(config.generators), max_phases_(config.max_phases), width_(config.hidden) {
  const Real sd = Real(1) / std::sqrt(static_cast<Real>(width_));
  label_embed_ = &store.normal("structure.label_embed", {n_ + 3, width_}, sd, rng);
  pos_embed_ = &store.normal("structure.pos_embed", {max_phases_ + 1, width_}, sd, rng);
  for (std::size_t i = 0; i < config.structure_layers; ++i) {
    blocks_.push_back(std::make_unique<nn::TransformerBlock>(
        store, "structure.block" + std::to_string(i), width_, config.n_head, config.ffn_inner(), rng));
  }
  out_ = nn::Linear(store, "structure.out", width_, n_ + 1, rng);
}

Tensor StructurePredictor::embed(Session& s, const std::vector<std::vector<int>>& inputs) const {
  std::vector<int> labels, positions;
  for (const auto& seq : inputs) {
    if (seq.empty() || seq.size() > max_phases_ + 1) {
      throw DataError("structure input must hold 1.." + std::to_string(max_phases_ + 1) + " labels");
    }
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (seq[t] < 0 || seq[t] > pad_label()) {
        throw DataError("structure label " + std::to_string(seq[t]) + " out of range");
      }
      labels.push_back(seq[t]);
      positions.push_back(static_cast<int>(t));
    }
  }
  return add(embedding(s(*label_embed_), labels), embedding(s(*pos_embed_), positions));
}

StructurePredictor::Output StructurePredictor::forward(
    Session& s, const std::vector<std::vector<int>>& inputs,
    const nn::SequenceBatch& condition) const {
  if (condition.count() != inputs.size()) {
    throw ShapeError("structure predictor got " + std::to_string(inputs.size()) +
                     " sequences but " + std::to_string(condition.count()) + " conditions");
  }
  std::vector<std::size_t> lengths;
  for (const auto& seq : inputs) lengths.push_back(seq.size());
  nn::SequenceBatch x{embed(s, inputs), nn::make_segments(lengths)};
  Tensor cross;
  for (const auto& block : blocks_) {
    auto trace = block->forward_traced(s, x, condition, true);
    x = std::move(trace.out);
    cross = std::move(trace.cross_state);
  }
  return {out_(s, cross), cross, x.segments};
}

StructurePrediction StructurePredictor::forward_teacher_forced(Session& s,
                                                               std::span<const int> inputs,
                                                               const Tensor& condition) const {
  if (inputs.empty() || inputs[0] != start_label()) {
    throw DataError("structure input must begin with [START]");
  }
  std::vector<std::vector<int>> one{std::vector<int>(inputs.begin(), inputs.end())};
  Output out = forward(s, one, nn::SequenceBatch::single(condition));
  StructurePrediction p;
  p.probabilities = softmax(out.logits, 1);
  const std::size_t rows = inputs.size();
  if (rows > 1) p.phase_vectors = slice_rows(out.cross_states, 1, rows);
  p.labels.assign(inputs.begin() + 1, inputs.end());
  return p;
}

std::vector<int> StructurePredictor::targets(std::span<const int> gold) const {
  std::vector<int> t(gold.begin(), gold.end());
  t.push_back(gold.size() < max_phases_ ? end_label() : kIgnoreIndex);
  return t;
}

StructurePrediction StructurePredictor::decode(Session& s, const Tensor& condition) const {
  std::vector<int> seq{start_label()};
  std::vector<std::vector<Real>> prob_rows;
  Output out;
  const auto cond = nn::SequenceBatch::single(condition);
  while (true) {
    out = forward(s, {seq}, cond);
    const Tensor probs = softmax(slice_rows(out.logits, seq.size() - 1, seq.size()), 1);
    std::vector<Real> row = probs.to_vector();
    prob_rows.push_back(row);
    if (seq.size() - 1 == max_phases_) break;
    int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == end_label()) {
      if (seq.size() > 1) break;
      // [END] before any phase: take the best real label instead.
      row[static_cast<std::size_t>(best)] = -1;
      best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    seq.push_back(best);
  }
  StructurePrediction p;
  p.labels.assign(seq.begin() + 1, seq.end());
  // The last forward pass already saw every chosen label.
  p.phase_vectors = slice_rows(out.cross_states, 1, seq.size());
  std::vector<Real> flat;
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    flat.insert(flat.end(), prob_rows[i].begin(), prob_rows[i].end());
  }
  p.probabilities = Tensor::from({p.labels.size(), classes()}, std::move(flat));
  return p;
}

Tensor structure_loss(const Tensor& logits, std::span<const int> targets) {
  return cross_entropy(logits, targets, Reduction::Sum);
}

}  // namespace dgn
