#include "dgn/generator.hpp"

#include <algorithm>
#include <cmath>

#include "dgn/corpus.hpp"
#include "dgn/errors.hpp"

namespace dgn {
namespace {

nn::SequenceBatch sub_batch(const nn::SequenceBatch& b, std::size_t first, std::size_t last) {
  const std::size_t begin = b.segments[first].offset;
  const std::size_t end = b.segments[last - 1].offset + b.segments[last - 1].length;
  nn::SequenceBatch out;
  out.rows = (begin == 0 && end == b.rows.rows()) ? b.rows : slice_rows(b.rows, begin, end);
  for (std::size_t i = first; i < last; ++i) {
    out.segments.push_back({b.segments[i].offset - begin, b.segments[i].length});
  }
  return out;
}

int argmax_last_row(const Tensor& logits) {
  const std::size_t v = logits.cols();
  const Real* row = logits.data().data() + (logits.rows() - 1) * v;
  return static_cast<int>(std::max_element(row, row + v) - row);
}

}  // namespace

PhaseFusion::PhaseFusion(ParameterStore& store, const ModelConfig& config, Rng& rng)
    : mode_(config.fusion), width_(config.hidden) {
  const std::size_t h = width_;
  parts_.pos = nn::Linear(store, "fusion.pos", kPositionSlots, h, rng);
  if (mode_ == Fusion::Cat) {
    parts_.image = nn::Linear(store, "fusion.cat.image", h, h, rng);
    parts_.ingredients = nn::Linear(store, "fusion.cat.ingredients", h, h, rng);
    parts_.position = nn::Linear(store, "fusion.cat.position", h, h, rng);
    parts_.phase = nn::Linear(store, "fusion.cat.phase", h, h, rng);
  } else {
    parts_.query_image = nn::Linear(store, "fusion.attn.w1", 2 * h, h, rng);
    parts_.query_ingredients = nn::Linear(store, "fusion.attn.w2", 2 * h, h, rng);
    parts_.attended_image = nn::Linear(store, "fusion.attn.image", h, h, rng);
    parts_.attended_ingredients = nn::Linear(store, "fusion.attn.ingredients", h, h, rng);
  }
}

Tensor PhaseFusion::position_features(Session& s, std::span<const int> positions) const {
  std::vector<Real> onehot(positions.size() * kPositionSlots, Real(0));
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0 || positions[i] >= static_cast<int>(kPositionSlots)) {
      throw DataError("phase position " + std::to_string(positions[i]) + " outside [0, 3)");
    }
    onehot[i * kPositionSlots + static_cast<std::size_t>(positions[i])] = 1;
  }
  return parts_.pos(s, Tensor::from({positions.size(), kPositionSlots}, std::move(onehot)));
}

Tensor PhaseFusion::expand(const nn::SequenceBatch& batch, std::span<const std::size_t> recipe_of,
                           std::vector<Segment>& segments) const {
  std::vector<long> index;
  segments.clear();
  std::size_t rows = 0;
  for (std::size_t r : recipe_of) {
    if (r >= batch.count()) throw DataError("phase refers to a missing recipe");
    const Segment seg = batch.segments[r];
    if (seg.length == 0) throw ShapeError("fusion needs a non-empty feature sequence");
    segments.push_back({rows, seg.length});
    for (std::size_t i = 0; i < seg.length; ++i)
      for (std::size_t c = 0; c < width_; ++c) {
        index.push_back(static_cast<long>((seg.offset + i) * width_ + c));
      }
    rows += seg.length;
  }
  return gather(batch.rows, index, {rows, width_});
}

Tensor PhaseFusion::attend(Session&, const Tensor& query, const nn::SequenceBatch& rows,
                           std::span<const std::size_t> recipe_of, Tensor* weights) const {
  std::vector<Segment> key_segments;
  Tensor keys = expand(rows, recipe_of, key_segments);
  if (weights) {
    *weights = nn::attention_with_weights(slice_rows(query, 0, 1),
                                          slice_rows(keys, 0, key_segments[0].length),
                                          slice_rows(keys, 0, key_segments[0].length))
                   .weights;
  }
  std::vector<Segment> query_segments;
  for (std::size_t p = 0; p < recipe_of.size(); ++p) query_segments.push_back({p, 1});
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(width_));
  return segment_attention(query, keys, keys, query_segments, key_segments, 1, false, scale);
}

nn::SequenceBatch PhaseFusion::fuse(Session& s, const FusionInputs& in) const {
  const std::size_t phases = in.positions.size();
  if (phases == 0) throw DataError("fusion needs at least one phase");
  if (in.recipe_of.size() != phases) throw DataError("fusion inputs disagree on the phase count");
  if (!in.phase_vectors.defined() || in.phase_vectors.rows() != phases ||
      in.phase_vectors.cols() != width_) {
    throw ShapeError("fusion needs one phase vector of width " + std::to_string(width_) +
                     " per phase");
  }
  if (!in.image.rows.defined() || !in.ingredients.rows.defined()) {
    throw ShapeError("fusion needs image and ingredient features");
  }
  const Tensor f_pos = position_features(s, in.positions);
  nn::SequenceBatch r;
  if (mode_ == Fusion::Cat) {
    std::vector<Segment> unused;
    const Tensor img = segment_mean(in.image.rows, in.image.segments);
    const Tensor ingr = segment_mean(in.ingredients.rows, in.ingredients.segments);
    const Tensor img_p = expand(nn::SequenceBatch{img, nn::make_segments(std::vector<std::size_t>(img.rows(), 1))},
                                in.recipe_of, unused);
    const Tensor ingr_p = expand(nn::SequenceBatch{ingr, nn::make_segments(std::vector<std::size_t>(ingr.rows(), 1))},
                                 in.recipe_of, unused);
    Tensor rows = concat({parts_.image(s, img_p), parts_.ingredients(s, ingr_p),
                          parts_.position(s, f_pos), parts_.phase(s, in.phase_vectors)},
                         1);
    r.rows = reshape(rows, {4 * phases, width_});
  } else {
    const Tensor query = concat({f_pos, in.phase_vectors}, 1);
    const Tensor img = attend(s, parts_.query_image(s, query), in.image, in.recipe_of, nullptr);
    const Tensor ingr =
        attend(s, parts_.query_ingredients(s, query), in.ingredients, in.recipe_of, nullptr);
    Tensor rows =
        concat({parts_.attended_image(s, img), parts_.attended_ingredients(s, ingr)}, 1);
    r.rows = reshape(rows, {2 * phases, width_});
  }
  const std::size_t k = rows_per_phase();
  for (std::size_t p = 0; p < phases; ++p) r.segments.push_back({p * k, k});
  return r;
}

Tensor PhaseFusion::attention_weights(Session& s, const FusionInputs& in, int which) const {
  if (mode_ != Fusion::Attn) throw DataError("attention weights exist only in attn fusion");
  const Tensor query = concat({position_features(s, in.positions), in.phase_vectors}, 1);
  Tensor weights;
  if (which == 0) {
    attend(s, parts_.query_image(s, query), in.image, in.recipe_of, &weights);
  } else {
    attend(s, parts_.query_ingredients(s, query), in.ingredients, in.recipe_of, &weights);
  }
  return weights;
}

PositionClassifier::PositionClassifier(ParameterStore& store, const ModelConfig& config) {
  // Zero weights start every phase at uniform slot probabilities.
  out_.weight = &store.zeros("poscls.weight", {config.hidden, kPositionSlots});
  out_.bias = &store.zeros("poscls.bias", {kPositionSlots});
}

Tensor PositionClassifier::logits(Session& s, const nn::SequenceBatch& r) const {
  return out_(s, segment_mean(r.rows, r.segments));
}

Decoder::Decoder(ParameterStore& store, const std::string& name, std::size_t vocab,
                 std::size_t width, std::size_t n_head, std::size_t ffn_inner, std::size_t layers,
                 std::size_t max_len, Rng& rng) {
  const Real sd = Real(1) / std::sqrt(static_cast<Real>(width));
  token_embed_ = &store.normal(name + ".token_embed", {vocab, width}, sd, rng);
  pos_embed_ = &store.normal(name + ".pos_embed", {max_len, width}, sd, rng);
  for (std::size_t i = 0; i < layers; ++i) {
    owned_.push_back(std::make_unique<nn::TransformerBlock>(
        store, name + ".block" + std::to_string(i), width, n_head, ffn_inner, rng));
    blocks_.push_back(owned_.back().get());
  }
  output_ = nn::Linear(store, name + ".out", width, vocab, rng);
}

Decoder::Decoder(const Parameter* token_embed, const Parameter* pos_embed,
                 std::vector<const nn::TransformerBlock*> blocks, nn::Linear output)
    : token_embed_(token_embed), pos_embed_(pos_embed), blocks_(std::move(blocks)), output_(output) {}

std::size_t Decoder::max_len() const { return pos_embed_->shape[0]; }

nn::SequenceBatch Decoder::embed(Session& s, const std::vector<std::vector<int>>& inputs) const {
  std::vector<int> ids, positions;
  std::vector<std::size_t> lengths;
  for (const auto& seq : inputs) {
    if (seq.empty() || seq.size() > max_len()) {
      throw DataError("decoder input length " + std::to_string(seq.size()) + " outside [1, " +
                      std::to_string(max_len()) + "]");
    }
    for (std::size_t t = 0; t < seq.size(); ++t) {
      ids.push_back(seq[t]);
      positions.push_back(static_cast<int>(t));
    }
    lengths.push_back(seq.size());
  }
  return {add(embedding(s(*token_embed_), ids), embedding(s(*pos_embed_), positions)),
          nn::make_segments(lengths)};
}

Tensor Decoder::logits(Session& s, const std::vector<std::vector<int>>& inputs,
                       const nn::SequenceBatch& memory) const {
  nn::SequenceBatch x = nn::run_blocks(s, blocks_, embed(s, inputs), memory, true);
  return output_(s, x.rows);
}

std::vector<int> Decoder::decode_greedy(Session& s, const Tensor& memory, std::size_t max_tokens,
                                        std::span<const int> stops) const {
  std::vector<int> seq{corpus::Vocabulary::kStart};
  const auto mem = nn::SequenceBatch::single(memory);
  while (seq.size() - 1 < max_tokens && seq.size() <= max_len()) {
    const int next = argmax_last_row(logits(s, {seq}, mem));
    if (std::find(stops.begin(), stops.end(), next) != stops.end()) break;
    seq.push_back(next);
  }
  return {seq.begin() + 1, seq.end()};
}

GeneratorEnsemble::GeneratorEnsemble(ParameterStore& store, const ModelConfig& config, Rng& rng)
    : width_(config.hidden), max_len_(config.max_phase_tokens) {
  const Real sd = Real(1) / std::sqrt(static_cast<Real>(width_));
  token_embed_ = &store.normal("gen.token_embed", {config.vocab_size, width_}, sd, rng);
  pos_embed_ = &store.normal("gen.pos_embed", {max_len_, width_}, sd, rng);
  for (std::size_t i = 0; i < config.shared_layers; ++i) {
    shared_.push_back(std::make_unique<nn::TransformerBlock>(
        store, "gen.shared" + std::to_string(i), width_, config.n_head, config.ffn_inner(), rng));
  }
  independent_.resize(config.generators);
  for (std::size_t g = 0; g < config.generators; ++g) {
    for (std::size_t i = 0; i < config.independent_layers; ++i) {
      independent_[g].push_back(std::make_unique<nn::TransformerBlock>(
          store, "gen.g" + std::to_string(g) + ".block" + std::to_string(i), width_,
          config.n_head, config.ffn_inner(), rng));
    }
  }
  output_ = nn::Linear(store, "gen.out", width_, config.vocab_size, rng);
}

void GeneratorEnsemble::check_generator(int g) const {
  if (g < 0 || static_cast<std::size_t>(g) >= independent_.size()) {
    throw DataError("sub-generator " + std::to_string(g) + " outside [0, " +
                    std::to_string(independent_.size()) + ")");
  }
}

Decoder GeneratorEnsemble::path(int generator) const {
  check_generator(generator);
  std::vector<const nn::TransformerBlock*> blocks;
  for (const auto& b : shared_) blocks.push_back(b.get());
  for (const auto& b : independent_[static_cast<std::size_t>(generator)]) blocks.push_back(b.get());
  return Decoder(token_embed_, pos_embed_, std::move(blocks), output_);
}

Tensor GeneratorEnsemble::logits(Session& s, const std::vector<std::vector<int>>& inputs,
                                 std::span<const int> generator_of,
                                 const nn::SequenceBatch& memory) const {
  if (generator_of.size() != inputs.size() || memory.count() != inputs.size()) {
    throw ShapeError("generator batch: inputs, routing and memory disagree in count");
  }
  for (std::size_t i = 0; i < generator_of.size(); ++i) {
    check_generator(generator_of[i]);
    if (i > 0 && generator_of[i] < generator_of[i - 1]) {
      throw DataError("generator batch must be grouped by sub-generator");
    }
  }
  const Decoder trunk(token_embed_, pos_embed_, {}, output_);
  nn::SequenceBatch x = trunk.embed(s, inputs);
  for (const auto& b : shared_) x = b->forward(s, x, memory, true);

  std::vector<Tensor> groups;
  for (std::size_t first = 0; first < inputs.size();) {
    std::size_t last = first;
    while (last < inputs.size() && generator_of[last] == generator_of[first]) ++last;
    nn::SequenceBatch part = sub_batch(x, first, last);
    const nn::SequenceBatch mem = sub_batch(memory, first, last);
    for (const auto& b : independent_[static_cast<std::size_t>(generator_of[first])]) {
      part = b->forward(s, part, mem, true);
    }
    groups.push_back(part.rows);
    first = last;
  }
  const Tensor rows = groups.size() == 1 ? groups[0] : concat(groups, 0);
  return output_(s, rows);
}

std::vector<int> GeneratorEnsemble::decode_phase(Session& s, int generator, const Tensor& memory,
                                                 std::size_t max_tokens) const {
  const int stops[] = {corpus::Vocabulary::kEndOfPhase, corpus::Vocabulary::kEnd};
  return path(generator).decode_greedy(s, memory, max_tokens, stops);
}

Tensor generation_loss(const Tensor& logits, std::span<const int> targets) {
  return cross_entropy(logits, targets, Reduction::Sum);
}

}  // namespace dgn
