#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "dgn/model_config.hpp"
#include "dgn/nn.hpp"

namespace dgn {

inline constexpr std::size_t kPositionSlots = 3;

/// Inputs for fusing one or more phases. Recipe-level features are stacked
/// per recipe; phase p belongs to recipe recipe_of[p].
struct FusionInputs {
  nn::SequenceBatch image;        // F_img rows per recipe
  nn::SequenceBatch ingredients;  // F_ingr rows per recipe
  Tensor phase_vectors;           // F_phase, [P x H]
  std::vector<int> positions;     // phase slot per phase, in [0, 3)
  std::vector<std::size_t> recipe_of;
};

/// Phase-aware feature r, handed to the sub-generators as a short memory.
///
/// cat:  rows W_img·F̄_img, W_ingr·F̄_ingr, W_pos·F_pos, W_phase·F_phase (each
///       plus its bias). Their sum is the projection of the concatenation
///       [F̄_img, F̄_ingr, F_pos, F_phase] of width 4H.
/// attn: rows W_a·F_img^attn and W_b·F_ingr^attn, where the image and
///       ingredient rows are weighted by softmax scores against a query built
///       from [F_pos, F_phase] by W_1 (image) or W_2 (ingredients).
class PhaseFusion {
 public:
  PhaseFusion() = default;
  PhaseFusion(ParameterStore& store, const ModelConfig& config, Rng& rng);

  Fusion mode() const { return mode_; }
  std::size_t rows_per_phase() const { return mode_ == Fusion::Cat ? 4 : 2; }

  /// One memory segment per phase, in the order of `in.positions`.
  nn::SequenceBatch fuse(Session& s, const FusionInputs& in) const;
  /// F_pos = linear(one-hot(position)), [P x H].
  Tensor position_features(Session& s, std::span<const int> positions) const;
  /// Softmax weights over the image (which = 0) or ingredient (which = 1)
  /// rows of a single-phase input; attn mode only.
  Tensor attention_weights(Session& s, const FusionInputs& in, int which) const;

  struct Parts {
    nn::Linear pos;
    nn::Linear image, ingredients, position, phase;  // cat
    nn::Linear query_image, query_ingredients;       // attn
    nn::Linear attended_image, attended_ingredients;  // attn
  };
  const Parts& parts() const { return parts_; }

 private:
  Tensor expand(const nn::SequenceBatch& batch, std::span<const std::size_t> recipe_of,
                std::vector<Segment>& segments) const;
  Tensor attend(Session& s, const Tensor& query, const nn::SequenceBatch& rows,
                std::span<const std::size_t> recipe_of, Tensor* weights) const;

  Fusion mode_ = Fusion::Attn;
  std::size_t width_ = 0;
  Parts parts_;
};

/// Three-way phase-slot classifier on the mean of each phase's r rows.
class PositionClassifier {
 public:
  PositionClassifier() = default;
  PositionClassifier(ParameterStore& store, const ModelConfig& config);
  Tensor logits(Session& s, const nn::SequenceBatch& r) const;

 private:
  nn::Linear out_;
};

/// Token decoder: embeddings, a block stack with cross-attention to a
/// memory, and an output projection. It either owns its blocks or views
/// blocks owned elsewhere.
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterStore& store, const std::string& name, std::size_t vocab, std::size_t width,
          std::size_t n_head, std::size_t ffn_inner, std::size_t layers, std::size_t max_len,
          Rng& rng);
  Decoder(const Parameter* token_embed, const Parameter* pos_embed,
          std::vector<const nn::TransformerBlock*> blocks, nn::Linear output);

  std::size_t max_len() const;
  /// Embedding rows for sequences that each start with [START].
  nn::SequenceBatch embed(Session& s, const std::vector<std::vector<int>>& inputs) const;
  Tensor logits(Session& s, const std::vector<std::vector<int>>& inputs,
                const nn::SequenceBatch& memory) const;
  /// Greedy decoding from [START]; stops after a token in `stops` (not
  /// returned) or once `max_tokens` tokens have been emitted.
  std::vector<int> decode_greedy(Session& s, const Tensor& memory, std::size_t max_tokens,
                                 std::span<const int> stops) const;

 private:
  const Parameter* token_embed_ = nullptr;
  const Parameter* pos_embed_ = nullptr;
  std::vector<std::unique_ptr<nn::TransformerBlock>> owned_;
  std::vector<const nn::TransformerBlock*> blocks_;
  nn::Linear output_;
};

/// N sub-generators: shared trunk blocks followed by per-generator blocks,
/// with one token embedding and one output projection.
class GeneratorEnsemble {
 public:
  GeneratorEnsemble() = default;
  GeneratorEnsemble(ParameterStore& store, const ModelConfig& config, Rng& rng);

  std::size_t generators() const { return independent_.size(); }

  /// Teacher-forced logits. `generator_of[i]` routes sequence i; sequences
  /// must be grouped so that routing is non-decreasing.
  Tensor logits(Session& s, const std::vector<std::vector<int>>& inputs,
                std::span<const int> generator_of, const nn::SequenceBatch& memory) const;

  /// Decoder view of the trunk plus generator g's blocks.
  Decoder path(int generator) const;

  std::vector<int> decode_phase(Session& s, int generator, const Tensor& memory,
                                std::size_t max_tokens) const;

 private:
  void check_generator(int g) const;

  std::size_t width_ = 0;
  std::size_t max_len_ = 0;
  const Parameter* token_embed_ = nullptr;
  const Parameter* pos_embed_ = nullptr;
  std::vector<std::unique_ptr<nn::TransformerBlock>> shared_;
  std::vector<std::vector<std::unique_ptr<nn::TransformerBlock>>> independent_;
  nn::Linear output_;
};

/// Sum of per-position cross-entropy; kIgnoreIndex targets are skipped.
Tensor generation_loss(const Tensor& logits, std::span<const int> targets);

}  // namespace dgn
