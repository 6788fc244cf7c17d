#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "dgn/model_config.hpp"
#include "dgn/nn.hpp"

namespace dgn {

/// Image rows followed by ingredient rows. Throws ShapeError on width mismatch.
Tensor build_condition(const Tensor& image, const Tensor& ingredients, std::size_t width);
/// Per-recipe concatenation of two stacked batches with the same count.
nn::SequenceBatch build_condition(const nn::SequenceBatch& image,
                                  const nn::SequenceBatch& ingredients, std::size_t width);

struct StructurePrediction {
  std::vector<int> labels;      // y_1..y_S, S >= 1
  Tensor phase_vectors;         // [S x H]
  Tensor probabilities;         // [S x (N+1)], row i predicts y_i (or [END])
};

/// Autoregressive predictor over sub-generator labels.
///
/// Label ids: 0..N-1 are sub-generators, N is [END], N+1 is [START] and N+2
/// is [PAD]. Inputs are [START, g_1, ..., g_S]; position t predicts g_{t+1}
/// (or [END]), and the final block's cross-attention state at position i is
/// the phase vector of phase i.
class StructurePredictor {
 public:
  StructurePredictor() = default;
  StructurePredictor(ParameterStore& store, const ModelConfig& config, Rng& rng);

  int end_label() const { return static_cast<int>(n_); }
  int start_label() const { return static_cast<int>(n_) + 1; }
  int pad_label() const { return static_cast<int>(n_) + 2; }
  std::size_t classes() const { return n_ + 1; }

  struct Output {
    Tensor logits;        // [rows x (N+1)]
    Tensor cross_states;  // [rows x H]
    std::vector<Segment> segments;
  };

  /// Teacher-forced pass over several label sequences, each starting with
  /// [START]. Throws DataError on an out-of-range label.
  Output forward(Session& s, const std::vector<std::vector<int>>& inputs,
                 const nn::SequenceBatch& condition) const;

  /// Single-recipe teacher forcing on [START, g_1..g_S].
  StructurePrediction forward_teacher_forced(Session& s, std::span<const int> inputs,
                                             const Tensor& condition) const;

  /// Targets aligned with the inputs [START, g_1..g_S]: g_1..g_S followed by
  /// [END], or ignored when S already reaches max_phases.
  std::vector<int> targets(std::span<const int> gold) const;

  /// Greedy decoding; stops at [END] or max_phases and never returns an
  /// empty structure.
  StructurePrediction decode(Session& s, const Tensor& condition) const;

 private:
  Tensor embed(Session& s, const std::vector<std::vector<int>>& inputs) const;

  std::size_t n_ = 0;
  std::size_t max_phases_ = 0;
  std::size_t width_ = 0;
  const Parameter* label_embed_ = nullptr;
  const Parameter* pos_embed_ = nullptr;
  std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
  nn::Linear out_;
};

/// Sum over positions of cross-entropy; kIgnoreIndex targets are skipped.
Tensor structure_loss(const Tensor& logits, std::span<const int> targets);

}  // namespace dgn
