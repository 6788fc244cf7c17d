#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dgn/corpus.hpp"
#include "dgn/metrics.hpp"
#include "dgn/model.hpp"

namespace dgn {

struct LossWeights {
  double pre = 1.0;
  double gen = 1.0;
  double pos = 0.1;
};

/// The three objective terms of one batch, already averaged over recipes.
struct LossBundle {
  Tensor pre;
  Tensor gen;
  Tensor pos;
  LossWeights weights;

  /// λ1·pre + λ2·gen + λ3·pos, summed in that order; missing terms count as 0.
  Tensor total() const;
};

/// Scalar form of the weighted sum, evaluated in the same order as LossBundle::total.
double total_loss(double pre, double gen, double pos, const LossWeights& w);

/// Turns per-batch sums into per-recipe means.
LossBundle make_bundle(const LossTerms& terms, const LossWeights& w);

struct TrainConfig {
  double learning_rate = 0.001;
  double decay = 0.99;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 7;
  double clip_norm = 5.0;
  // Restore the parameters of the epoch with the lowest validation perplexity
  // once training ends.
  bool keep_best = true;
  // Stop after this many epochs without a new best validation perplexity (0: never).
  std::size_t patience = 0;
  LossWeights weights;
  ModelConfig model;

  /// Throws DataError when a setting is out of range.
  void validate() const;
  /// Learning rate used during epoch `epoch` (0-based).
  double lr_at(std::size_t epoch) const;
  std::string to_json() const;
  static TrainConfig from_json(std::string_view text);
};

/// Adam with bias correction. Frozen parameters are left untouched.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParameterStore& store, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  /// Throws NumericalError (naming the parameter) on a non-finite gradient.
  void step(ParameterStore& store, const GradBuffer& grads, double lr);

  std::uint64_t steps() const { return t_; }
  GradBuffer& first_moment() { return m_; }
  GradBuffer& second_moment() { return v_; }
  const GradBuffer& first_moment() const { return m_; }
  const GradBuffer& second_moment() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  GradBuffer m_, v_;
};

/// Scales `grads` in place so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(const ParameterStore& store, GradBuffer& grads, double max_norm);

/// Teacher-forced evaluation totals.
struct TeacherForcedEval {
  double loss_sum = 0;  // weighted objective summed over recipes
  double nll_sum = 0;   // token negative log-likelihood
  std::size_t tokens = 0;
  std::size_t recipes = 0;

  double mean_loss() const;
  double perplexity() const;
};

TeacherForcedEval evaluate_teacher_forced(const RecipeModel& model,
                                          std::span<const EncodedRecipe> data,
                                          const LossWeights& weights, std::size_t batch_size);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_ppl = 0;
  double lr = 0;

  std::string to_json() const;
};

/// Owns the model, the optimizer and the shuffling RNG. Fully deterministic
/// for a given config and data order.
class Trainer {
 public:
  Trainer(const TrainConfig& config, const corpus::Vocabulary& vocab);

  /// One optimizer step on the given recipes; returns the batch objective.
  double step(std::span<const EncodedRecipe* const> batch, double lr);
  /// Shuffles, trains one epoch, evaluates on `val` (skipped when empty)
  /// and advances the epoch counter.
  EpochMetrics run_epoch(std::span<const EncodedRecipe> train, std::span<const EncodedRecipe> val);
  /// Runs the remaining epochs, calling `on_epoch` after each. Honors
  /// keep_best and patience when `val` is not empty.
  void fit(std::span<const EncodedRecipe> train, std::span<const EncodedRecipe> val,
           const std::function<void(const EpochMetrics&)>& on_epoch = {});

  const TrainConfig& config() const { return config_; }
  const corpus::Vocabulary& vocab() const { return vocab_; }
  RecipeModel& model() { return *model_; }
  const RecipeModel& model() const { return *model_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  std::size_t epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }
  /// Epoch whose parameters fit() kept, or -1 when no selection happened.
  long best_epoch() const { return best_epoch_; }

 private:
  TrainConfig config_;
  corpus::Vocabulary vocab_;
  std::unique_ptr<RecipeModel> model_;
  Adam adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
  long best_epoch_ = -1;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint: "DGNC", version, config JSON (train config, model
/// config, vocabulary), parameters, Adam moments, epoch and step counters,
/// RNG state. Throws IoError on I/O failure.
void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer);
/// Throws IoError when unreadable and DataError when malformed.
std::unique_ptr<Trainer> load_checkpoint(const std::filesystem::path& path);

/// Texts for a batch of recipes, decoded in parallel over `threads` workers.
std::vector<Generation> generate_all(const RecipeModel& model, std::span<const EncodedRecipe> data,
                                     std::size_t threads);

/// Reference token sequence of a record: its steps tokenized and concatenated.
metrics::Tokens reference_tokens(const corpus::RecipeRecord& record);
/// Generated tokens as text tokens, reserved ids dropped.
metrics::Tokens generated_tokens(const Generation& g, const corpus::Vocabulary& vocab);

/// Teacher-forced perplexity plus BLEU, ROUGE-L, length and vocabulary of
/// greedy generations against the records' steps. `records` and `encoded`
/// are parallel. When `generations` is given it receives the decoded outputs.
metrics::EvalReport evaluate_model(const RecipeModel& model, const corpus::Vocabulary& vocab,
                                   std::span<const corpus::RecipeRecord> records,
                                   std::span<const EncodedRecipe> encoded, const LossWeights& weights,
                                   std::size_t batch_size, std::size_t threads,
                                   std::vector<Generation>* generations = nullptr);

/// Worker count from DGN_THREADS, defaulting to the hardware concurrency.
std::size_t thread_count();

}  // namespace dgn
