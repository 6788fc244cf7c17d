#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dgn/corpus.hpp"

namespace dgn::labeler {

class VerbLexicon {
 public:
  VerbLexicon() = default;
  explicit VerbLexicon(std::vector<std::string> verbs);
  /// One verb per line; blank lines and surrounding whitespace are ignored.
  static VerbLexicon load(const std::filesystem::path& path);

  bool contains(std::string_view token) const;
  /// Sorted, lowercased, unique.
  const std::vector<std::string>& verbs() const { return verbs_; }
  std::size_t size() const { return verbs_.size(); }

 private:
  std::vector<std::string> verbs_;
};

/// The fifteen verbs used by the synthetic grammar.
VerbLexicon synthetic_lexicon();

/// Tokens of `sentence` that belong to the lexicon, in order.
std::vector<std::string> extract_verbs(std::span<const std::string> sentence,
                                       const VerbLexicon& lexicon);

/// Dense verb vectors, one row per lexicon verb.
struct VerbEmbeddings {
  std::vector<std::string> verbs;
  Eigen::MatrixXd table;  // verbs x dim

  std::size_t dim() const { return static_cast<std::size_t>(table.cols()); }
  /// Row of `verb`; throws DataError when absent.
  Eigen::VectorXd row(std::string_view verb) const;
  bool covers(const VerbLexicon& lexicon) const;

  /// Text table: "verb v1 v2 ... vE" per line.
  static VerbEmbeddings load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Co-occurrence embeddings: verb-by-context counts over each step, positive
/// PMI weighting, then a truncated SVD (rows scaled by sqrt of the singular
/// values). Dimensions beyond the matrix rank are zero.
VerbEmbeddings train_verb_embeddings(const corpus::Corpus& corpus, const VerbLexicon& lexicon,
                                     std::size_t dim = 32);

struct PhaseRepresentation {
  std::size_t phase = 0;
  Eigen::VectorXd vector;
  std::size_t verb_count = 0;
};

PhaseRepresentation phase_representation(const corpus::RecipeRecord& record, std::size_t phase,
                                         const VerbLexicon& lexicon,
                                         const VerbEmbeddings& embeddings);

struct KMeansModel {
  Eigen::MatrixXd centroids;  // k x dim
  // Within-cluster sum of squares after each assignment step.
  std::vector<double> sse_history;
  std::size_t iterations = 0;
  bool converged = false;

  std::size_t k() const { return static_cast<std::size_t>(centroids.rows()); }
  bool fitted() const { return centroids.rows() > 0; }
  /// Nearest centroid by Euclidean distance; ties go to the lowest index.
  int assign(const Eigen::VectorXd& point) const;
};

inline constexpr std::size_t kMaxKMeansIterations = 100;

/// Lloyd iterations from a k-means++ start. Stops when assignments repeat or
/// after `max_iterations`. With several restarts, each draws a fresh start
/// from the same RNG stream and the run with the lowest final SSE is kept
/// (the earliest on ties). Throws DataError when there are fewer points than k.
KMeansModel kmeans_fit(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed,
                       std::size_t max_iterations = kMaxKMeansIterations,
                       std::size_t restarts = 1);

/// Phase representations of every phase of `records`, row-stacked.
struct PhasePoints {
  Eigen::MatrixXd points;
  std::vector<std::pair<std::size_t, std::size_t>> origin;  // (record, phase)
  std::size_t verbless = 0;
};

PhasePoints collect_phase_points(std::span<const corpus::RecipeRecord> records,
                                 const VerbLexicon& lexicon, const VerbEmbeddings& embeddings);

/// Labels every phase with its nearest centroid. Phases without verbs fall
/// back to the zero vector and are counted in the return value.
std::size_t assign_pseudo_labels(std::span<corpus::RecipeRecord> records, const VerbLexicon& lexicon,
                                 const VerbEmbeddings& embeddings, const KMeansModel& model);

/// Fraction of items whose label agrees with the reference after the best
/// one-to-one relabeling, found by trying every permutation.
double best_permutation_accuracy(std::span<const int> labels, std::span<const int> reference);

/// The relabeling used by best_permutation_accuracy: mapping[label] = reference label.
std::vector<int> best_permutation(std::span<const int> labels, std::span<const int> reference);

/// Share of items whose reference class is the majority class of their
/// cluster.
double cluster_purity(std::span<const int> labels, std::span<const int> reference);

struct LabelerConfig {
  std::size_t k = 3;
  std::uint64_t seed = 7;
  std::size_t dim = 32;
  std::size_t restarts = 10;
};

struct LabelerState {
  VerbLexicon lexicon;
  VerbEmbeddings embeddings;
  KMeansModel model;
};

/// Trains embeddings and k-means on `train` only, then labels all records.
LabelerState fit_and_label(corpus::Corpus& corpus, std::size_t train_records,
                           const VerbLexicon& lexicon, const LabelerConfig& config,
                           const VerbEmbeddings* embeddings = nullptr);

/// JSON with centroids, SSE history and the verb table.
void save_centroids(const std::filesystem::path& path, const LabelerState& state);

}  // namespace dgn::labeler
