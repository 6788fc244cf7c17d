#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dgn::corpus {

/// Upper bound on phases per recipe.
inline constexpr std::size_t kMaxPhases = 3;
/// Ingredient token cap per recipe.
inline constexpr std::size_t kMaxIngredientTokens = 30;

/// Steps [begin, end) of one phase.
struct PhaseSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const PhaseSpan&) const = default;
};

using ImageGrid = std::vector<std::vector<double>>;

struct RecipeRecord {
  std::string id;
  // Exactly one of the two image forms is non-empty.
  std::vector<double> image_feat;
  ImageGrid image_grid;
  std::vector<std::string> ingredients;
  std::vector<std::string> steps;
  std::vector<PhaseSpan> phases;
  // Sub-generator label per phase; empty until labeled.
  std::vector<int> pseudo_labels;
  // Planted phase type per phase, present for synthetic records only.
  std::vector<int> planted;

  bool has_grid() const { return !image_grid.empty(); }
  bool labeled() const { return !pseudo_labels.empty(); }
  bool operator==(const RecipeRecord&) const = default;
};

using Corpus = std::vector<RecipeRecord>;

/// Lowercases and splits on whitespace; every other ASCII punctuation
/// character becomes a token of its own.
std::vector<std::string> tokenize(std::string_view text);

/// Splits `step_count` steps into min(3, step_count) contiguous phases whose
/// sizes differ by at most one, earlier phases taking the remainder.
std::vector<PhaseSpan> segment_phases(std::size_t step_count);
std::vector<PhaseSpan> segment_phases(std::span<const std::string> steps);

/// Token <-> id map with reserved ids 0..4.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kEndOfPhase = 3;
  static constexpr int kUnknown = 4;
  static constexpr std::size_t kReserved = 5;

  Vocabulary();
  /// Collects ingredient and step tokens; tokens seen fewer than `min_freq`
  /// times are left out and therefore map to [UNK].
  static Vocabulary build(const Corpus& corpus, std::size_t min_freq = 1);
  /// Rebuilds a vocabulary from its full token list (reserved tokens first).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  /// Space-joined surface form; reserved tokens are skipped.
  std::string decode(std::span<const int> ids) const;

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Reads one record per line. Throws DataError naming the line on malformed
/// input and IoError when the file cannot be read.
Corpus load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const Corpus& corpus);

/// Label dump: one {"id": str, "labels": [int]} object per line.
void save_labels(const std::filesystem::path& path, const Corpus& corpus);
/// Attaches labels from a dump to records with matching ids.
void load_labels(const std::filesystem::path& path, Corpus& corpus);

/// First `train_count` records are the training split.
std::size_t train_count(std::size_t total, double val_fraction);

}  // namespace dgn::corpus
