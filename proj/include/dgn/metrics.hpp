#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dgn::metrics {

using Tokens = std::vector<std::string>;

/// exp(nll_sum / tokens). Throws DataError when no token was scored.
double perplexity(double nll_sum, std::size_t tokens);

/// Corpus-level BLEU in [0, 100] over 1..4-grams with a brevity penalty.
/// Precisions for n >= 2 use (matches + 1) / (candidates + 1). Throws
/// DataError on an empty reference or mismatched list sizes.
double bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references);

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) memory.
std::size_t lcs_length(const Tokens& a, const Tokens& b);

inline constexpr double kRougeBeta2 = 12.0;

/// LCS F-score in [0, 1]; 0 when either side is empty.
double rouge_l(const Tokens& hypothesis, const Tokens& reference, double beta2 = kRougeBeta2);
/// Mean of rouge_l over aligned pairs.
double rouge_l(std::span<const Tokens> hypotheses, std::span<const Tokens> references,
               double beta2 = kRougeBeta2);

struct CorpusStats {
  double avg_length = 0;
  std::size_t vocab_size = 0;
};
CorpusStats corpus_stats(std::span<const Tokens> texts);

struct EvalReport {
  double perplexity = 0;
  double bleu = 0;
  double rouge_l = 0;
  double avg_length = 0;
  std::size_t vocab_size = 0;

  std::string to_json() const;
};

/// Whitespace split.
Tokens split(const std::string& text);

}  // namespace dgn::metrics
