#include "dgn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dgn/errors.hpp"

namespace dgn::metrics {
namespace {

using NGramCounts = std::map<std::vector<std::string>, std::size_t>;

NGramCounts ngrams(const Tokens& t, std::size_t n) {
  NGramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    ++out[std::vector<std::string>(t.begin() + static_cast<long>(i),
                                   t.begin() + static_cast<long>(i + n))];
  }
  return out;
}

}  // namespace

double perplexity(double nll_sum, std::size_t tokens) {
  if (tokens == 0) throw DataError("perplexity of an empty corpus");
  return std::exp(nll_sum / static_cast<double>(tokens));
}

double bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references) {
  if (hypotheses.size() != references.size()) {
    throw DataError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                    std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw DataError("bleu of an empty corpus");
  double matches[4] = {0, 0, 0, 0};
  double candidates[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (references[i].empty()) throw DataError("bleu: reference " + std::to_string(i) + " is empty");
    hyp_len += static_cast<double>(hypotheses[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const NGramCounts h = ngrams(hypotheses[i], n);
      const NGramCounts r = ngrams(references[i], n);
      for (const auto& [gram, count] : h) {
        const auto it = r.find(gram);
        matches[n - 1] += static_cast<double>(std::min(count, it == r.end() ? 0 : it->second));
        candidates[n - 1] += static_cast<double>(count);
      }
    }
  }
  if (matches[0] == 0) return 0.0;
  double log_sum = std::log(matches[0] / candidates[0]);
  for (std::size_t n = 1; n < 4; ++n) log_sum += std::log((matches[n] + 1) / (candidates[n] + 1));
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& hypothesis, const Tokens& reference, double beta2) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const double l = static_cast<double>(lcs_length(hypothesis, reference));
  if (l == 0) return 0.0;
  const double p = l / static_cast<double>(hypothesis.size());
  const double r = l / static_cast<double>(reference.size());
  return (1 + beta2) * p * r / (r + beta2 * p);
}

double rouge_l(std::span<const Tokens> hypotheses, std::span<const Tokens> references,
               double beta2) {
  if (hypotheses.size() != references.size()) throw DataError("rouge_l: pair count mismatch");
  if (hypotheses.empty()) throw DataError("rouge_l of an empty corpus");
  double sum = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) sum += rouge_l(hypotheses[i], references[i], beta2);
  return sum / static_cast<double>(hypotheses.size());
}

CorpusStats corpus_stats(std::span<const Tokens> texts) {
  CorpusStats s;
  if (texts.empty()) return s;
  std::set<std::string> types;
  double total = 0;
  for (const Tokens& t : texts) {
    total += static_cast<double>(t.size());
    types.insert(t.begin(), t.end());
  }
  s.avg_length = total / static_cast<double>(texts.size());
  s.vocab_size = types.size();
  return s;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["perplexity"] = perplexity;
  j["bleu"] = bleu;
  j["rouge_l"] = rouge_l;
  j["avg_length"] = avg_length;
  j["vocab_size"] = vocab_size;
  return j.dump();
}

Tokens split(const std::string& text) {
  Tokens out;
  std::istringstream in(text);
  for (std::string t; in >> t;) out.push_back(std::move(t));
  return out;
}

}  // namespace dgn::metrics
