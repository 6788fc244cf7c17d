#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dgn {

/// Seeded generator with platform-independent sampling helpers.
///
/// Only the raw 64-bit engine output is used, so the derived uniform, normal
/// and index draws do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached spare).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform index in [0, n), unbiased.
  std::size_t index(std::size_t n);
  /// Draws index i with probability weights[i] / sum(weights).
  std::size_t categorical(const std::vector<double>& weights);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace dgn
