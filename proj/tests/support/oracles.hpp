#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dgn/metrics.hpp"
#include "dgn/rng.hpp"

// Brute-force references for the metric implementations.
namespace dgn::oracle {

using metrics::Tokens;

inline Tokens random_tokens(Rng& rng, std::size_t max_len, std::size_t alphabet) {
  Tokens t(1 + rng.index(max_len));
  for (auto& x : t) x = std::string(1, static_cast<char>('a' + rng.index(alphabet)));
  return t;
}

inline bool same_gram(const Tokens& a, std::size_t i, const Tokens& b, std::size_t j, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k)
    if (a[i + k] != b[j + k]) return false;
  return true;
}

inline std::size_t occurrences(const Tokens& text, const Tokens& src, std::size_t at, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t j = 0; j + n <= text.size(); ++j) c += same_gram(src, at, text, j, n);
  return c;
}

// Scans positions directly instead of building n-gram tables.
inline double bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs) {
  long double m[4] = {}, c[4] = {}, hl = 0, rl = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const Tokens& h = hyps[s];
    const Tokens& r = refs[s];
    hl += h.size();
    rl += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        c[n - 1] += 1;
        bool first = true;
        for (std::size_t k = 0; k < i; ++k)
          if (same_gram(h, k, h, i, n)) first = false;
        if (!first) continue;
        m[n - 1] += std::min(occurrences(h, h, i, n), occurrences(r, h, i, n));
      }
    }
  }
  if (m[0] == 0) return 0;
  long double logp = std::log(m[0] / c[0]);
  for (int n = 1; n < 4; ++n) logp += std::log((m[n] + 1) / (c[n] + 1));
  const long double bp = hl > rl ? 1.0L : std::exp(1.0L - rl / hl);
  return static_cast<double>(100.0L * bp * std::exp(logp / 4));
}

// Longest common subsequence by trying every subsequence of `a`.
inline std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  for (std::size_t mask = 0; mask < (std::size_t(1) << a.size()); ++mask) {
    std::size_t j = 0, len = 0;
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      if (!(mask >> i & 1)) continue;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      else {
        ++j;
        ++len;
      }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}


}  // namespace dgn::oracle
