#include "dgn/labeler.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "dgn/errors.hpp"
#include "dgn/rng.hpp"
#include "dgn/synthetic.hpp"

namespace dgn::labeler {

VerbLexicon::VerbLexicon(std::vector<std::string> verbs) {
  for (std::string& v : verbs) {
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  }
  std::sort(verbs.begin(), verbs.end());
  verbs.erase(std::unique(verbs.begin(), verbs.end()), verbs.end());
  verbs.erase(std::remove(verbs.begin(), verbs.end(), std::string()), verbs.end());
  if (verbs.empty()) throw DataError("verb lexicon is empty");
  verbs_ = std::move(verbs);
}

VerbLexicon VerbLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read lexicon '" + path.string() + "'");
  std::vector<std::string> verbs;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::string w;
    if (words >> w) verbs.push_back(w);
  }
  return VerbLexicon(std::move(verbs));
}

bool VerbLexicon::contains(std::string_view token) const {
  return std::binary_search(verbs_.begin(), verbs_.end(), token);
}

VerbLexicon synthetic_lexicon() {
  std::vector<std::string> verbs;
  for (std::size_t t = 0; t < synthetic::kMaxPhaseTypes; ++t) {
    for (std::string_view v : synthetic::phase_verbs(t)) verbs.emplace_back(v);
  }
  return VerbLexicon(std::move(verbs));
}

std::vector<std::string> extract_verbs(std::span<const std::string> sentence,
                                       const VerbLexicon& lexicon) {
  std::vector<std::string> out;
  for (const std::string& t : sentence) {
    if (lexicon.contains(t)) out.push_back(t);
  }
  return out;
}

Eigen::VectorXd VerbEmbeddings::row(std::string_view verb) const {
  auto it = std::find(verbs.begin(), verbs.end(), verb);
  if (it == verbs.end()) throw DataError("no embedding for verb '" + std::string(verb) + "'");
  return table.row(it - verbs.begin()).transpose();
}

bool VerbEmbeddings::covers(const VerbLexicon& lexicon) const {
  return std::all_of(lexicon.verbs().begin(), lexicon.verbs().end(), [&](const std::string& v) {
    return std::find(verbs.begin(), verbs.end(), v) != verbs.end();
  });
}

VerbEmbeddings VerbEmbeddings::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embeddings '" + path.string() + "'");
  VerbEmbeddings e;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::istringstream fields(line);
    std::string verb;
    if (!(fields >> verb)) continue;
    std::vector<double> values;
    double x = 0;
    while (fields >> x) values.push_back(x);
    if (values.empty() || (!rows.empty() && values.size() != rows[0].size())) {
      throw DataError("embedding line " + std::to_string(number) + " has the wrong width");
    }
    e.verbs.push_back(verb);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError("embedding table '" + path.string() + "' is empty");
  e.table.resize(static_cast<long>(rows.size()), static_cast<long>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) e.table(long(i), long(j)) = rows[i][j];
  return e;
}

void VerbEmbeddings::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.precision(17);
  for (std::size_t i = 0; i < verbs.size(); ++i) {
    out << verbs[i];
    for (long j = 0; j < table.cols(); ++j) out << ' ' << table(long(i), j);
    out << '\n';
  }
}

VerbEmbeddings train_verb_embeddings(const corpus::Corpus& corpus, const VerbLexicon& lexicon,
                                     std::size_t dim) {
  if (dim == 0) throw DataError("embedding dimension must be positive");
  const auto& verbs = lexicon.verbs();
  // Context columns follow sorted token order so the table is reproducible.
  std::map<std::string, long> context_ids;
  for (const auto& r : corpus) {
    for (const std::string& step : r.steps) {
      for (std::string& t : corpus::tokenize(step)) context_ids.emplace(std::move(t), 0);
    }
  }
  long next = 0;
  for (auto& [token, id] : context_ids) id = next++;

  const long n_verbs = static_cast<long>(verbs.size());
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_verbs, std::max<long>(next, 1));
  for (const auto& r : corpus) {
    for (const std::string& step : r.steps) {
      const auto tokens = corpus::tokenize(step);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!lexicon.contains(tokens[i])) continue;
        const long v = std::lower_bound(verbs.begin(), verbs.end(), tokens[i]) - verbs.begin();
        for (std::size_t j = 0; j < tokens.size(); ++j) {
          if (j != i) counts(v, context_ids.at(tokens[j])) += 1;
        }
      }
    }
  }

  const double total = counts.sum();
  Eigen::MatrixXd ppmi = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
  if (total > 0) {
    const Eigen::VectorXd row_sums = counts.rowwise().sum();
    const Eigen::RowVectorXd col_sums = counts.colwise().sum();
    for (long i = 0; i < counts.rows(); ++i)
      for (long j = 0; j < counts.cols(); ++j) {
        if (counts(i, j) <= 0) continue;
        const double pmi = std::log(counts(i, j) * total / (row_sums(i) * col_sums(j)));
        ppmi(i, j) = std::max(0.0, pmi);
      }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ppmi, Eigen::ComputeThinU);
  const Eigen::MatrixXd& u = svd.matrixU();
  const Eigen::VectorXd& s = svd.singularValues();
  VerbEmbeddings e;
  e.verbs = verbs;
  e.table = Eigen::MatrixXd::Zero(n_verbs, static_cast<long>(dim));
  const long keep = std::min<long>(static_cast<long>(dim), u.cols());
  for (long c = 0; c < keep; ++c) {
    Eigen::Index pivot = 0;
    u.col(c).cwiseAbs().maxCoeff(&pivot);
    const double sign = u(pivot, c) < 0 ? -1.0 : 1.0;
    e.table.col(c) = sign * std::sqrt(s(c)) * u.col(c);
  }
  return e;
}

PhaseRepresentation phase_representation(const corpus::RecipeRecord& record, std::size_t phase,
                                         const VerbLexicon& lexicon,
                                         const VerbEmbeddings& embeddings) {
  if (phase >= record.phases.size()) {
    throw DataError("phase " + std::to_string(phase) + " outside record '" + record.id + "'");
  }
  PhaseRepresentation rep;
  rep.phase = phase;
  rep.vector = Eigen::VectorXd::Zero(static_cast<long>(embeddings.dim()));
  const corpus::PhaseSpan span = record.phases[phase];
  for (std::size_t s = span.begin; s < span.end; ++s) {
    const auto tokens = corpus::tokenize(record.steps[s]);
    for (const std::string& verb : extract_verbs(tokens, lexicon)) {
      rep.vector += embeddings.row(verb);
      ++rep.verb_count;
    }
  }
  if (rep.verb_count > 0) rep.vector /= static_cast<double>(rep.verb_count);
  return rep;
}

int KMeansModel::assign(const Eigen::VectorXd& point) const {
  if (!fitted()) throw DataError("k-means model has not been fitted");
  if (point.size() != centroids.cols()) {
    throw ShapeError("point of dimension " + std::to_string(point.size()) +
                     " against centroids of dimension " + std::to_string(centroids.cols()));
  }
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (long c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c).transpose() - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

namespace {

KMeansModel lloyd_from_plus_plus(const Eigen::MatrixXd& points, std::size_t k, Rng& rng,
                                 std::size_t max_iterations) {
  const auto n = static_cast<std::size_t>(points.rows());
  KMeansModel m;
  m.centroids.resize(static_cast<long>(k), points.cols());
  m.centroids.row(0) = points.row(static_cast<long>(rng.index(n)));
  std::vector<double> d2(n);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c; ++j) {
        best = std::min(best, (points.row(long(i)) - m.centroids.row(long(j))).squaredNorm());
      }
      d2[i] = best;
      total += best;
    }
    const std::size_t pick = total > 0 ? rng.categorical(d2) : rng.index(n);
    m.centroids.row(long(c)) = points.row(long(pick));
  }

  std::vector<int> assignment(n, -1), previous;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    previous = assignment;
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
      assignment[i] = m.assign(points.row(long(i)).transpose());
      sse += (points.row(long(i)) - m.centroids.row(assignment[i])).squaredNorm();
    }
    m.sse_history.push_back(sse);
    m.iterations = it + 1;
    if (assignment == previous) {
      m.converged = true;
      break;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(long(k), points.cols());
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(assignment[i]) += points.row(long(i));
      ++sizes[static_cast<std::size_t>(assignment[i])];
    }
    for (std::size_t c = 0; c < k; ++c) {
      // An emptied cluster keeps its centroid.
      if (sizes[c] > 0) m.centroids.row(long(c)) = sums.row(long(c)) / double(sizes[c]);
    }
  }
  return m;
}

}  // namespace

KMeansModel kmeans_fit(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed,
                       std::size_t max_iterations, std::size_t restarts) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k == 0) throw DataError("k-means needs k >= 1");
  if (restarts == 0) throw DataError("k-means needs at least one start");
  if (n < k) {
    throw DataError("k-means with k=" + std::to_string(k) + " needs at least " + std::to_string(k) +
                    " points, got " + std::to_string(n));
  }
  Rng rng(seed);
  KMeansModel best;
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansModel m = lloyd_from_plus_plus(points, k, rng, max_iterations);
    if (r == 0 || m.sse_history.back() < best.sse_history.back()) best = std::move(m);
  }
  return best;
}

PhasePoints collect_phase_points(std::span<const corpus::RecipeRecord> records,
                                 const VerbLexicon& lexicon, const VerbEmbeddings& embeddings) {
  PhasePoints out;
  std::vector<Eigen::VectorXd> rows;
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (std::size_t p = 0; p < records[r].phases.size(); ++p) {
      PhaseRepresentation rep = phase_representation(records[r], p, lexicon, embeddings);
      if (rep.verb_count == 0) ++out.verbless;
      rows.push_back(std::move(rep.vector));
      out.origin.emplace_back(r, p);
    }
  }
  out.points.resize(static_cast<long>(rows.size()), static_cast<long>(embeddings.dim()));
  for (std::size_t i = 0; i < rows.size(); ++i) out.points.row(long(i)) = rows[i].transpose();
  return out;
}

std::size_t assign_pseudo_labels(std::span<corpus::RecipeRecord> records, const VerbLexicon& lexicon,
                                 const VerbEmbeddings& embeddings, const KMeansModel& model) {
  if (!model.fitted()) throw DataError("cannot assign labels with an unfitted k-means model");
  std::size_t verbless = 0;
  for (corpus::RecipeRecord& r : records) {
    r.pseudo_labels.assign(r.phases.size(), 0);
    for (std::size_t p = 0; p < r.phases.size(); ++p) {
      PhaseRepresentation rep = phase_representation(r, p, lexicon, embeddings);
      if (rep.verb_count == 0) ++verbless;
      r.pseudo_labels[p] = model.assign(rep.vector);
    }
  }
  if (verbless > 0) {
    spdlog::warn("{} phase(s) contain no lexicon verb and were labeled from the zero vector",
                 verbless);
  }
  return verbless;
}

namespace {

std::vector<std::vector<std::size_t>> contingency(std::span<const int> labels,
                                                  std::span<const int> reference, std::size_t& m) {
  if (labels.size() != reference.size()) throw DataError("label lists differ in length");
  int hi = 0;
  for (int x : labels) {
    if (x < 0) throw DataError("negative label");
    hi = std::max(hi, x);
  }
  for (int x : reference) {
    if (x < 0) throw DataError("negative label");
    hi = std::max(hi, x);
  }
  m = static_cast<std::size_t>(hi) + 1;
  if (m > 9) throw DataError("permutation matching supports at most 9 labels");
  std::vector<std::vector<std::size_t>> table(m, std::vector<std::size_t>(m, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++table[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(reference[i])];
  }
  return table;
}

}  // namespace

std::vector<int> best_permutation(std::span<const int> labels, std::span<const int> reference) {
  std::size_t m = 0;
  const auto table = contingency(labels, reference, m);
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  std::size_t best_hits = 0;
  bool first = true;
  do {
    std::size_t hits = 0;
    for (std::size_t a = 0; a < m; ++a) hits += table[a][static_cast<std::size_t>(perm[a])];
    if (first || hits > best_hits) {
      best_hits = hits;
      best = perm;
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double best_permutation_accuracy(std::span<const int> labels, std::span<const int> reference) {
  if (labels.empty()) throw DataError("cannot score an empty label list");
  const std::vector<int> map = best_permutation(labels, reference);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += map[static_cast<std::size_t>(labels[i])] == reference[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double cluster_purity(std::span<const int> labels, std::span<const int> reference) {
  if (labels.empty()) throw DataError("cannot score an empty label list");
  if (labels.size() != reference.size()) throw DataError("label lists differ in length");
  std::map<int, std::map<int, std::size_t>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) ++counts[labels[i]][reference[i]];
  std::size_t majority = 0;
  for (const auto& [cluster, by_class] : counts) {
    std::size_t best = 0;
    for (const auto& [cls, n] : by_class) best = std::max(best, n);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(labels.size());
}

LabelerState fit_and_label(corpus::Corpus& corpus, std::size_t train_records,
                           const VerbLexicon& lexicon, const LabelerConfig& config,
                           const VerbEmbeddings* embeddings) {
  train_records = std::min(train_records, corpus.size());
  const std::span<const corpus::RecipeRecord> train(corpus.data(), train_records);
  LabelerState state;
  state.lexicon = lexicon;
  if (embeddings) {
    if (!embeddings->covers(lexicon)) throw DataError("embedding table does not cover the lexicon");
    state.embeddings = *embeddings;
  } else {
    state.embeddings =
        train_verb_embeddings(corpus::Corpus(train.begin(), train.end()), lexicon, config.dim);
  }
  const PhasePoints points = collect_phase_points(train, lexicon, state.embeddings);
  state.model = kmeans_fit(points.points, config.k, config.seed, kMaxKMeansIterations, config.restarts);
  assign_pseudo_labels(corpus, lexicon, state.embeddings, state.model);
  return state;
}

void save_centroids(const std::filesystem::path& path, const LabelerState& state) {
  nlohmann::ordered_json j;
  j["k"] = state.model.k();
  j["dim"] = state.model.centroids.cols();
  j["iterations"] = state.model.iterations;
  j["converged"] = state.model.converged;
  j["sse_history"] = state.model.sse_history;
  auto& cs = j["centroids"] = nlohmann::ordered_json::array();
  for (long c = 0; c < state.model.centroids.rows(); ++c) {
    std::vector<double> row;
    for (long d = 0; d < state.model.centroids.cols(); ++d) row.push_back(state.model.centroids(c, d));
    cs.push_back(row);
  }
  auto& verbs = j["verbs"] = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < state.embeddings.verbs.size(); ++i) {
    std::vector<double> row;
    for (long d = 0; d < state.embeddings.table.cols(); ++d) {
      row.push_back(state.embeddings.table(long(i), d));
    }
    verbs[state.embeddings.verbs[i]] = row;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace dgn::labeler
