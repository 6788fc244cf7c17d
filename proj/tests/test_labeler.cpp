#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dgn/errors.hpp"
#include "dgn/labeler.hpp"
#include "dgn/rng.hpp"
#include "dgn/synthetic.hpp"

using namespace dgn;
using namespace dgn::labeler;

namespace {

struct PlantedSetup {
  corpus::Corpus corpus;
  VerbLexicon lexicon = synthetic_lexicon();
  VerbEmbeddings embeddings;
  PhasePoints points;
  std::vector<int> planted;  // per phase, aligned with points.origin
};

PlantedSetup planted_setup(std::size_t recipes, std::uint64_t seed) {
  PlantedSetup s;
  s.corpus = synthetic::generate({.seed = seed, .recipes = recipes});
  s.embeddings = train_verb_embeddings(s.corpus, s.lexicon);
  s.points = collect_phase_points(s.corpus, s.lexicon, s.embeddings);
  for (auto [r, p] : s.points.origin) s.planted.push_back(s.corpus[r].planted[p]);
  return s;
}

std::vector<int> assignments(const KMeansModel& m, const Eigen::MatrixXd& points) {
  std::vector<int> out;
  for (long i = 0; i < points.rows(); ++i) out.push_back(m.assign(points.row(i).transpose()));
  return out;
}

}  // namespace

TEST(Lexicon, MembershipAndNormalization) {
  VerbLexicon lex({"Heat", "chop", "heat", ""});
  EXPECT_EQ(lex.verbs(), (std::vector<std::string>{"chop", "heat"}));
  EXPECT_TRUE(lex.contains("heat"));
  EXPECT_FALSE(lex.contains("oil"));
  EXPECT_THROW(VerbLexicon(std::vector<std::string>{}), DataError);
  EXPECT_EQ(synthetic_lexicon().size(), 15u);
}

TEST(Lexicon, LoadsOneVerbPerLine) {
  const auto path = std::filesystem::temp_directory_path() / "dgn_lexicon.txt";
  std::ofstream(path) << "stir\n\n  whisk  \nknead\n";
  EXPECT_EQ(VerbLexicon::load(path).verbs(), (std::vector<std::string>{"knead", "stir", "whisk"}));
}

TEST(ExtractVerbs, LexiconMembership) {
  VerbLexicon lex = synthetic_lexicon();
  std::vector<std::string> a{"heat", "oil", "in", "pan"};
  std::vector<std::string> b{"the", "red", "onion"};
  EXPECT_EQ(extract_verbs(a, lex), (std::vector<std::string>{"heat"}));
  EXPECT_TRUE(extract_verbs(b, lex).empty());
}

TEST(ExtractVerbs, FirstTokenOfEverySyntheticStep) {
  VerbLexicon lex = synthetic_lexicon();
  for (const auto& r : synthetic::generate({.seed = 3, .recipes = 500})) {
    for (const auto& step : r.steps) {
      const auto tokens = corpus::tokenize(step);
      const auto verbs = extract_verbs(tokens, lex);
      ASSERT_FALSE(verbs.empty()) << step;
      EXPECT_EQ(verbs.front(), tokens.front());
      EXPECT_EQ(verbs.size(), 1u) << step;
    }
  }
}

TEST(PhaseRepresentation, MeanOfVerbRows) {
  VerbLexicon lex({"heat", "chop"});
  VerbEmbeddings e;
  e.verbs = {"chop", "heat"};
  e.table.resize(2, 3);
  e.table << 1, 2, 3, 5, 6, 7;
  corpus::RecipeRecord r;
  r.id = "x";
  r.steps = {"heat oil.", "chop onion and heat it.", "wait."};
  r.phases = corpus::segment_phases(r.steps);

  auto single = phase_representation(r, 0, lex, e);
  EXPECT_EQ(single.verb_count, 1u);
  EXPECT_TRUE(single.vector.isApprox(e.row("heat")));

  auto two = phase_representation(r, 1, lex, e);
  EXPECT_EQ(two.verb_count, 2u);
  EXPECT_TRUE(two.vector.isApprox((e.row("chop") + e.row("heat")) / 2));

  auto none = phase_representation(r, 2, lex, e);
  EXPECT_EQ(none.verb_count, 0u);
  EXPECT_EQ(none.vector, Eigen::VectorXd::Zero(3));
}

TEST(VerbEmbeddings, SaveLoadRoundTrip) {
  auto s = planted_setup(200, 4);
  EXPECT_EQ(s.embeddings.dim(), 32u);
  EXPECT_TRUE(s.embeddings.covers(s.lexicon));
  const auto path = std::filesystem::temp_directory_path() / "dgn_verbs.txt";
  s.embeddings.save(path);
  VerbEmbeddings back = VerbEmbeddings::load(path);
  EXPECT_EQ(back.verbs, s.embeddings.verbs);
  EXPECT_TRUE(back.table.isApprox(s.embeddings.table, 1e-15));
}

TEST(VerbEmbeddings, PlantedTypesAreLinearlyRecoverable) {
  // Oracle: a softmax-regression probe on the phase representations.
  auto s = planted_setup(1000, 9);
  const long n = s.points.points.rows(), d = s.points.points.cols();
  Eigen::MatrixXd x(n, d + 1);
  x << s.points.points, Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d + 1, 3);
  for (int epoch = 0; epoch < 500; ++epoch) {
    Eigen::MatrixXd logits = x * w;
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, 3);
    for (long i = 0; i < n; ++i) {
      Eigen::RowVectorXd p = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
      p /= p.sum();
      p(s.planted[static_cast<std::size_t>(i)]) -= 1;
      grad.row(i) = p;
    }
    w -= 0.5 * x.transpose() * grad / double(n);
  }
  Eigen::MatrixXd logits = x * w;
  long correct = 0;
  for (long i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    correct += arg == s.planted[static_cast<std::size_t>(i)];
  }
  EXPECT_GE(double(correct) / double(n), 0.99);
}

TEST(KMeans, SingleClusterIsTheMean) {
  Rng rng(1);
  Eigen::MatrixXd pts(20, 4);
  for (long i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal();
  KMeansModel m = kmeans_fit(pts, 1, 5);
  EXPECT_TRUE(m.centroids.row(0).isApprox(pts.colwise().mean(), 1e-12));
}

TEST(KMeans, SeparatesFarClouds) {
  Rng rng(2);
  Eigen::MatrixXd pts(40, 2);
  std::vector<int> truth;
  for (long i = 0; i < 40; ++i) {
    const double offset = i < 20 ? -50 : 50;
    pts(i, 0) = offset + rng.normal();
    pts(i, 1) = rng.normal();
    truth.push_back(i < 20 ? 0 : 1);
  }
  KMeansModel m = kmeans_fit(pts, 2, 3);
  EXPECT_DOUBLE_EQ(best_permutation_accuracy(assignments(m, pts), truth), 1.0);
}

TEST(KMeans, TooFewPointsThrows) {
  EXPECT_THROW(kmeans_fit(Eigen::MatrixXd::Zero(2, 3), 3, 1), DataError);
  EXPECT_THROW(kmeans_fit(Eigen::MatrixXd::Zero(2, 3), 0, 1), DataError);
}

TEST(KMeans, SseNeverIncreases) {
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Eigen::MatrixXd pts(150, 5);
    for (long i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal();
    KMeansModel m = kmeans_fit(pts, 4, seed);
    EXPECT_LE(m.iterations, kMaxKMeansIterations);
    for (std::size_t i = 1; i < m.sse_history.size(); ++i) {
      EXPECT_LE(m.sse_history[i], m.sse_history[i - 1] * (1 + 1e-12)) << "seed " << seed;
    }
  }
}

TEST(KMeans, DeterministicUnderSeed) {
  auto s = planted_setup(300, 5);
  KMeansModel a = kmeans_fit(s.points.points, 3, 17);
  KMeansModel b = kmeans_fit(s.points.points, 3, 17);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_EQ(a.sse_history, b.sse_history);
}

TEST(KMeans, PlantedClusterPurity) {
  auto s = planted_setup(2000, 7);
  KMeansModel m = kmeans_fit(s.points.points, 3, 7);
  EXPECT_TRUE(m.converged);
  EXPECT_GE(best_permutation_accuracy(assignments(m, s.points.points), s.planted), 0.95);
}

TEST(KMeans, CentroidPointAndTieRule) {
  KMeansModel m;
  m.centroids.resize(3, 2);
  m.centroids << 0, 0, 2, 0, 5, 5;
  EXPECT_EQ(m.assign(Eigen::Vector2d(5, 5)), 2);
  EXPECT_EQ(m.assign(Eigen::Vector2d(1, 0)), 0);  // equidistant from 0 and 1
  KMeansModel empty;
  EXPECT_THROW(empty.assign(Eigen::Vector2d(0, 0)), DataError);
}

TEST(KMeans, PermutingCentroidsPermutesAssignments) {
  auto s = planted_setup(200, 8);
  KMeansModel m = kmeans_fit(s.points.points, 3, 1);
  KMeansModel p = m;
  const std::vector<int> perm{2, 0, 1};  // old label i becomes perm[i]
  for (int i = 0; i < 3; ++i) p.centroids.row(perm[i]) = m.centroids.row(i);
  const auto a = assignments(m, s.points.points);
  const auto b = assignments(p, s.points.points);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], perm[static_cast<std::size_t>(a[i])]);
}

TEST(PseudoLabels, IdempotentAndInRange) {
  auto s = planted_setup(300, 10);
  KMeansModel m = kmeans_fit(s.points.points, 3, 2);
  assign_pseudo_labels(s.corpus, s.lexicon, s.embeddings, m);
  const corpus::Corpus once = s.corpus;
  assign_pseudo_labels(s.corpus, s.lexicon, s.embeddings, m);
  EXPECT_EQ(once, s.corpus);
  for (const auto& r : s.corpus) {
    ASSERT_EQ(r.pseudo_labels.size(), r.phases.size());
    for (int l : r.pseudo_labels) {
      EXPECT_GE(l, 0);
      EXPECT_LT(l, 3);
    }
  }
  EXPECT_THROW(assign_pseudo_labels(s.corpus, s.lexicon, s.embeddings, KMeansModel{}), DataError);
}

TEST(PseudoLabels, RecipeSequencesMatchPlantedTemplates) {
  corpus::Corpus c = synthetic::generate({.seed = 12, .recipes = 2000});
  LabelerState st = fit_and_label(c, 1800, synthetic_lexicon(), {.k = 3, .seed = 12});
  std::vector<int> labels, planted;
  for (const auto& r : c) {
    labels.insert(labels.end(), r.pseudo_labels.begin(), r.pseudo_labels.end());
    planted.insert(planted.end(), r.planted.begin(), r.planted.end());
  }
  const auto map = best_permutation(labels, planted);
  std::size_t matched = 0;
  for (const auto& r : c) {
    bool same = true;
    for (std::size_t p = 0; p < r.phases.size(); ++p) {
      same = same && map[static_cast<std::size_t>(r.pseudo_labels[p])] == r.planted[p];
    }
    matched += same;
  }
  EXPECT_GE(double(matched) / double(c.size()), 0.95);
}

TEST(PseudoLabels, KEqualOneGivesAllZero) {
  corpus::Corpus c = synthetic::generate({.seed = 13, .recipes = 50});
  fit_and_label(c, 50, synthetic_lexicon(), {.k = 1});
  for (const auto& r : c)
    for (int l : r.pseudo_labels) EXPECT_EQ(l, 0);
}

TEST(PseudoLabels, VerblessPhaseIsCounted) {
  corpus::Corpus c = synthetic::generate({.seed = 14, .recipes = 30});
  LabelerState st = fit_and_label(c, 30, synthetic_lexicon(), {});
  for (std::size_t s = c[0].phases[0].begin; s < c[0].phases[0].end; ++s) c[0].steps[s] = "wait.";
  EXPECT_EQ(assign_pseudo_labels(std::span(c.data(), 1), st.lexicon, st.embeddings, st.model), 1u);
}

TEST(Permutation, BruteForceMatching) {
  std::vector<int> a{0, 0, 1, 1, 2, 2};
  std::vector<int> b{2, 2, 0, 0, 1, 0};
  EXPECT_NEAR(best_permutation_accuracy(a, b), 5.0 / 6.0, 1e-15);
  EXPECT_EQ(best_permutation(a, b), (std::vector<int>{2, 0, 1}));
}

TEST(KMeans, RestartsNeverRaiseTheFinalSse) {
  for (std::uint64_t seed : {2, 5, 9}) {
    auto s = planted_setup(600, seed);
    const KMeansModel one = kmeans_fit(s.points.points, 3, seed);
    const KMeansModel many = kmeans_fit(s.points.points, 3, seed, kMaxKMeansIterations, 10);
    EXPECT_LE(many.sse_history.back(), one.sse_history.back());
    for (std::size_t i = 1; i < many.sse_history.size(); ++i) {
      EXPECT_LE(many.sse_history[i], many.sse_history[i - 1] + 1e-9);
    }
    const KMeansModel again = kmeans_fit(s.points.points, 3, seed, kMaxKMeansIterations, 10);
    EXPECT_EQ(many.centroids, again.centroids);
  }
  Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(4, 2);
  EXPECT_THROW(kmeans_fit(pts, 2, 1, kMaxKMeansIterations, 0), DataError);
}

TEST(Purity, MajorityClassPerCluster) {
  // Cluster 0 holds classes {5, 5, 6}, cluster 1 holds {6, 6}, cluster 2 holds {5}.
  std::vector<int> labels{0, 0, 0, 1, 1, 2};
  std::vector<int> classes{5, 5, 6, 6, 6, 5};
  EXPECT_NEAR(cluster_purity(labels, classes), 5.0 / 6.0, 1e-15);
  EXPECT_EQ(cluster_purity(classes, classes), 1.0);
  std::vector<int> one(6, 0);
  EXPECT_NEAR(cluster_purity(one, classes), 0.5, 1e-15);
  EXPECT_THROW(cluster_purity(std::vector<int>{}, std::vector<int>{}), DataError);
  EXPECT_THROW(cluster_purity(one, std::vector<int>{1}), DataError);
}
