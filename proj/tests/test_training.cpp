#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dgn/errors.hpp"
#include "dgn/synthetic.hpp"
#include "dgn/training.hpp"

using namespace dgn;

namespace {

struct Fixture {
  corpus::Vocabulary vocab;
  TrainConfig config;
  std::vector<EncodedRecipe> data;
};

// Planted labels stand in for pseudo labels so the tests skip clustering.
Fixture tiny_setup(std::size_t recipes, std::size_t hidden = 16, ModelKind kind = ModelKind::Dgn) {
  synthetic::SyntheticConfig sc;
  sc.recipes = recipes;
  sc.image_dim = 8;
  sc.seed = 3;
  corpus::Corpus c = synthetic::generate(sc);
  for (auto& r : c) r.pseudo_labels = r.planted;
  Fixture f;
  f.vocab = corpus::Vocabulary::build(c);
  f.config.batch_size = 8;
  f.config.epochs = 2;
  f.config.seed = 11;
  f.config.model.kind = kind;
  f.config.model.hidden = hidden;
  f.config.model.n_head = 2;
  f.config.model.structure_layers = 1;
  f.config.model.shared_layers = 1;
  f.config.model.independent_layers = 1;
  f.config.model.baseline_layers = 2;
  f.config.model.ffn_multiplier = 2;
  f.config.model.image_dim = 8;
  f.config.model.vocab_size = f.vocab.size();
  f.data = encode_corpus(c, f.vocab, f.config.model);
  return f;
}

std::vector<std::vector<Real>> snapshot(const ParameterStore& store) {
  std::vector<std::vector<Real>> out;
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back(*store[i].value);
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dgn_test_" + name);
}

}  // namespace

TEST(Loss, WeightedSumExample) {
  EXPECT_DOUBLE_EQ(total_loss(2, 3, 1, LossWeights{}), 5.1);
  LossBundle b{Tensor::scalar(2), Tensor::scalar(3), Tensor::scalar(1), LossWeights{}};
  EXPECT_DOUBLE_EQ(b.total().item(), 5.1);
  EXPECT_EQ(b.total().item(), total_loss(2, 3, 1, LossWeights{}));
}

TEST(Loss, ZeroPositionWeightIgnoresPositionTerm) {
  LossWeights w{1, 1, 0};
  EXPECT_EQ(total_loss(2, 3, 1, w), total_loss(2, 3, 100, w));
}

TEST(Loss, GradientOfTotalIsWeightedSumOfParts) {
  Fixture f = tiny_setup(6);
  f.config.weights = {0.7, 1.3, 0.4};
  Trainer t(f.config, f.vocab);
  const EncodedRecipe* batch[] = {&f.data[0], &f.data[1], &f.data[2]};
  ParameterStore& store = t.model().store();
  auto grads_of = [&](auto pick) {
    Session s(store, true);
    LossBundle b = make_bundle(t.model().losses(s, batch), f.config.weights);
    pick(b).backward();
    GradBuffer g = store.zero_grads();
    s.accumulate_into(g);
    return g;
  };
  GradBuffer total = grads_of([](const LossBundle& b) { return b.total(); });
  GradBuffer pre = grads_of([](const LossBundle& b) { return scale(b.pre, Real(0.7)); });
  GradBuffer gen = grads_of([](const LossBundle& b) { return scale(b.gen, Real(1.3)); });
  GradBuffer pos = grads_of([](const LossBundle& b) { return scale(b.pos, Real(0.4)); });
  for (std::size_t i = 0; i < total.size(); ++i)
    for (std::size_t j = 0; j < total[i].size(); ++j) {
      ASSERT_NEAR(total[i][j], pre[i][j] + gen[i][j] + pos[i][j], 1e-12) << store[i].name;
    }
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  ParameterStore store;
  Rng rng(1);
  store.normal("w", {3, 2}, 1.0, rng);
  const auto before = *store[0].value;
  Adam adam(store);
  for (int i = 0; i < 5; ++i) adam.step(store, store.zero_grads(), 0.01);
  EXPECT_EQ(*store[0].value, before);
}

TEST(Adam, ConstantGradientStepsByLearningRate) {
  ParameterStore store;
  store.constant("w", {2}, 0.0);
  Adam adam(store);
  GradBuffer g{{0.3, -2.0}};
  std::vector<Real> prev = *store[0].value;
  for (int i = 0; i < 200; ++i) {
    adam.step(store, g, 0.01);
    const auto& now = *store[0].value;
    EXPECT_NEAR(now[0] - prev[0], -0.01, 1e-6);
    EXPECT_NEAR(now[1] - prev[1], 0.01, 1e-6);
    prev = now;
  }
}

TEST(Adam, QuadraticDecreasesMonotonically) {
  ParameterStore store;
  store.constant("x", {1}, 1.0);
  Adam adam(store);
  double f = 1.0;
  for (int i = 0; i < 10; ++i) {
    const Real x = (*store[0].value)[0];
    adam.step(store, GradBuffer{{2 * x}}, 0.1);
    const double next = std::pow((*store[0].value)[0], 2);
    EXPECT_LT(next, f);
    f = next;
  }
}

TEST(Adam, NonFiniteGradientIsRejected) {
  ParameterStore store;
  store.constant("w", {2}, 1.0);
  Adam adam(store);
  GradBuffer g{{1.0, std::nan("")}};
  EXPECT_THROW(adam.step(store, g, 0.1), NumericalError);
  EXPECT_EQ(adam.steps(), 0u);
}

TEST(Adam, FrozenParametersStayPut) {
  ParameterStore store;
  store.constant("a", {1}, 1.0);
  store.constant("b", {1}, 1.0);
  store.set_frozen("a", true);
  Adam adam(store);
  adam.step(store, GradBuffer{{1.0}, {1.0}}, 0.1);
  EXPECT_EQ((*store[0].value)[0], 1.0);
  EXPECT_LT((*store[1].value)[0], 1.0);
}

TEST(Clip, ScalesToMaxNorm) {
  ParameterStore store;
  store.constant("a", {2}, 0.0);
  GradBuffer g{{3.0, 4.0}};
  EXPECT_DOUBLE_EQ(clip_global_norm(store, g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[0][1], 0.8, 1e-15);
  GradBuffer small{{0.3, 0.4}};
  clip_global_norm(store, small, 1.0);
  EXPECT_EQ(small[0][0], 0.3);
}

TEST(Schedule, DecaysPerEpoch) {
  TrainConfig c;
  for (std::size_t e = 0; e < 50; ++e) EXPECT_NEAR(c.lr_at(e), 0.001 * std::pow(0.99, double(e)), 1e-12);
  c.decay = 0;
  EXPECT_THROW(c.validate(), DataError);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c;
  c.epochs = 3;
  c.patience = 2;
  c.weights.pos = 0.25;
  c.model.fusion = Fusion::Cat;
  c.model.vocab_size = 40;
  TrainConfig d = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
  EXPECT_EQ(d.model, c.model);
}

TEST(Trainer, UnlabeledCorpusIsRejected) {
  Fixture f = tiny_setup(4);
  for (auto& r : f.data) r.labels.clear();
  Trainer t(f.config, f.vocab);
  EXPECT_THROW(t.run_epoch(f.data, {}), DataError);
}

TEST(Trainer, TwoRunsGiveIdenticalCurves) {
  for (ModelKind kind : {ModelKind::Dgn, ModelKind::Baseline}) {
    Fixture f = tiny_setup(24, 16, kind);
    std::span<const EncodedRecipe> train(f.data.data(), 16), val(f.data.data() + 16, 8);
    std::vector<std::string> curves[2];
    for (auto& curve : curves) {
      Trainer t(f.config, f.vocab);
      t.fit(train, val, [&](const EpochMetrics& m) { curve.push_back(m.to_json()); });
    }
    EXPECT_EQ(curves[0], curves[1]);
    EXPECT_EQ(curves[0].size(), 2u);
  }
}

TEST(Trainer, KeepsBestEpochAndStopsEarly) {
  Fixture f = tiny_setup(24);
  f.config.epochs = 6;
  f.config.patience = 1;
  f.config.learning_rate = 0.05;  // large enough to make validation bounce
  std::span<const EncodedRecipe> train(f.data.data(), 16), val(f.data.data() + 16, 8);
  Trainer t(f.config, f.vocab);
  std::vector<double> ppl;
  t.fit(train, val, [&](const EpochMetrics& m) { ppl.push_back(m.val_ppl); });
  ASSERT_GE(t.best_epoch(), 0);
  const double best = *std::min_element(ppl.begin(), ppl.end());
  EXPECT_EQ(ppl[static_cast<std::size_t>(t.best_epoch())], best);
  const auto e = evaluate_teacher_forced(t.model(), val, f.config.weights, f.config.batch_size);
  EXPECT_DOUBLE_EQ(e.perplexity(), best);
  if (ppl.size() < 6) {
    EXPECT_GT(ppl.back(), best);
  }
}

TEST(Trainer, ValidationLossFallsEarly) {
  Fixture f = tiny_setup(160, 32);
  f.config.epochs = 5;
  f.config.keep_best = false;
  std::span<const EncodedRecipe> train(f.data.data(), 128), val(f.data.data() + 128, 32);
  Trainer t(f.config, f.vocab);
  std::vector<double> losses;
  t.fit(train, val, [&](const EpochMetrics& m) { losses.push_back(m.val_loss); });
  int violations = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) violations += losses[i] >= losses[i - 1];
  EXPECT_LE(violations, 1);
}

TEST(Trainer, UntrainedPerplexityIsNearVocabularySize) {
  Fixture f = tiny_setup(16);
  Trainer t(f.config, f.vocab);
  const auto e = evaluate_teacher_forced(t.model(), f.data, f.config.weights, 8);
  EXPECT_GT(e.perplexity(), f.vocab.size() / 2.0);
  EXPECT_LT(e.perplexity(), f.vocab.size() * 2.0);
  EXPECT_EQ(e.perplexity(), std::exp(e.nll_sum / static_cast<double>(e.tokens)));
}

TEST(Checkpoint, RoundTripReproducesNextStep) {
  for (ModelKind kind : {ModelKind::Dgn, ModelKind::Baseline}) {
    Fixture f = tiny_setup(24, 16, kind);
    f.config.epochs = 1;
    Trainer a(f.config, f.vocab);
    a.run_epoch(f.data, {});
    const auto path = temp_path("ckpt.bin");
    save_checkpoint(path, a);
    auto b = load_checkpoint(path);
    EXPECT_EQ(b->config().to_json(), a.config().to_json());
    EXPECT_EQ(b->vocab().tokens(), a.vocab().tokens());
    EXPECT_EQ(b->epoch(), a.epoch());
    EXPECT_EQ(snapshot(b->model().store()), snapshot(a.model().store()));
    // One more epoch (shuffle, steps with restored moments) on both.
    a.run_epoch(f.data, {});
    b->run_epoch(f.data, {});
    EXPECT_EQ(snapshot(b->model().store()), snapshot(a.model().store()));
    EXPECT_EQ(b->optimizer().first_moment(), a.optimizer().first_moment());
    EXPECT_EQ(b->optimizer().steps(), a.optimizer().steps());
    std::filesystem::remove(path);
  }
}

TEST(Checkpoint, RejectsBadFiles) {
  EXPECT_THROW(load_checkpoint(temp_path("missing.bin")), IoError);
  const auto path = temp_path("junk.bin");
  std::ofstream(path) << "JUNKJUNKJUNK";
  EXPECT_THROW(load_checkpoint(path), DataError);
  Fixture f = tiny_setup(4);
  Trainer t(f.config, f.vocab);
  save_checkpoint(path, t);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
}

TEST(Generate, ParallelMatchesSerial) {
  Fixture f = tiny_setup(8);
  Trainer t(f.config, f.vocab);
  auto serial = generate_all(t.model(), f.data, 1);
  auto parallel = generate_all(t.model(), f.data, 3);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].tokens, parallel[i].tokens);
    EXPECT_EQ(serial[i].structure, parallel[i].structure);
    EXPECT_EQ(serial[i].phases.size(), serial[i].structure.size());
    EXPECT_LE(serial[i].tokens.size(), 150u);
  }
}
