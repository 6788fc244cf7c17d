#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "dgn/gradcheck.hpp"
#include "dgn/ops.hpp"
#include "dgn/rng.hpp"

using namespace dgn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = static_cast<Real>(rng.uniform(-1.0, 1.0));
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

void expect_gradcheck(const char* name, std::vector<Tensor> inputs,
                      const std::function<Tensor(std::span<const Tensor>)>& f) {
  auto r = gradcheck::check_inputs(name, std::move(inputs), f);
  EXPECT_GT(r.coordinates, 0u) << name;
  EXPECT_LT(r.max_rel_error, 1e-4) << name;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {0.5, -2, 3.25, 7});
  EXPECT_EQ(matmul(eye, a).to_vector(), a.to_vector());
}

TEST(Matmul, HandComputedProduct) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(matmul(a, b).to_vector(), (std::vector<Real>{19, 22, 43, 50}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2 x 3] x [2 x 3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  Rng rng(3);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng, false);
  sum(matmul(a, b)).backward();
  // Central differences with h = 1e-6 as the independent reference.
  auto values = a.mutable_data();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      Real expected = b.at(j, 0) + b.at(j, 1);  // (ones x B^T)[i][j]
      const Real orig = values[i * 4 + j];
      values[i * 4 + j] = orig + 1e-6;
      const double plus = sum(matmul(a.detach(), b)).item();
      values[i * 4 + j] = orig - 1e-6;
      const double minus = sum(matmul(a.detach(), b)).item();
      values[i * 4 + j] = orig;
      EXPECT_NEAR(a.grad()[i * 4 + j], expected, 1e-12);
      EXPECT_NEAR(a.grad()[i * 4 + j], (plus - minus) / 2e-6, 1e-8);
    }
  }
}

TEST(Softmax, UniformOnEqualInputs) {
  auto y = softmax(Tensor::from({3}, {0, 0, 0}), 0).to_vector();
  for (Real v : y) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  Rng rng(11);
  Tensor x = random_tensor({4, 6}, rng, false);
  std::vector<Real> shifted = x.to_vector();
  for (Real& v : shifted) v += 123.5;
  auto a = softmax(x, 1).to_vector();
  auto b = softmax(Tensor::from({4, 6}, shifted), 1).to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Softmax, MatchesExtendedPrecisionFormula) {
  auto y = softmax(Tensor::from({3}, {1, 2, 3}), 0).to_vector();
  long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(y[i], static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z), 1e-12);
  }
}

TEST(Softmax, SumsToOneAlongEitherAxis) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({5, 7}, rng, false);
    auto scaled = scale(x, static_cast<Real>(rng.uniform(0.1, 50.0)));
    auto rows = softmax(scaled, 1);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += rows.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    auto cols = softmax(scaled, 0);
    for (std::size_t j = 0; j < 7; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < 5; ++i) s += cols.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Tensor logits = Tensor::zeros({3, 4});
  std::vector<int> targets{0, 3, 2};
  EXPECT_NEAR(cross_entropy(logits, targets).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
  double previous = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    Tensor logits = Tensor::from({1, 3}, {0, static_cast<Real>(margin), 0});
    std::vector<int> t{1};
    double loss = cross_entropy(logits, t).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-20);
}

TEST(CrossEntropy, MatchesBruteForceLogSoftmax) {
  Rng rng(17);
  Tensor logits = random_tensor({3, 5}, rng, false);
  std::vector<int> targets{4, 0, 2};
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    long double z = 0;
    for (std::size_t j = 0; j < 5; ++j) z += std::exp(static_cast<long double>(logits.at(i, j)));
    expected -= static_cast<double>(logits.at(i, targets[i]) - std::log(z));
  }
  EXPECT_NEAR(cross_entropy(logits, targets).item(), expected / 3, 1e-10);
  EXPECT_NEAR(cross_entropy(logits, targets, Reduction::Sum).item(), expected, 1e-10);
}

TEST(CrossEntropy, IgnoredPositionsContributeNothing) {
  Rng rng(2);
  Tensor logits = random_tensor({3, 5}, rng);
  std::vector<int> with_pad{1, kIgnoreIndex, 3};
  Tensor first = slice_rows(logits, 0, 1);
  Tensor last = slice_rows(logits, 2, 3);
  std::vector<int> t1{1}, t3{3};
  double expected = (cross_entropy(first, t1).item() + cross_entropy(last, t3).item()) / 2;
  Tensor loss = cross_entropy(logits, with_pad);
  EXPECT_NEAR(loss.item(), expected, 1e-14);
  loss.backward();
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(logits.grad()[5 + j], 0.0);
}

TEST(CrossEntropy, OutOfRangeTargetIsAnError) {
  std::vector<int> bad{7};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 4}), bad), DataError);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tensor x = Tensor::full({2, 5}, 3.5);
  auto y = layer_norm(x, Tensor::full({5}, 1), Tensor::zeros({5})).to_vector();
  for (Real v : y) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, RowStatisticsFollowGainAndBias) {
  Rng rng(8);
  Tensor x = random_tensor({4, 64}, rng, false);
  Tensor y = layer_norm(x, Tensor::full({64}, -2.0), Tensor::full({64}, 0.75));
  for (std::size_t i = 0; i < 4; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 64; ++j) m += y.at(i, j);
    m /= 64;
    for (std::size_t j = 0; j < 64; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m);
    EXPECT_NEAR(m, 0.75, 1e-9);
    EXPECT_NEAR(std::sqrt(v / 64), 2.0, 1e-3);
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  sum(x).backward();
  for (Real g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  Tensor x = Tensor::from({4}, {-1.5, 0, 2, 3}, true);
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 2 * x.data()[i]);
}

TEST(Backward, RepeatedCallsAccumulateUntilZeroGrad) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor loss = sum(scale(x, 2));
  loss.backward();
  loss.backward();
  for (Real g : x.grad()) EXPECT_EQ(g, 4.0);
  x.zero_grad();
  loss.backward();
  for (Real g : x.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Backward, NonScalarLossIsAnError) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(scale(x, 2).backward(), ShapeError);
}

TEST(Backward, SharedSubexpressionsSumContributions) {
  // y = tanh(x) + x ⊙ x; both branches read x.
  Tensor x = Tensor::from({3}, {-0.4, 0.1, 0.9}, true);
  sum(add(tanh(x), mul(x, x))).backward();
  for (std::size_t i = 0; i < 3; ++i) {
    double v = x.data()[i];
    EXPECT_NEAR(x.grad()[i], 1 - std::tanh(v) * std::tanh(v) + 2 * v, 1e-14);
  }
}

TEST(Backward, ConstantsDoNotBuildGraph) {
  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = add(a, a);
  EXPECT_FALSE(b.requires_grad());
  EXPECT_TRUE(b.is_leaf());
}

TEST(GradCheck, EveryDifferentiableOp) {
  Rng rng(42);
  auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
  expect_gradcheck("matmul", {r({3, 4}), r({4, 2})},
                   [](auto in) { return matmul(in[0], in[1]); });
  expect_gradcheck("transpose", {r({3, 2})}, [](auto in) { return transpose(in[0]); });
  expect_gradcheck("add", {r({2, 3}), r({2, 3})}, [](auto in) { return add(in[0], in[1]); });
  expect_gradcheck("add_row", {r({4, 3}), r({3})}, [](auto in) { return add(in[0], in[1]); });
  expect_gradcheck("sub", {r({2, 3}), r({2, 3})}, [](auto in) { return sub(in[0], in[1]); });
  expect_gradcheck("mul", {r({2, 3}), r({2, 3})}, [](auto in) { return mul(in[0], in[1]); });
  expect_gradcheck("scale", {r({2, 3})}, [](auto in) { return scale(in[0], -1.7); });
  expect_gradcheck("linear", {r({3, 4}), r({4, 5}), r({5})},
                   [](auto in) { return linear(in[0], in[1], in[2]); });
  expect_gradcheck("concat0", {r({2, 3}), r({1, 3})},
                   [](auto in) { return concat({in[0], in[1]}, 0); });
  expect_gradcheck("concat1", {r({2, 3}), r({2, 2})},
                   [](auto in) { return concat({in[0], in[1]}, 1); });
  expect_gradcheck("slice", {r({4, 5})}, [](auto in) {
    return concat({slice_rows(in[0], 1, 3), slice_cols(slice_rows(in[0], 0, 2), 2, 5)}, 1);
  });
  expect_gradcheck("embedding", {r({6, 3})}, [](auto in) {
    std::vector<int> ids{5, 0, 5, 2};
    return embedding(in[0], ids);
  });
  expect_gradcheck("gather", {r({2, 3})}, [](auto in) {
    std::vector<long> idx{0, -1, 5, 5, 2, 1};
    return gather(in[0], idx, {3, 2});
  });
  expect_gradcheck("softmax1", {r({3, 4})}, [](auto in) { return softmax(in[0], 1); });
  expect_gradcheck("softmax0", {r({3, 4})}, [](auto in) { return softmax(in[0], 0); });
  expect_gradcheck("mask", {r({3, 3})},
                   [](auto in) { return softmax(add_mask(in[0], causal_mask(3, 3)), 1); });
  expect_gradcheck("layer_norm", {r({3, 6}), r({6}), r({6})},
                   [](auto in) { return layer_norm(in[0], in[1], in[2]); });
  expect_gradcheck("gelu", {r({3, 4})}, [](auto in) { return gelu(in[0]); });
  expect_gradcheck("tanh", {r({3, 4})}, [](auto in) { return tanh(in[0]); });
  expect_gradcheck("mean0", {r({3, 4})}, [](auto in) { return mean(in[0], 0); });
  expect_gradcheck("mean1", {r({3, 4})}, [](auto in) { return mean(in[0], 1); });
  expect_gradcheck("reshape", {r({3, 4})}, [](auto in) { return reshape(in[0], {2, 6}); });
  expect_gradcheck("cross_entropy", {r({4, 5})}, [](auto in) {
    std::vector<int> t{1, kIgnoreIndex, 4, 0};
    return cross_entropy(in[0], t);
  });
  expect_gradcheck("segment_mean", {r({5, 3})}, [](auto in) {
    std::vector<Segment> segs{{0, 2}, {2, 3}, {1, 1}};
    return segment_mean(in[0], segs);
  });
  expect_gradcheck("segment_attention", {r({5, 4}), r({6, 4}), r({6, 4})}, [](auto in) {
    std::vector<Segment> qs{{0, 2}, {2, 3}}, ks{{0, 4}, {3, 3}};
    return segment_attention(in[0], in[1], in[2], qs, ks, 2, false, 0.7);
  });
  expect_gradcheck("segment_attention_causal", {r({5, 4})}, [](auto in) {
    std::vector<Segment> segs{{0, 2}, {2, 3}};
    return segment_attention(in[0], in[0], in[0], segs, segs, 2, true, 0.5);
  });
}

TEST(SegmentAttention, MatchesPerSequenceComposedAttention) {
  Rng rng(9);
  Tensor q = random_tensor({5, 6}, rng, false);
  Tensor k = random_tensor({7, 6}, rng, false);
  Tensor v = random_tensor({7, 6}, rng, false);
  std::vector<Segment> qs{{0, 3}, {3, 2}}, ks{{0, 4}, {4, 3}};
  const std::size_t heads = 3, dk = 2;
  Tensor fused = segment_attention(q, k, v, qs, ks, heads, false, 1 / std::sqrt(2.0));
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      auto part = [&](const Tensor& t, Segment seg) {
        return slice_cols(slice_rows(t, seg.offset, seg.offset + seg.length), h * dk, h * dk + dk);
      };
      Tensor qh = part(q, qs[s]), kh = part(k, ks[s]), vh = part(v, ks[s]);
      Tensor ref = matmul(softmax(scale(matmul(qh, transpose(kh)), 1 / std::sqrt(2.0)), 1), vh);
      for (std::size_t i = 0; i < qs[s].length; ++i)
        for (std::size_t j = 0; j < dk; ++j)
          EXPECT_NEAR(fused.at(qs[s].offset + i, h * dk + j), ref.at(i, j), 1e-12);
    }
  }
}

TEST(GradCheck, RoundoffFloorScalesWithTheObjective) {
  EXPECT_EQ(gradcheck::roundoff_floor(0.0, 1e-5), gradcheck::kMinScale);
  const double eps = std::numeric_limits<Real>::epsilon();
  EXPECT_NEAR(gradcheck::roundoff_floor(1000.0, 1e-5), eps * 1000 / (1e-5 * 1e-4), 1e-18);
  EXPECT_NEAR(gradcheck::relative_error(1.0, 1.0 + 1e-6), 1e-6 / (1.0 + 1e-6), 1e-15);
  EXPECT_EQ(gradcheck::relative_error(0.0, 1e-8), 1e-8 / gradcheck::kMinScale);
}

TEST(GradCheck, BrokenGradientIsCaught) {
  // x·x with the incoming gradient dropped for one factor: autodiff of a
  // detached copy gives x instead of 2x.
  Rng rng(43);
  auto r = gradcheck::check_inputs("half", {random_tensor({3, 3}, rng)}, [](auto in) {
    return mul(in[0], in[0].detach());
  });
  EXPECT_GT(r.max_rel_error, 0.4);
}

TEST(GradCheck, FullSuitePasses) {
  for (const auto& r : gradcheck::run_suite()) {
    EXPECT_GT(r.coordinates, 0u) << r.name;
    EXPECT_TRUE(r.passed()) << r.name << " " << r.max_rel_error;
  }
}
