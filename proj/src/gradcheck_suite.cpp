#include <string>

#include "dgn/encoders.hpp"
#include "dgn/gradcheck.hpp"
#include "dgn/model.hpp"
#include "dgn/nn.hpp"
#include "dgn/ops.hpp"

namespace dgn::gradcheck {

namespace {

using Inputs = std::span<const Tensor>;

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = static_cast<Real>(rng.uniform(-1.0, 1.0));
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

void op_checks(std::vector<Result>& out, Rng& rng) {
  auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
  auto check = [&](const char* name, std::vector<Tensor> in, std::function<Tensor(Inputs)> f) {
    out.push_back(check_inputs(name, std::move(in), f));
  };
  check("matmul", {r({3, 4}), r({4, 2})}, [](Inputs in) { return matmul(in[0], in[1]); });
  check("transpose", {r({3, 2})}, [](Inputs in) { return transpose(in[0]); });
  check("add", {r({2, 3}), r({2, 3})}, [](Inputs in) { return add(in[0], in[1]); });
  check("add_row", {r({4, 3}), r({3})}, [](Inputs in) { return add(in[0], in[1]); });
  check("sub", {r({2, 3}), r({2, 3})}, [](Inputs in) { return sub(in[0], in[1]); });
  check("mul", {r({2, 3}), r({2, 3})}, [](Inputs in) { return mul(in[0], in[1]); });
  check("scale", {r({2, 3})}, [](Inputs in) { return scale(in[0], Real(-1.7)); });
  check("linear", {r({3, 4}), r({4, 5}), r({5})},
        [](Inputs in) { return linear(in[0], in[1], in[2]); });
  check("concat_rows", {r({2, 3}), r({1, 3})}, [](Inputs in) { return concat({in[0], in[1]}, 0); });
  check("concat_cols", {r({2, 3}), r({2, 2})}, [](Inputs in) { return concat({in[0], in[1]}, 1); });
  check("slice", {r({4, 5})}, [](Inputs in) {
    return concat({slice_rows(in[0], 1, 3), slice_cols(slice_rows(in[0], 0, 2), 2, 5)}, 1);
  });
  check("reshape", {r({3, 4})}, [](Inputs in) { return reshape(in[0], {2, 6}); });
  check("embedding", {r({6, 3})}, [](Inputs in) {
    const int ids[] = {5, 0, 5, 2};
    return embedding(in[0], ids);
  });
  check("gather", {r({2, 3})}, [](Inputs in) {
    const long idx[] = {0, -1, 5, 5, 2, 1};
    return gather(in[0], idx, {3, 2});
  });
  check("softmax_rows", {r({3, 4})}, [](Inputs in) { return softmax(in[0], 1); });
  check("softmax_cols", {r({3, 4})}, [](Inputs in) { return softmax(in[0], 0); });
  check("add_mask", {r({3, 3})},
        [](Inputs in) { return softmax(add_mask(in[0], causal_mask(3, 3)), 1); });
  check("layer_norm", {r({3, 6}), r({6}), r({6})},
        [](Inputs in) { return layer_norm(in[0], in[1], in[2]); });
  check("gelu", {r({3, 4})}, [](Inputs in) { return gelu(in[0]); });
  check("tanh", {r({3, 4})}, [](Inputs in) { return tanh(in[0]); });
  check("mean_rows", {r({3, 4})}, [](Inputs in) { return mean(in[0], 0); });
  check("mean_cols", {r({3, 4})}, [](Inputs in) { return mean(in[0], 1); });
  check("sum", {r({3, 4})}, [](Inputs in) { return sum(in[0]); });
  check("cross_entropy_mean", {r({4, 5})}, [](Inputs in) {
    const int t[] = {1, kIgnoreIndex, 4, 0};
    return cross_entropy(in[0], t);
  });
  check("cross_entropy_sum", {r({4, 5})}, [](Inputs in) {
    const int t[] = {1, 2, 4, kIgnoreIndex};
    return cross_entropy(in[0], t, Reduction::Sum);
  });
  check("segment_mean", {r({5, 3})}, [](Inputs in) {
    const Segment segs[] = {{0, 2}, {2, 3}, {1, 1}};
    return segment_mean(in[0], segs);
  });
  check("segment_attention", {r({5, 4}), r({6, 4}), r({6, 4})}, [](Inputs in) {
    const Segment qs[] = {{0, 2}, {2, 3}}, ks[] = {{0, 4}, {3, 3}};
    return segment_attention(in[0], in[1], in[2], qs, ks, 2, false, Real(0.7));
  });
  check("segment_attention_causal", {r({5, 4})}, [](Inputs in) {
    const Segment segs[] = {{0, 2}, {2, 3}};
    return segment_attention(in[0], in[0], in[0], segs, segs, 2, true, Real(0.5));
  });
}

void block_checks(std::vector<Result>& out, Rng& rng) {
  ParameterStore store;
  nn::TransformerBlock b1(store, "b1", 8, 2, 32, rng);
  nn::TransformerBlock b2(store, "b2", 8, 2, 32, rng);
  const Tensor z = random_tensor({4, 8}, rng, false), cond = random_tensor({3, 8}, rng, false);
  const Tensor w = random_tensor({4, 8}, rng, false);
  std::vector<const nn::TransformerBlock*> blocks{&b1, &b2};
  out.push_back(check_parameters("transformer_blocks", store, [&](Session& s) {
    auto y = nn::run_blocks(s, blocks, nn::SequenceBatch::single(z),
                            nn::SequenceBatch::single(cond), true);
    return sum(mul(y.rows, w));
  }, 64));
}

void grid_encoder_check(std::vector<Result>& out, Rng& rng) {
  ParameterStore store;
  ModelConfig c;
  c.hidden = 8;
  c.n_head = 2;
  c.grid_images = true;
  c.grid_side = 5;
  c.conv_channels = 2;
  ImageEncoder enc(store, c, rng);
  std::vector<Real> a(25), b(25);
  for (auto& x : a) x = static_cast<Real>(rng.normal());
  for (auto& x : b) x = static_cast<Real>(rng.normal());
  const Tensor w = random_tensor({8, c.hidden}, rng, false);
  out.push_back(check_parameters("grid_image_encoder", store, [&](Session& s) {
    const std::span<const Real> imgs[] = {a, b};
    return sum(mul(enc.encode_batch(s, imgs).rows, w));
  }, 64));
}

EncodedRecipe toy_recipe(Rng& rng, const ModelConfig& c, std::vector<int> labels) {
  auto token = [&] { return 5 + static_cast<int>(rng.index(c.vocab_size - 5)); };
  EncodedRecipe r;
  r.id = "toy";
  for (std::size_t i = 0; i < c.image_dim; ++i) r.image.push_back(static_cast<Real>(rng.normal()));
  for (int i = 0; i < 3; ++i) r.ingredients.push_back(token());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    std::vector<int> tokens;
    for (std::size_t t = 0; t < 2 + p; ++t) tokens.push_back(token());
    r.phases.push_back(std::move(tokens));
  }
  r.labels = std::move(labels);
  return r;
}

void model_checks(std::vector<Result>& out, Rng& rng) {
  ModelConfig c;
  c.hidden = 16;
  c.n_head = 2;
  c.structure_layers = 1;
  c.shared_layers = 1;
  c.independent_layers = 1;
  c.ffn_multiplier = 2;
  c.vocab_size = 12;
  c.image_dim = 5;
  std::vector<EncodedRecipe> data{toy_recipe(rng, c, {1, 0}), toy_recipe(rng, c, {2, 1})};
  const EncodedRecipe* batch[] = {&data[0], &data[1]};
  auto objective = [&](const RecipeModel& m) {
    return [&m, &batch](Session& s) {
      const LossTerms t = m.losses(s, batch);
      Tensor total = t.gen;
      if (t.pre.defined()) total = add(total, t.pre);
      if (t.pos.defined()) total = add(total, scale(t.pos, Real(0.1)));
      return total;
    };
  };
  for (Fusion f : {Fusion::Attn, Fusion::Cat}) {
    c.fusion = f;
    DgnModel model(c, rng.next());
    out.push_back(check_parameters("dgn_" + std::string(to_string(f)), model.store(),
                                   objective(model), 64));
  }
  c.kind = ModelKind::Baseline;
  BaselineModel base(c, rng.next());
  out.push_back(check_parameters("baseline", base.store(), objective(base), 64));
}

}  // namespace

std::vector<Result> run_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Result> out;
  op_checks(out, rng);
  block_checks(out, rng);
  grid_encoder_check(out, rng);
  model_checks(out, rng);
  return out;
}

}  // namespace dgn::gradcheck
