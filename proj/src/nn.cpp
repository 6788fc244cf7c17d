#include "dgn/nn.hpp"

#include <cmath>

namespace dgn::nn {

AttentionResult attention_with_weights(const Tensor& q, const Tensor& k, const Tensor& v,
                                       const Tensor& mask) {
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: d_k mismatch between Q " + shape_string(q.shape()) + " and K " +
                     shape_string(k.shape()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: K " + shape_string(k.shape()) + " and V " +
                     shape_string(v.shape()) + " differ in sequence length");
  }
  const Real inv_sqrt_dk = Real(1) / std::sqrt(static_cast<Real>(q.cols()));
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  if (mask.defined()) scores = add_mask(scores, mask);
  Tensor weights = softmax(scores, 1);
  return {matmul(weights, v), weights};
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
  return attention_with_weights(q, k, v, mask).output;
}

SequenceBatch SequenceBatch::single(Tensor rows) {
  SequenceBatch b;
  b.segments.push_back({0, rows.rows()});
  b.rows = std::move(rows);
  return b;
}

Tensor SequenceBatch::sequence(std::size_t i) const {
  return slice_rows(rows, segments.at(i).offset, segments.at(i).offset + segments.at(i).length);
}

std::vector<Segment> make_segments(std::span<const std::size_t> lengths) {
  std::vector<Segment> segs;
  segs.reserve(lengths.size());
  std::size_t offset = 0;
  for (std::size_t len : lengths) {
    segs.push_back({offset, len});
    offset += len;
  }
  return segs;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng, bool with_bias) {
  weight = &store.xavier(name + ".weight", {in, out}, rng);
  if (with_bias) bias = &store.zeros(name + ".bias", {out});
}

Tensor Linear::operator()(Session& s, const Tensor& x) const {
  return linear(x, s(*weight), bias ? s(*bias) : Tensor());
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width) {
  gain = &store.constant(name + ".gain", {width}, Real(1));
  bias = &store.zeros(name + ".bias", {width});
}

Tensor LayerNorm::operator()(Session& s, const Tensor& x) const {
  return layer_norm(x, s(*gain), s(*bias));
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name,
                                       std::size_t width, std::size_t n_head, Rng& rng)
    : width_(width), n_head_(n_head) {
  if (n_head == 0 || width % n_head != 0) {
    throw DataError("hidden size " + std::to_string(width) + " is not divisible by " +
                    std::to_string(n_head) + " heads");
  }
  wq_ = &store.xavier(name + ".wq", {width, width}, rng);
  wk_ = &store.xavier(name + ".wk", {width, width}, rng);
  wv_ = &store.xavier(name + ".wv", {width, width}, rng);
  wo_ = &store.xavier(name + ".wo", {width, width}, rng);
}

Tensor MultiHeadAttention::forward(Session& s, const SequenceBatch& queries,
                                   const SequenceBatch& keys, bool causal) const {
  if (queries.rows.cols() != width_ || keys.rows.cols() != width_) {
    throw ShapeError("multi-head attention of width " + std::to_string(width_) + " got " +
                     shape_string(queries.rows.shape()) + " and " +
                     shape_string(keys.rows.shape()));
  }
  Tensor q = matmul(queries.rows, s(*wq_));
  Tensor k = matmul(keys.rows, s(*wk_));
  Tensor v = matmul(keys.rows, s(*wv_));
  const Real inv_sqrt_dk = Real(1) / std::sqrt(static_cast<Real>(width_ / n_head_));
  Tensor heads =
      segment_attention(q, k, v, queries.segments, keys.segments, n_head_, causal, inv_sqrt_dk);
  return matmul(heads, s(*wo_));
}

Tensor multi_head(Session& s, const Tensor& x_q, const Tensor& x_kv, const MultiHeadAttention& mha,
                  bool causal) {
  return mha.forward(s, SequenceBatch::single(x_q), SequenceBatch::single(x_kv), causal);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, std::size_t width,
                         std::size_t inner, Rng& rng)
    : up(store, name + ".up", width, inner, rng), down(store, name + ".down", inner, width, rng) {}

Tensor FeedForward::operator()(Session& s, const Tensor& x) const { return down(s, gelu(up(s, x))); }

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name,
                                   std::size_t width, std::size_t n_head, std::size_t ffn_inner,
                                   Rng& rng)
    : self_attn_(store, name + ".self", width, n_head, rng),
      cross_attn_(store, name + ".cross", width, n_head, rng),
      ffn_(store, name + ".ffn", width, ffn_inner, rng),
      ln_self_(store, name + ".ln_self", width),
      ln_cross_(store, name + ".ln_cross", width),
      ln_ffn_(store, name + ".ln_ffn", width) {}

SequenceBatch TransformerBlock::forward(Session& s, const SequenceBatch& z,
                                        const SequenceBatch& cond, bool causal) const {
  return forward_traced(s, z, cond, causal).out;
}

TransformerBlock::Trace TransformerBlock::forward_traced(Session& s, const SequenceBatch& z,
                                                         const SequenceBatch& cond,
                                                         bool causal) const {
  if (cond.rows.rows() == 0) throw ShapeError("transformer block needs a non-empty condition");
  Tensor a = ln_self_(s, add(z.rows, s.dropout(self_attn_.forward(s, z, z, causal))));
  SequenceBatch a_batch{a, z.segments};
  Tensor c = ln_cross_(s, add(a, s.dropout(cross_attn_.forward(s, a_batch, cond, false))));
  Tensor out = ln_ffn_(s, add(c, s.dropout(ffn_(s, c))));
  return {{out, z.segments}, c};
}

Tensor TransformerBlock::forward(Session& s, const Tensor& z, const Tensor& cond,
                                 bool causal) const {
  return forward(s, SequenceBatch::single(z), SequenceBatch::single(cond), causal).rows;
}

SequenceBatch run_blocks(Session& s, std::span<const TransformerBlock* const> blocks,
                         SequenceBatch x, const SequenceBatch& cond, bool causal) {
  for (const TransformerBlock* block : blocks) x = block->forward(s, x, cond, causal);
  return x;
}

std::size_t block_parameter_count(std::size_t width, std::size_t ffn_inner) {
  const std::size_t attention = 4 * width * width;
  const std::size_t ffn = width * ffn_inner + ffn_inner + ffn_inner * width + width;
  return 2 * attention + ffn + 3 * 2 * width;
}

}  // namespace dgn::nn
