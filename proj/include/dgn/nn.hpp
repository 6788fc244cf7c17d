#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dgn/ops.hpp"
#include "dgn/parameters.hpp"

namespace dgn::nn {

struct AttentionResult {
  Tensor output;   // [q x d_v]
  Tensor weights;  // [q x s], rows sum to 1
};

/// softmax(Q·Kᵀ/√d_k + mask)·V for a single sequence, built from primitive ops.
/// `mask` may be undefined.
AttentionResult attention_with_weights(const Tensor& q, const Tensor& k, const Tensor& v,
                                       const Tensor& mask = {});
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask = {});

/// Several sequences stacked along rows; segment i covers sequence i.
struct SequenceBatch {
  Tensor rows;
  std::vector<Segment> segments;

  static SequenceBatch single(Tensor rows);
  std::size_t count() const { return segments.size(); }
  Tensor sequence(std::size_t i) const;
};

/// Segments for back-to-back sequences of the given lengths.
std::vector<Segment> make_segments(std::span<const std::size_t> lengths);

struct Linear {
  const Parameter* weight = nullptr;
  const Parameter* bias = nullptr;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true);
  Tensor operator()(Session& s, const Tensor& x) const;
  std::size_t in() const { return weight->shape[0]; }
  std::size_t out() const { return weight->shape[1]; }
};

struct LayerNorm {
  const Parameter* gain = nullptr;
  const Parameter* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width);
  Tensor operator()(Session& s, const Tensor& x) const;
};

/// Multi-head attention with per-head projections stored as column blocks:
/// head i uses columns [i·d_k, (i+1)·d_k) of W^Q, W^K and W^V, and rows
/// [i·d_v, (i+1)·d_v) of W^O. d_k = d_v = width / n_head.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t width,
                     std::size_t n_head, Rng& rng);

  Tensor forward(Session& s, const SequenceBatch& queries, const SequenceBatch& keys,
                 bool causal) const;

  std::size_t n_head() const { return n_head_; }
  std::size_t width() const { return width_; }
  const Parameter& wq() const { return *wq_; }
  const Parameter& wk() const { return *wk_; }
  const Parameter& wv() const { return *wv_; }
  const Parameter& wo() const { return *wo_; }

 private:
  const Parameter* wq_ = nullptr;
  const Parameter* wk_ = nullptr;
  const Parameter* wv_ = nullptr;
  const Parameter* wo_ = nullptr;
  std::size_t width_ = 0;
  std::size_t n_head_ = 0;
};

/// Single-sequence convenience wrapper: MultiHead(x_q, x_kv, x_kv).
Tensor multi_head(Session& s, const Tensor& x_q, const Tensor& x_kv, const MultiHeadAttention& mha,
                  bool causal);

struct FeedForward {
  Linear up;
  Linear down;

  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, std::size_t width,
              std::size_t inner, Rng& rng);
  Tensor operator()(Session& s, const Tensor& x) const;
};

/// Post-norm conditional transformer block:
///   a = LN(z + SelfAttn(z))          (causal when decoding)
///   c = LN(a + CrossAttn(a, cond))
///   out = LN(c + FFN(c))
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, std::size_t width,
                   std::size_t n_head, std::size_t ffn_inner, Rng& rng);

  struct Trace {
    SequenceBatch out;
    Tensor cross_state;  // LN(a + CrossAttn(a, cond)), before the feed-forward sublayer
  };

  SequenceBatch forward(Session& s, const SequenceBatch& z, const SequenceBatch& cond,
                        bool causal) const;
  Trace forward_traced(Session& s, const SequenceBatch& z, const SequenceBatch& cond,
                       bool causal) const;
  Tensor forward(Session& s, const Tensor& z, const Tensor& cond, bool causal) const;

  const MultiHeadAttention& self_attention() const { return self_attn_; }
  const MultiHeadAttention& cross_attention() const { return cross_attn_; }

 private:
  MultiHeadAttention self_attn_;
  MultiHeadAttention cross_attn_;
  FeedForward ffn_;
  LayerNorm ln_self_;
  LayerNorm ln_cross_;
  LayerNorm ln_ffn_;
};

/// Applies blocks in order; every block sees the same conditioning memory.
SequenceBatch run_blocks(Session& s, std::span<const TransformerBlock* const> blocks,
                         SequenceBatch x, const SequenceBatch& cond, bool causal);

/// Parameter count of one block of the given width.
std::size_t block_parameter_count(std::size_t width, std::size_t ffn_inner);

}  // namespace dgn::nn
