#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dgn/tensor.hpp"

namespace dgn {

/// Large negative additive mask value.
inline constexpr Real kMaskValue = static_cast<Real>(-1e9);
/// Target marker for positions excluded from cross_entropy.
inline constexpr int kIgnoreIndex = -1;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Elementwise sum. `b` may also be a row vector broadcast over the rows of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);

/// x·W + b with W of shape [in, out] and b of shape [out] (b may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Concatenates rank-2 tensors along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);

/// Row lookup: out[i] = table[ids[i]]. Gradients scatter-add into the table.
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Flat gather: out[i] = x[index[i]], or 0 where index[i] < 0.
Tensor gather(const Tensor& x, std::span<const long> index, Shape out_shape);

/// Softmax along `axis` (0 or 1 for rank 2; 0 for rank 1), max-subtracted.
Tensor softmax(const Tensor& x, std::size_t axis);
/// x + mask where the mask is a constant; no gradient flows to the mask.
Tensor add_mask(const Tensor& x, const Tensor& mask);
/// [q x s] additive mask: 0 where key j <= query i, kMaskValue otherwise.
Tensor causal_mask(std::size_t queries, std::size_t keys);

/// Normalizes each row over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = Real(1e-5));
/// Exact GELU, x·Φ(x).
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Mean over axis 0 ([1 x c]) or axis 1 ([r x 1]) of a rank-2 tensor.
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);

enum class Reduction { Mean, Sum };

/// Negative log-likelihood of `targets` under softmax(logits) per row.
/// Rows whose target is kIgnoreIndex contribute nothing. Mean divides by the
/// number of non-ignored rows (0 when there are none).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     Reduction reduction = Reduction::Mean);

/// Contiguous row range [offset, offset + length).
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
  bool operator==(const Segment&) const = default;
};

/// Row-mean of each segment: out[i] = mean(x[seg_i]).
Tensor segment_mean(const Tensor& x, std::span<const Segment> segments);

/// Fused multi-head scaled dot-product attention over stacked sequences.
///
/// Query segment i attends to key segment i only. Q is [Tq x n_head·d],
/// K and V are [Tk x n_head·d]; head h uses columns [h·d, (h+1)·d). With
/// `causal`, each query/key segment pair must have equal length and query t
/// sees keys 0..t. Returns the concatenated heads, [Tq x n_head·d].
Tensor segment_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const Segment> query_segments,
                         std::span<const Segment> key_segments, std::size_t n_head,
                         bool causal, Real scale);

}  // namespace dgn
