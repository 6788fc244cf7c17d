#include "dgn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

namespace dgn {
namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

using Node = detail::Node;
using Backward = std::function<void(Node&)>;

ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

ConstMatMap value_view(const Node& n, std::size_t rows, std::size_t cols) {
  return ConstMatMap(n.value->data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MatMap grad_view(Node& n, std::size_t rows, std::size_t cols) {
  return MatMap(n.ensure_grad().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

// Builds the result node. Parents that do not require gradients are dropped
// along with the backward closure when nothing upstream needs a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<Real> values,
                   std::initializer_list<Tensor> parents, Backward backward) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<Real>>(std::move(values));
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor make_result(const char* op, Shape shape, std::vector<Real> values,
                   std::span<const Tensor> parents, Backward backward) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<Real>>(std::move(values));
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) return false;
  return (b.rank() == 1 && b.shape()[0] == a.cols()) ||
         (b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == a.cols() && a.rows() != 1);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<Real> out(m * n);
  MatMap(out.data(), m, n).noalias() = view(a) * view(b);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    ConstMatMap dout(self.grad.data(), m, n);
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) grad_view(pa, m, k).noalias() += dout * value_view(pb, k, n).transpose();
    if (pb.requires_grad) grad_view(pb, k, n).noalias() += value_view(pa, m, k).transpose() * dout;
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<Real> out(m * n);
  MatMap(out.data(), n, m) = view(a).transpose();
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    grad_view(*self.parents[0], m, n) += ConstMatMap(self.grad.data(), n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    auto da = a.data(), db = b.data();
    std::vector<Real> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (!is_row_broadcast(a, b)) {
    throw ShapeError("add: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  auto da = a.data(), db = b.data();
  std::vector<Real> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = da[i * n + j] + db[j];
  return make_result("add_row", a.shape(), std::move(out), {a, b}, [m, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto da = a.data(), db = b.data();
  std::vector<Real> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto da = a.data(), db = b.data();
  std::vector<Real> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    // Read both values before touching grads: a and b may be the same node.
    const auto& va = *pa.value;
    const auto& vb = *pb.value;
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * vb[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * va[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  auto da = a.data();
  std::vector<Real> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis > 1) throw ShapeError("concat axis must be 0 or 1");
  for (const Tensor& p : parts) require_matrix(p, "concat");
  if (axis == 0) {
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const Tensor& p : parts) {
      if (p.cols() != n) {
        throw ShapeError("concat(axis=0): column mismatch " + shape_string(parts[0].shape()) +
                         " vs " + shape_string(p.shape()));
      }
      m += p.rows();
    }
    std::vector<Real> out;
    out.reserve(m * n);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result("concat0", {m, n}, std::move(out), parts, [](Node& self) {
      std::size_t offset = 0;
      for (auto& p : self.parents) {
        const std::size_t len = p->value->size();
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
        }
        offset += len;
      }
    });
  }
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m) {
      throw ShapeError("concat(axis=1): row mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    n += p.cols();
  }
  std::vector<Real> out(m * n);
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    auto d = p.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(d.data() + i * c, c, out.data() + i * n + col);
    col += c;
  }
  return make_result("concat1", {m, n}, std::move(out), parts, [m, n](Node& self) {
    std::size_t col = 0;
    for (auto& p : self.parents) {
      const std::size_t c = cols_of(p->shape);
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * n + col + j];
      }
      col += c;
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  if (begin > end || end > a.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_string(a.shape()));
  }
  const std::size_t n = a.cols();
  auto d = a.data();
  std::vector<Real> out(d.begin() + static_cast<long>(begin * n),
                        d.begin() + static_cast<long>(end * n));
  return make_result("slice_rows", {end - begin, n}, std::move(out), {a},
                     [begin, n](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[begin * n + i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  if (begin > end || end > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  auto d = a.data();
  std::vector<Real> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(d.data() + i * n + begin, w, out.data() + i * w);
  return make_result("slice_cols", {m, w}, std::move(out), {a}, [m, n, w, begin](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  return make_result("reshape", std::move(shape), a.to_vector(), {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.rows(), n = table.cols();
  auto d = table.data();
  std::vector<Real> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table " +
                       shape_string(table.shape()));
    }
    std::copy_n(d.data() + static_cast<std::size_t>(ids[i]) * n, n, out.data() + i * n);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result("embedding", {ids.size(), n}, std::move(out), {table},
                     [saved = std::move(saved), n](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < saved.size(); ++i) {
                         Real* row = g.data() + static_cast<std::size_t>(saved[i]) * n;
                         for (std::size_t j = 0; j < n; ++j) row[j] += self.grad[i * n + j];
                       }
                     });
}

Tensor gather(const Tensor& x, std::span<const long> index, Shape out_shape) {
  if (shape_numel(out_shape) != index.size()) {
    throw ShapeError("gather: index count does not match " + shape_string(out_shape));
  }
  auto d = x.data();
  std::vector<Real> out(index.size(), Real(0));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) continue;
    if (static_cast<std::size_t>(index[i]) >= d.size()) {
      throw ShapeError("gather: index out of range for " + shape_string(x.shape()));
    }
    out[i] = d[static_cast<std::size_t>(index[i])];
  }
  std::vector<long> saved(index.begin(), index.end());
  return make_result("gather", std::move(out_shape), std::move(out), {x},
                     [saved = std::move(saved)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < saved.size(); ++i)
                         if (saved[i] >= 0) g[static_cast<std::size_t>(saved[i])] += self.grad[i];
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.rank() > 2) throw ShapeError("softmax supports rank <= 2");
  if (axis >= std::max<std::size_t>(x.rank(), 1)) {
    throw ShapeError("softmax: invalid axis " + std::to_string(axis) + " for " +
                     shape_string(x.shape()));
  }
  const bool along_rows = x.rank() == 2 && axis == 0;
  const std::size_t m = x.rows(), n = x.cols();
  // Lines to normalize: `count` lines of `len` elements spaced by `stride`.
  const std::size_t count = along_rows ? n : m;
  const std::size_t len = along_rows ? m : n;
  const std::size_t stride = along_rows ? n : 1;
  const std::size_t step = along_rows ? 1 : n;
  auto d = x.data();
  std::vector<Real> out(d.size());
  for (std::size_t l = 0; l < count; ++l) {
    const std::size_t base = l * step;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, d[base + i * stride]);
    Real total = 0;
    for (std::size_t i = 0; i < len; ++i) {
      Real e = std::exp(d[base + i * stride] - mx);
      out[base + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i * stride] /= total;
  }
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [count, len, stride, step](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const auto& y = *self.value;
                       for (std::size_t l = 0; l < count; ++l) {
                         const std::size_t base = l * step;
                         Real dot = 0;
                         for (std::size_t i = 0; i < len; ++i) {
                           const std::size_t k = base + i * stride;
                           dot += self.grad[k] * y[k];
                         }
                         for (std::size_t i = 0; i < len; ++i) {
                           const std::size_t k = base + i * stride;
                           g[k] += y[k] * (self.grad[k] - dot);
                         }
                       }
                     });
}

Tensor add_mask(const Tensor& x, const Tensor& mask) {
  require_same_shape(x, mask, "add_mask");
  auto dx = x.data(), dm = mask.data();
  std::vector<Real> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] + dm[i];
  return make_result("add_mask", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor causal_mask(std::size_t queries, std::size_t keys) {
  std::vector<Real> m(queries * keys, Real(0));
  for (std::size_t i = 0; i < queries; ++i)
    for (std::size_t j = i + 1; j < keys; ++j) m[i * keys + j] = kMaskValue;
  return Tensor::from({queries, keys}, std::move(m));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw ShapeError("layer_norm: gain/bias of size " + std::to_string(gain.size()) +
                     " for rows of width " + std::to_string(n));
  }
  auto d = x.data(), dg = gain.data(), db = bias.data();
  std::vector<Real> out(d.size());
  // Saved normalized values and inverse std per row for backward.
  std::vector<Real> xhat(d.size());
  std::vector<Real> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = d.data() + i * n;
    Real mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(n);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const Real h = (row[j] - mu) * is;
      xhat[i * n + j] = h;
      out[i * n + j] = h * dg[j] + db[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const auto& gval = *pg.value;
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * xhat[i * n + j];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          const Real inv_n = Real(1) / static_cast<Real>(n);
          for (std::size_t i = 0; i < m; ++i) {
            Real sum_dh = 0, sum_dh_h = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const Real dh = self.grad[i * n + j] * gval[j];
              sum_dh += dh;
              sum_dh_h += dh * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const Real dh = self.grad[i * n + j] * gval[j];
              g[i * n + j] +=
                  inv_std[i] * (dh - inv_n * sum_dh - xhat[i * n + j] * inv_n * sum_dh_h);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  auto d = x.data();
  std::vector<Real> out(d.size());
  const Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = d[i] * Real(0.5) * (Real(1) + std::erf(d[i] * inv_sqrt2));
  }
  return make_result("gelu", x.shape(), std::move(out), {x}, [inv_sqrt2](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    const auto& v = *p.value;
    const Real inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<Real>;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real cdf = Real(0.5) * (Real(1) + std::erf(v[i] * inv_sqrt2));
      const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * v[i] * v[i]);
      g[i] += self.grad[i] * (cdf + v[i] * pdf);
    }
  });
}

Tensor tanh(const Tensor& x) {
  auto d = x.data();
  std::vector<Real> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = std::tanh(d[i]);
  return make_result("tanh", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = *self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (Real(1) - y[i] * y[i]);
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  require_matrix(x, "mean");
  if (axis > 1) throw ShapeError("mean: axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  if ((axis == 0 ? m : n) == 0) throw ShapeError("mean over an empty axis");
  auto d = x.data();
  if (axis == 0) {
    std::vector<Real> out(n, Real(0));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += d[i * n + j];
    for (Real& v : out) v /= static_cast<Real>(m);
    return make_result("mean0", {1, n}, std::move(out), {x}, [m, n](Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      const Real inv = Real(1) / static_cast<Real>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
    });
  }
  std::vector<Real> out(m, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i] += d[i * n + j];
    out[i] /= static_cast<Real>(n);
  }
  return make_result("mean1", {m, 1}, std::move(out), {x}, [m, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const Real inv = Real(1) / static_cast<Real>(n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i] * inv;
  });
}

Tensor sum(const Tensor& x) {
  Real total = 0;
  for (Real v : x.data()) total += v;
  return make_result("sum", Shape{}, {total}, {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (Real& v : g) v += self.grad[0];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, Reduction reduction) {
  require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_string(logits.shape()) + " logits");
  }
  auto d = logits.data();
  std::vector<Real> probs(d.size());
  Real total = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const int t = targets[i];
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= n) {
      throw DataError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                      std::to_string(n) + ")");
    }
    const Real* row = d.data() + i * n;
    Real mx = *std::max_element(row, row + n);
    Real z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(row[j] - mx);
      z += probs[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    total += -(row[t] - mx - std::log(z));
    ++counted;
  }
  const Real norm =
      reduction == Reduction::Mean && counted > 0 ? Real(1) / static_cast<Real>(counted) : Real(1);
  std::vector<int> saved(targets.begin(), targets.end());
  return make_result("cross_entropy", Shape{}, {total * norm}, {logits},
                     [m, n, norm, saved = std::move(saved), probs = std::move(probs)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const Real scale_g = self.grad[0] * norm;
                       for (std::size_t i = 0; i < m; ++i) {
                         if (saved[i] == kIgnoreIndex) continue;
                         for (std::size_t j = 0; j < n; ++j)
                           g[i * n + j] += scale_g * probs[i * n + j];
                         g[i * n + static_cast<std::size_t>(saved[i])] -= scale_g;
                       }
                     });
}

Tensor segment_mean(const Tensor& x, std::span<const Segment> segments) {
  require_matrix(x, "segment_mean");
  const std::size_t n = x.cols();
  auto d = x.data();
  std::vector<Real> out(segments.size() * n, Real(0));
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment seg = segments[s];
    if (seg.length == 0 || seg.offset + seg.length > x.rows()) {
      throw ShapeError("segment_mean: invalid segment for " + shape_string(x.shape()));
    }
    for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i)
      for (std::size_t j = 0; j < n; ++j) out[s * n + j] += d[i * n + j];
    for (std::size_t j = 0; j < n; ++j) out[s * n + j] /= static_cast<Real>(seg.length);
  }
  std::vector<Segment> saved(segments.begin(), segments.end());
  return make_result("segment_mean", {segments.size(), n}, std::move(out), {x},
                     [n, saved = std::move(saved)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t s = 0; s < saved.size(); ++s) {
                         const Real inv = Real(1) / static_cast<Real>(saved[s].length);
                         for (std::size_t i = saved[s].offset;
                              i < saved[s].offset + saved[s].length; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             g[i * n + j] += self.grad[s * n + j] * inv;
                       }
                     });
}

Tensor segment_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const Segment> query_segments,
                         std::span<const Segment> key_segments, std::size_t n_head, bool causal,
                         Real scale) {
  require_matrix(q, "segment_attention");
  require_matrix(k, "segment_attention");
  require_matrix(v, "segment_attention");
  const std::size_t width = q.cols();
  if (k.cols() != width) {
    throw ShapeError("attention: query width and key width disagree, " + shape_string(q.shape()) +
                     " vs " + shape_string(k.shape()));
  }
  if (v.cols() != width || v.rows() != k.rows()) {
    throw ShapeError("attention: values " + shape_string(v.shape()) + " do not match keys " +
                     shape_string(k.shape()));
  }
  if (n_head == 0 || width % n_head != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible into " +
                     std::to_string(n_head) + " heads");
  }
  if (query_segments.size() != key_segments.size()) {
    throw ShapeError("attention: query and key segment counts differ");
  }
  const std::size_t dk = width / n_head;
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(width));
  const Real* qd = q.data().data();
  const Real* kd = k.data().data();
  const Real* vd = v.data().data();
  std::vector<Real> out(q.rows() * width, Real(0));

  // Attention probabilities per (segment, head), stored back to back.
  std::vector<std::size_t> prob_offset(query_segments.size() + 1, 0);
  for (std::size_t s = 0; s < query_segments.size(); ++s) {
    const Segment qs = query_segments[s], ks = key_segments[s];
    if (qs.offset + qs.length > q.rows() || ks.offset + ks.length > k.rows()) {
      throw ShapeError("attention: segment out of range");
    }
    if (qs.length > 0 && ks.length == 0) throw ShapeError("attention: empty key segment");
    if (causal && qs.length != ks.length) {
      throw ShapeError("attention: causal segments need equal query and key lengths");
    }
    prob_offset[s + 1] = prob_offset[s] + n_head * qs.length * ks.length;
  }
  auto probs = std::make_shared<std::vector<Real>>(prob_offset.back());

  for (std::size_t s = 0; s < query_segments.size(); ++s) {
    const Segment qs = query_segments[s], ks = key_segments[s];
    if (qs.length == 0) continue;
    const auto lq = static_cast<Eigen::Index>(qs.length);
    const auto lk = static_cast<Eigen::Index>(ks.length);
    for (std::size_t h = 0; h < n_head; ++h) {
      ConstStridedMap qh(qd + qs.offset * width + h * dk, lq, static_cast<Eigen::Index>(dk), stride);
      ConstStridedMap kh(kd + ks.offset * width + h * dk, lk, static_cast<Eigen::Index>(dk), stride);
      ConstStridedMap vh(vd + ks.offset * width + h * dk, lk, static_cast<Eigen::Index>(dk), stride);
      MatMap p(probs->data() + prob_offset[s] + h * qs.length * ks.length, lq, lk);
      p.noalias() = (qh * kh.transpose()) * scale;
      for (Eigen::Index i = 0; i < lq; ++i) {
        const Eigen::Index visible = causal ? i + 1 : lk;
        Real mx = p.row(i).head(visible).maxCoeff();
        Real total = 0;
        for (Eigen::Index j = 0; j < visible; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          total += p(i, j);
        }
        for (Eigen::Index j = 0; j < visible; ++j) p(i, j) /= total;
        for (Eigen::Index j = visible; j < lk; ++j) p(i, j) = 0;
      }
      StridedMap oh(out.data() + qs.offset * width + h * dk, lq, static_cast<Eigen::Index>(dk),
                    stride);
      oh.noalias() = p * vh;
    }
  }

  std::vector<Segment> qsegs(query_segments.begin(), query_segments.end());
  std::vector<Segment> ksegs(key_segments.begin(), key_segments.end());
  return make_result(
      "segment_attention", q.shape(), std::move(out), {q, k, v},
      [=, qsegs = std::move(qsegs), ksegs = std::move(ksegs),
       prob_offset = std::move(prob_offset)](Node& self) {
        Node& pq = *self.parents[0];
        Node& pk = *self.parents[1];
        Node& pv = *self.parents[2];
        const Real* qv = pq.value->data();
        const Real* kv = pk.value->data();
        const Real* vv = pv.value->data();
        // q, k and v may alias the same node (self-attention on shared input).
        Real* gq = pq.requires_grad ? pq.ensure_grad().data() : nullptr;
        Real* gk = pk.requires_grad ? pk.ensure_grad().data() : nullptr;
        Real* gv = pv.requires_grad ? pv.ensure_grad().data() : nullptr;
        RowMatrix dp, ds;
        for (std::size_t s = 0; s < qsegs.size(); ++s) {
          const Segment qs = qsegs[s], ks = ksegs[s];
          if (qs.length == 0) continue;
          const auto lq = static_cast<Eigen::Index>(qs.length);
          const auto lk = static_cast<Eigen::Index>(ks.length);
          const auto d = static_cast<Eigen::Index>(dk);
          for (std::size_t h = 0; h < n_head; ++h) {
            ConstMatMap p(probs->data() + prob_offset[s] + h * qs.length * ks.length, lq, lk);
            ConstStridedMap dout(self.grad.data() + qs.offset * width + h * dk, lq, d, stride);
            ConstStridedMap qh(qv + qs.offset * width + h * dk, lq, d, stride);
            ConstStridedMap kh(kv + ks.offset * width + h * dk, lk, d, stride);
            ConstStridedMap vh(vv + ks.offset * width + h * dk, lk, d, stride);
            if (gv) {
              StridedMap(gv + ks.offset * width + h * dk, lk, d, stride).noalias() +=
                  p.transpose() * dout;
            }
            if (!gq && !gk) continue;
            dp.noalias() = dout * vh.transpose();
            ds.resize(lq, lk);
            for (Eigen::Index i = 0; i < lq; ++i) {
              const Real dot = p.row(i).dot(dp.row(i));
              for (Eigen::Index j = 0; j < lk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
            }
            if (gq) {
              StridedMap(gq + qs.offset * width + h * dk, lq, d, stride).noalias() += ds * kh;
            }
            if (gk) {
              StridedMap(gk + ks.offset * width + h * dk, lk, d, stride).noalias() +=
                  ds.transpose() * qh;
            }
          }
        }
      });
}

}  // namespace dgn
