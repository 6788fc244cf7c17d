#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dgn/errors.hpp"

namespace dgn {

#ifdef DGN_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One vertex of the computation graph. Leaves have no backward function.
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<Real>> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<Real>& ensure_grad();
};

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode differentiation.
///
/// Copies share the underlying node. Operations build a dynamic graph only
/// when at least one input requires a gradient; otherwise the result is a
/// plain constant.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  /// Leaf that aliases `storage` (used to bind parameters without copying).
  static Tensor alias(Shape shape, std::shared_ptr<std::vector<Real>> storage, bool requires_grad);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Rows of the matrix view: shape[0] for rank 2, 1 otherwise.
  std::size_t rows() const;
  /// Last dimension (1 for scalars).
  std::size_t cols() const;

  std::span<const Real> data() const;
  /// Mutable access to a leaf's values. Throws for interior nodes.
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::size_t row, std::size_t col) const;
  std::vector<Real> to_vector() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();

  /// Populates gradients of every reachable leaf that requires one.
  /// Leaf gradients accumulate across calls until zero_grad().
  void backward() const;

  /// Same values, no graph attachment.
  Tensor detach() const;
  const char* op_name() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

}  // namespace dgn
