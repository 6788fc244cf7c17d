#include "dgn/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace dgn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << " x ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

std::vector<Real>& Node::ensure_grad() {
  if (grad.size() != value->size()) grad.assign(value->size(), Real(0));
  return grad;
}

}  // namespace detail

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<Real>>(std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from(Shape{}, std::vector<Real>{value}, requires_grad);
}

Tensor Tensor::alias(Shape shape, std::shared_ptr<std::vector<Real>> storage,
                     bool requires_grad) {
  if (!storage || shape_numel(shape) != storage->size()) {
    throw ShapeError("aliased storage does not match shape " + shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(storage);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->value->size() : 0; }

std::size_t Tensor::rows() const { return rank() == 2 ? shape()[0] : 1; }

std::size_t Tensor::cols() const { return rank() == 0 ? 1 : shape().back(); }

std::span<const Real> Tensor::data() const {
  if (!node_) throw Error("use of undefined tensor");
  return {node_->value->data(), node_->value->size()};
}

std::span<Real> Tensor::mutable_data() {
  if (!node_) throw Error("use of undefined tensor");
  if (!node_->is_leaf()) throw Error("mutable_data() on non-leaf tensor");
  return {node_->value->data(), node_->value->size()};
}

Real Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return (*node_->value)[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  std::size_t c = cols();
  if (row >= rows() || col >= c) throw ShapeError("index out of range");
  return (*node_->value)[row * c + col];
}

std::vector<Real> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && node_->is_leaf(); }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
  if (!node_) return {};
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape();
  node->value = std::make_shared<std::vector<Real>>(*node_->value);
  return Tensor(std::move(node));
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

void Tensor::backward() const {
  if (!node_) throw Error("backward() on undefined tensor");
  if (size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->value->size(), Real(0));
  }
  node_->ensure_grad()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
  // Interior gradients are not needed after propagation.
  for (detail::Node* node : order) {
    if (!node->is_leaf() && node != node_.get()) std::vector<Real>().swap(node->grad);
  }
}

}  // namespace dgn
