#include "dgn/parameters.hpp"

#include <cmath>

#include "dgn/ops.hpp"

namespace dgn {

Parameter& ParameterStore::add(std::string name, Shape shape, std::vector<Real> values) {
  if (by_name_.contains(name)) throw DataError("duplicate parameter name '" + name + "'");
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("parameter '" + name + "' shape " + shape_string(shape) +
                     " does not match its values");
  }
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->shape = std::move(shape);
  p->value = std::make_shared<std::vector<Real>>(std::move(values));
  p->index = params_.size();
  by_name_.emplace(p->name, p->index);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::zeros(std::string name, Shape shape) {
  return constant(std::move(name), std::move(shape), Real(0));
}

Parameter& ParameterStore::constant(std::string name, Shape shape, Real value) {
  std::size_t n = shape_numel(shape);
  return add(std::move(name), std::move(shape), std::vector<Real>(n, value));
}

Parameter& ParameterStore::normal(std::string name, Shape shape, Real stddev, Rng& rng) {
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = static_cast<Real>(rng.normal(0.0, stddev));
  return add(std::move(name), std::move(shape), std::move(v));
}

Parameter& ParameterStore::xavier(std::string name, Shape shape, Rng& rng) {
  const double fan_in = static_cast<double>(shape.empty() ? 1 : shape[0]);
  const double fan_out = static_cast<double>(shape.size() < 2 ? 1 : shape[1]);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = static_cast<Real>(rng.uniform(-limit, limit));
  return add(std::move(name), std::move(shape), std::move(v));
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

GradBuffer ParameterStore::zero_grads() const {
  GradBuffer g(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) g[i].assign(params_[i]->size(), Real(0));
  return g;
}

void ParameterStore::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& p : params_) {
    if (p->name.starts_with(prefix)) p->frozen = frozen;
  }
}

Session::Session(const ParameterStore& store, bool track_grads)
    : store_(&store), track_grads_(track_grads), bound_(store.size()) {}

Tensor Session::operator()(const Parameter& p) {
  if (p.index >= bound_.size() || &(*store_)[p.index] != &p) {
    throw Error("parameter '" + p.name + "' does not belong to this session's store");
  }
  Tensor& t = bound_[p.index];
  if (!t.defined()) t = Tensor::alias(p.shape, p.value, track_grads_ && !p.frozen);
  return t;
}

void Session::enable_dropout(double rate, Rng& rng) {
  if (!(rate >= 0 && rate < 1)) throw DataError("dropout rate must lie in [0, 1)");
  dropout_rate_ = rate;
  dropout_rng_ = &rng;
}

Tensor Session::dropout(const Tensor& x) {
  if (dropout_rate_ == 0 || !dropout_rng_) return x;
  const Real keep = static_cast<Real>(1.0 / (1.0 - dropout_rate_));
  std::vector<Real> mask(x.size());
  for (Real& m : mask) m = dropout_rng_->uniform() < dropout_rate_ ? Real(0) : keep;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

void Session::accumulate_into(GradBuffer& out) const {
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    const Tensor& t = bound_[i];
    if (!t.defined() || !t.has_grad()) continue;
    auto g = t.grad();
    auto& dst = out[i];
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  }
}

}  // namespace dgn
