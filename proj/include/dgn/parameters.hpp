#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgn/rng.hpp"
#include "dgn/tensor.hpp"

namespace dgn {

/// A named trainable array. Values live in shared storage so that graph
/// leaves can alias them without copying.
struct Parameter {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<Real>> value;
  std::size_t index = 0;
  bool frozen = false;

  std::size_t size() const { return value->size(); }
};

/// Per-parameter gradient buffers, aligned with ParameterStore indices.
using GradBuffer = std::vector<std::vector<Real>>;

/// Owns every parameter of a model, in creation order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Shape shape, std::vector<Real> values);
  Parameter& zeros(std::string name, Shape shape);
  Parameter& constant(std::string name, Shape shape, Real value);
  Parameter& normal(std::string name, Shape shape, Real stddev, Rng& rng);
  /// Glorot-uniform over the first two dimensions.
  Parameter& xavier(std::string name, Shape shape, Rng& rng);

  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  GradBuffer zero_grads() const;
  /// Sets `frozen` on every parameter whose name starts with `prefix`.
  void set_frozen(const std::string& prefix, bool frozen);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

/// Binds parameters to graph leaves for one forward/backward pass.
///
/// Each parameter maps to a single leaf per session, so repeated uses inside
/// one forward pass accumulate into the same gradient. Sessions are cheap and
/// not thread-safe; use one per worker.
class Session {
 public:
  explicit Session(const ParameterStore& store, bool track_grads = true);

  Tensor operator()(const Parameter& p);
  bool tracking() const { return track_grads_; }
  /// Turns on inverted dropout for this session; `rng` must outlive it.
  void enable_dropout(double rate, Rng& rng);
  /// Zeroes entries with the session's dropout rate and rescales the rest.
  /// Identity when dropout is off.
  Tensor dropout(const Tensor& x);
  /// Adds every bound leaf's gradient into `out`.
  void accumulate_into(GradBuffer& out) const;

 private:
  const ParameterStore* store_;
  bool track_grads_;
  std::vector<Tensor> bound_;
  double dropout_rate_ = 0;
  Rng* dropout_rng_ = nullptr;
};

}  // namespace dgn
