#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dgn/parameters.hpp"

namespace dgn::gradcheck {

/// Step used for central differences unless stated otherwise.
inline constexpr double kStep = 1e-5;
/// Gradient fidelity threshold on the relative error.
inline constexpr double kTolerance = 1e-4;

/// Smallest denominator of the relative error.
inline constexpr double kMinScale = 1e-6;

struct Result {
  std::string name;
  // Relative error with the round-off aware floor, see roundoff_floor().
  double max_rel_error = 0;
  std::size_t coordinates = 0;
  // Same errors with the fixed kMinScale floor only.
  double max_raw_rel_error = 0;
  double max_abs_error = 0;
  double floor = kMinScale;

  bool passed(double tol = kTolerance) const { return max_rel_error < tol; }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is zero from dividing round-off by round-off.
double relative_error(double analytic, double numeric, double floor = kMinScale);

/// A central difference of an objective of size |f| carries round-off of
/// about eps·|f|/step, so gradients below eps·|f|/(step·tolerance) cannot be
/// resolved to the tolerance. Returns that bound, at least kMinScale.
double roundoff_floor(double objective, double step, double tol = kTolerance);

/// Checks d(sum(f(inputs) ⊙ W))/d(inputs) for a fixed random weighting W.
/// Every coordinate of every input that requires a gradient is checked.
Result check_inputs(std::string name, std::vector<Tensor> inputs,
                    const std::function<Tensor(std::span<const Tensor>)>& f, double step = kStep,
                    std::uint64_t seed = 1);

/// Checks a scalar loss against every non-frozen parameter, sampling at most
/// `max_coords` coordinates per parameter.
Result check_parameters(std::string name, ParameterStore& store,
                        const std::function<Tensor(Session&)>& loss, std::size_t max_coords,
                        std::uint64_t seed = 1, double step = kStep);

/// Finite-difference sweep over every differentiable op, attention and
/// transformer blocks, the grid image encoder, and full DGN (both fusion
/// modes) and baseline losses at H=16 on a batch of two 2-phase recipes.
std::vector<Result> run_suite(std::uint64_t seed = 42);

}  // namespace dgn::gradcheck
