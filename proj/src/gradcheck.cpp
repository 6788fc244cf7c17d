#include "dgn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dgn/ops.hpp"

namespace dgn::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double roundoff_floor(double objective, double step, double tol) {
  const double eps = std::numeric_limits<Real>::epsilon();
  return std::max(kMinScale, eps * std::max(1.0, std::abs(objective)) / (step * tol));
}

namespace {

void record(Result& r, double analytic, double numeric) {
  r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric, r.floor));
  r.max_raw_rel_error = std::max(r.max_raw_rel_error, relative_error(analytic, numeric));
  r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic - numeric));
  ++r.coordinates;
}

}  // namespace

Result check_inputs(std::string name, std::vector<Tensor> inputs,
                    const std::function<Tensor(std::span<const Tensor>)>& f, double step,
                    std::uint64_t seed) {
  Tensor probe = f(inputs);
  Rng rng(seed);
  std::vector<Real> w(probe.size());
  for (Real& x : w) x = static_cast<Real>(rng.uniform(-1.0, 1.0));
  const Tensor weights = Tensor::from(probe.shape(), w);
  auto objective = [&]() { return sum(mul(f(inputs), weights)); };

  for (Tensor& t : inputs) t.zero_grad();
  const Tensor value = objective();
  value.backward();

  Result result{std::move(name)};
  result.floor = roundoff_floor(value.item(), step);
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<Real> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.size(), Real(0));
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real original = values[i];
      values[i] = original + static_cast<Real>(step);
      const double plus = objective().item();
      values[i] = original - static_cast<Real>(step);
      const double minus = objective().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2 * step);
      record(result, analytic[i], numeric);
    }
  }
  return result;
}

Result check_parameters(std::string name, ParameterStore& store,
                        const std::function<Tensor(Session&)>& loss, std::size_t max_coords,
                        std::uint64_t seed, double step) {
  GradBuffer analytic = store.zero_grads();
  double value = 0;
  {
    Session s(store);
    Tensor l = loss(s);
    value = l.item();
    l.backward();
    s.accumulate_into(analytic);
  }
  auto evaluate = [&]() {
    Session s(store, false);
    return static_cast<double>(loss(s).item());
  };

  Rng rng(seed);
  Result result{std::move(name)};
  result.floor = roundoff_floor(value, step);
  for (std::size_t p = 0; p < store.size(); ++p) {
    Parameter& param = store[p];
    if (param.frozen) continue;
    std::vector<std::size_t> coords(param.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
      rng.shuffle(coords);
      coords.resize(max_coords);
    }
    auto& values = *param.value;
    for (std::size_t i : coords) {
      const Real original = values[i];
      values[i] = original + static_cast<Real>(step);
      const double plus = evaluate();
      values[i] = original - static_cast<Real>(step);
      const double minus = evaluate();
      values[i] = original;
      const double numeric = (plus - minus) / (2 * step);
      record(result, analytic[p][i], numeric);
    }
  }
  return result;
}

}  // namespace dgn::gradcheck
