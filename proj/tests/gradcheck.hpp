#pragma once

// Central finite-difference oracle for tape gradients. Test-only: it only
// evaluates the forward pass and never looks at the backward kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hcn/tape.hpp"

namespace hcn::testing {

using Forward = std::function<Var(GradTape<double>&, const std::vector<Var>&)>;

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline double forward_value(const Forward& f, const std::vector<TensorD>& inputs) {
  GradTape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return tape.value(f(tape, vars))[0];
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares analytic gradients of every input against central differences.
// Relative error per element is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult grad_check(const Forward& f, std::vector<TensorD> inputs, double eps = 1e-5,
                                  double floor = 1e-6) {
  GradTape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.parameter(t));
  Var loss = f(tape, vars);
  tape.backward(loss);

  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const TensorD analytic = tape.gradient(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + eps;
      const double up = forward_value(f, inputs);
      inputs[k][i] = orig - eps;
      const double down = forward_value(f, inputs);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++r.checked;
    }
  }
  return r;
}

// Random projection so the scalar loss does not cancel symmetric errors. The
// weights depend only on `seed`, so every forward evaluation sees the same ones.
inline Var project(GradTape<double>& tape, Var v, unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  return tape.weighted_sum(v, random_tensor(tape.value(v).shape(), rng));
}

}  // namespace hcn::testing
