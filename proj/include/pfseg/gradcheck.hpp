#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pfseg/autograd.hpp"

namespace pfseg {

/// Worst coordinate of a finite-difference check.
struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// A scalar-valued function of several tape variables.
using MultiFunction = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

/// Compares tape gradients against central differences for every coordinate of
/// every input. Relative error uses max(|a|, |b|, 1e-8) as denominator.
inline GradCheckResult grad_check(const MultiFunction& f, std::vector<Tensor<double>> inputs, double epsilon = 1e-5) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw std::invalid_argument("grad_check: epsilon must lie in (0, 1e-2]");

  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).value().item();
  };

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    Var<double> out = f(tape, vars);
    tape.backward(out);
    for (auto v : vars) {
      const Tensor<double>* g = tape.grad(v);
      analytic.push_back(g ? *g : Tensor<double>(v.shape(), 0.0));
    }
  }

  GradCheckResult worst;
  bool first = true;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + epsilon;
      const double fp = evaluate(inputs);
      inputs[k][i] = orig - epsilon;
      const double fm = evaluate(inputs);
      inputs[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (first || rel > worst.max_relative_error) {
        worst = {rel, k, i, a, numeric};
        first = false;
      }
    }
  }
  return worst;
}

/// Single-input form.
inline GradCheckResult grad_check(const std::function<Var<double>(Var<double>)>& f, const Tensor<double>& input,
                                  double epsilon = 1e-5) {
  return grad_check([&f](Tape<double>&, std::span<const Var<double>> v) { return f(v[0]); }, {input}, epsilon);
}

}  // namespace pfseg
