#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "infodesign/grad/tape.hpp"

namespace infodesign::grad {

struct GradientReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::vector<double> analytic_gradient;
  std::vector<double> numeric_gradient;
};

// Builds a scalar output on `tape` from the leaf `x`.
using ScalarFunction = std::function<Var(Tape& tape, Var x)>;

// Relative error used throughout: |a - n| / max(1e-8, |a| + |n|).
double relative_error(double analytic, double numeric) noexcept;

// Compares reverse-mode gradients of f at `point` against central
// differences with step `epsilon`, coordinate by coordinate.
GradientReport grad_check(const ScalarFunction& f, const Tensor& point, double epsilon = 1e-5);

}  // namespace infodesign::grad
