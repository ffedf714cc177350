#include "infodesign/grad/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace infodesign::grad {

double relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradientReport grad_check(const ScalarFunction& f, const Tensor& point, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check epsilon must be positive");

  GradientReport report;
  {
    Tape tape;
    Var x = tape.parameter(point);
    Var out = f(tape, x);
    tape.backward(out);
    const Tensor g = tape.gradient(x);
    report.analytic_gradient = g.values();
  }

  auto evaluate = [&](const Tensor& at) {
    Tape tape;
    Var x = tape.constant(at);
    return f(tape, x).value().item();
  };

  report.numeric_gradient.resize(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor plus = point;
    Tensor minus = point;
    plus[i] += epsilon;
    minus[i] -= epsilon;
    const double numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * epsilon);
    report.numeric_gradient[i] = numeric;
    const double err = relative_error(report.analytic_gradient[i], numeric);
    if (i == 0 || err > report.max_rel_error || std::isnan(err)) {
      report.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
      report.worst_index = i;
      report.analytic = report.analytic_gradient[i];
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace infodesign::grad
