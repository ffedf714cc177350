#include "infodesign/grad/tensor.hpp"

#include <cmath>

namespace infodesign::grad {

bool Tensor::all_finite() const noexcept {
  // x * 0 is NaN exactly when x is NaN or infinite; the sum vectorizes.
  double probe = 0.0;
  for (double v : data_) probe += v * 0.0;
  return probe == 0.0;
}

std::string shape_string(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + ", " + std::to_string(t.cols()) + ")";
}

}  // namespace infodesign::grad
