#pragma once

#include <array>
#include <span>
#include <vector>

#include "infodesign/grad/tape.hpp"

namespace infodesign::flow {

inline constexpr int kMaxBins = 16;

// Monotone rational-quadratic spline on [-B, B] with linear (identity) tails.
// Raw conditioner outputs per coordinate are laid out as
// [K width logits | K height logits | K+1 derivative pre-activations].
struct SplineSettings {
  int bins = 4;
  double tail_bound = 5.0;
  double min_bin_width = 1e-3;
  double min_bin_height = 1e-3;
  double min_derivative = 1e-3;

  int raw_size() const noexcept { return 3 * bins + 1; }
  void validate() const;
};

// Normalized spline parameters for one coordinate.
struct SplineSegmentParams {
  std::vector<double> bin_widths;        // K, sum 2B
  std::vector<double> bin_heights;       // K, sum 2B
  std::vector<double> knot_derivatives;  // K + 1
  double tail_bound = 5.0;
};

SplineSegmentParams normalize_spline_params(std::span<const double> raw, const SplineSettings& settings);

struct SplineValue {
  double value = 0.0;
  double log_det = 0.0;
};

SplineValue rq_spline_forward(double x, const SplineSegmentParams& params);
SplineValue rq_spline_inverse(double y, const SplineSegmentParams& params);

// Coordinate-wise transforms; log_det is summed over coordinates.
struct SplineVectorResult {
  std::vector<double> values;
  double log_det = 0.0;
};
SplineVectorResult rq_spline_forward(std::span<const double> u, std::span<const SplineSegmentParams> params);
SplineVectorResult rq_spline_inverse(std::span<const double> y, std::span<const SplineSegmentParams> params);

// Raw-parameter kernels used by the tape op. `raw` has settings.raw_size()
// entries.
SplineValue rq_spline_forward_raw(double x, const double* raw, const SplineSettings& settings);
SplineValue rq_spline_inverse_raw(double y, const double* raw, const SplineSettings& settings);

// Vector-Jacobian product of the forward map at x: given upstream grads
// (grad_value, grad_log_det) accumulates into grad_x and grad_raw.
void rq_spline_forward_vjp(double x, const double* raw, const SplineSettings& settings, double grad_value,
                           double grad_log_det, double& grad_x, double* grad_raw);
// Same for the inverse map evaluated at y.
void rq_spline_inverse_vjp(double y, const double* raw, const SplineSettings& settings, double grad_value,
                           double grad_log_det, double& grad_y, double* grad_raw);

enum class SplineDirection { Forward, Inverse };

// Tape op: x is (rows x D), raw is (rows x D * raw_size). The result is
// (rows x 2D): transformed values in the first D columns, per-coordinate
// log|dy/dx| (or log|dx/dy| for the inverse) in the last D.
grad::Var rq_spline(grad::Var x, grad::Var raw, const SplineSettings& settings, SplineDirection direction);

}  // namespace infodesign::flow
