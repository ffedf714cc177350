#include "infodesign/flow/rq_spline.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace infodesign::flow {
namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Offset that makes a zero pre-activation map to derivative exactly one.
double derivative_offset(double min_derivative) {
  thread_local double cached_min = -1.0;
  thread_local double cached_offset = 0.0;
  if (min_derivative != cached_min) {
    cached_min = min_derivative;
    cached_offset = std::log(std::expm1(1.0 - min_derivative));
  }
  return cached_offset;
}

struct Knots {
  int bins = 0;
  double bound = 0.0;
  std::array<double, kMaxBins> soft_w{};
  std::array<double, kMaxBins> soft_h{};
  std::array<double, kMaxBins> width{};
  std::array<double, kMaxBins> height{};
  std::array<double, kMaxBins + 1> x{};
  std::array<double, kMaxBins + 1> y{};
  std::array<double, kMaxBins + 1> deriv{};
  std::array<double, kMaxBins + 1> deriv_gate{};  // d deriv / d raw
};

void softmax(const double* logits, int n, double* out) {
  double m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= s;
}

void make_knots(const double* raw, const SplineSettings& s, Knots& k) {
  const int n = s.bins;
  const double span = 2.0 * s.tail_bound;
  k.bins = n;
  k.bound = s.tail_bound;
  softmax(raw, n, k.soft_w.data());
  softmax(raw + n, n, k.soft_h.data());
  const double wscale = 1.0 - s.min_bin_width * n;
  const double hscale = 1.0 - s.min_bin_height * n;
  k.x[0] = -s.tail_bound;
  k.y[0] = -s.tail_bound;
  for (int j = 0; j < n; ++j) {
    k.width[j] = span * (s.min_bin_width + wscale * k.soft_w[j]);
    k.height[j] = span * (s.min_bin_height + hscale * k.soft_h[j]);
    k.x[j + 1] = k.x[j] + k.width[j];
    k.y[j + 1] = k.y[j] + k.height[j];
  }
  k.x[n] = s.tail_bound;
  k.y[n] = s.tail_bound;
  const double offset = derivative_offset(s.min_derivative);
  for (int j = 0; j <= n; ++j) {
    const double pre = raw[2 * n + j] + offset;
    k.deriv[j] = s.min_derivative + softplus(pre);
    k.deriv_gate[j] = sigmoid(pre);
  }
}

int find_bin(const std::array<double, kMaxBins + 1>& knots, int bins, double v) {
  int b = 0;
  while (b + 1 < bins && v >= knots[b + 1]) ++b;
  return b;
}

struct Segment {
  double xi, s, t, den, num, g;
};

Segment segment_at(const Knots& k, int b, double x) {
  Segment seg;
  seg.xi = (x - k.x[b]) / k.width[b];
  seg.s = k.height[b] / k.width[b];
  seg.t = seg.xi * (1.0 - seg.xi);
  const double d0 = k.deriv[b];
  const double d1 = k.deriv[b + 1];
  seg.den = seg.s + (d1 + d0 - 2.0 * seg.s) * seg.t;
  seg.num = k.height[b] * (seg.s * seg.xi * seg.xi + d0 * seg.t);
  seg.g = d1 * seg.xi * seg.xi + 2.0 * seg.s * seg.t + d0 * (1.0 - seg.xi) * (1.0 - seg.xi);
  return seg;
}

SplineValue forward_with_knots(const Knots& k, double x) {
  if (x < -k.bound || x > k.bound) return {x, 0.0};
  const int b = find_bin(k.x, k.bins, x);
  const Segment seg = segment_at(k, b, x);
  const double value = k.y[b] + seg.num / seg.den;
  const double log_det = 2.0 * std::log(seg.s) + std::log(seg.g) - 2.0 * std::log(seg.den);
  return {value, log_det};
}

double inverse_position(const Knots& k, int b, double y) {
  const double s = k.height[b] / k.width[b];
  const double d0 = k.deriv[b];
  const double d1 = k.deriv[b + 1];
  const double dy = y - k.y[b];
  const double c2 = d1 + d0 - 2.0 * s;
  const double qa = k.height[b] * (s - d0) + dy * c2;
  const double qb = k.height[b] * d0 - dy * c2;
  const double qc = -s * dy;
  const double disc = std::max(0.0, qb * qb - 4.0 * qa * qc);
  const double xi = (2.0 * qc) / (-qb - std::sqrt(disc));
  return k.x[b] + std::clamp(xi, 0.0, 1.0) * k.width[b];
}

// Forward-map partials at x inside the tails. Accumulates
// grad_value * d(value)/d(raw) + grad_log_det * d(log_det)/d(raw) into
// grad_raw and returns the same combination for x. Optionally reports
// d(value)/dx and d(log_det)/dx.
double forward_vjp_with_knots(const Knots& k, const SplineSettings& s, const double* raw, double x, double gy,
                              double gl, double* grad_raw, double* value_dx, double* logdet_dx) {
  (void)raw;
  const int n = k.bins;
  const int b = find_bin(k.x, n, x);
  const Segment seg = segment_at(k, b, x);
  const double xi = seg.xi;
  const double sl = seg.s;
  const double t = seg.t;
  const double den = seg.den;
  const double num = seg.num;
  const double g = seg.g;
  const double hk = k.height[b];
  const double wk = k.width[b];
  const double d0 = k.deriv[b];
  const double d1 = k.deriv[b + 1];
  const double c2 = d1 + d0 - 2.0 * sl;
  const double den2 = den * den;

  const double dnum_dxi = hk * (2.0 * sl * xi + d0 * (1.0 - 2.0 * xi));
  const double dden_dxi = c2 * (1.0 - 2.0 * xi);
  const double dq_dxi = (dnum_dxi * den - num * dden_dxi) / den2;
  const double dl_dxi =
      (2.0 * d1 * xi + 2.0 * sl * (1.0 - 2.0 * xi) - 2.0 * d0 * (1.0 - xi)) / g - 2.0 * dden_dxi / den;

  const double dq_ds = (hk * xi * xi * den - num * (1.0 - 2.0 * t)) / den2;
  const double dl_ds = 2.0 / sl + 2.0 * t / g - 2.0 * (1.0 - 2.0 * t) / den;
  const double dq_dd0 = t * (hk * den - num) / den2;
  const double dl_dd0 = (1.0 - xi) * (1.0 - xi) / g - 2.0 * t / den;
  const double dq_dd1 = -num * t / den2;
  const double dl_dd1 = xi * xi / g - 2.0 * t / den;
  const double dq_dhk = (sl * xi * xi + d0 * t) / den;

  if (value_dx) *value_dx = sl * sl * g / den2;
  if (logdet_dx) *logdet_dx = dl_dxi / wk;

  const double g_xi = gy * dq_dxi + gl * dl_dxi;
  const double g_s = gy * dq_ds + gl * dl_ds;
  const double g_d0 = gy * dq_dd0 + gl * dl_dd0;
  const double g_d1 = gy * dq_dd1 + gl * dl_dd1;
  const double g_hk = gy * dq_dhk + g_s / wk;
  const double g_wk = -g_xi * xi / wk - g_s * sl / wk;
  const double g_xk = -g_xi / wk;
  const double g_yk = gy;
  const double g_x = g_xi / wk;

  if (grad_raw) {
    std::array<double, kMaxBins> gw{};
    std::array<double, kMaxBins> gh{};
    for (int j = 0; j < b; ++j) {
      gw[j] += g_xk;
      gh[j] += g_yk;
    }
    gw[b] += g_wk;
    gh[b] += g_hk;
    const double span = 2.0 * s.tail_bound;
    const double wscale = span * (1.0 - s.min_bin_width * n);
    const double hscale = span * (1.0 - s.min_bin_height * n);
    double dot_w = 0.0;
    double dot_h = 0.0;
    for (int j = 0; j < n; ++j) {
      dot_w += k.soft_w[j] * gw[j] * wscale;
      dot_h += k.soft_h[j] * gh[j] * hscale;
    }
    for (int j = 0; j < n; ++j) {
      grad_raw[j] += k.soft_w[j] * (gw[j] * wscale - dot_w);
      grad_raw[n + j] += k.soft_h[j] * (gh[j] * hscale - dot_h);
    }
    grad_raw[2 * n + b] += g_d0 * k.deriv_gate[b];
    grad_raw[2 * n + b + 1] += g_d1 * k.deriv_gate[b + 1];
  }
  return g_x;
}

class RQSplineOp final : public grad::CustomOp {
 public:
  RQSplineOp(SplineSettings settings, SplineDirection direction) : settings_(settings), direction_(direction) {}

  const char* name() const noexcept override {
    return direction_ == SplineDirection::Forward ? "rq_spline_forward" : "rq_spline_inverse";
  }

  grad::Tensor forward(std::span<const grad::Tensor* const> inputs) const override {
    const grad::Tensor& x = *inputs[0];
    const grad::Tensor& raw = *inputs[1];
    const std::size_t dims = x.cols();
    const std::size_t stride = static_cast<std::size_t>(settings_.raw_size());
    grad::Tensor out(x.rows(), 2 * dims);
    Knots k;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t d = 0; d < dims; ++d) {
        const double* p = raw.data().data() + r * raw.cols() + d * stride;
        make_knots(p, settings_, k);
        const double v = x(r, d);
        SplineValue res;
        if (direction_ == SplineDirection::Forward) {
          res = forward_with_knots(k, v);
        } else if (v < -k.bound || v > k.bound) {
          res = {v, 0.0};
        } else {
          const double xv = inverse_position(k, find_bin(k.y, k.bins, v), v);
          res = {xv, -forward_with_knots(k, xv).log_det};
        }
        out(r, d) = res.value;
        out(r, dims + d) = res.log_det;
      }
    }
    return out;
  }

  void backward(std::span<const grad::Tensor* const> inputs, const grad::Tensor& output,
                const grad::Tensor& grad_output, std::span<grad::Tensor* const> grad_inputs) const override {
    const grad::Tensor& x = *inputs[0];
    const grad::Tensor& raw = *inputs[1];
    grad::Tensor* gx = grad_inputs[0];
    grad::Tensor* graw = grad_inputs[1];
    const std::size_t dims = x.cols();
    const std::size_t stride = static_cast<std::size_t>(settings_.raw_size());
    Knots k;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t d = 0; d < dims; ++d) {
        const double gv = grad_output(r, d);
        const double gl = grad_output(r, dims + d);
        if (gv == 0.0 && gl == 0.0) continue;
        const double v = x(r, d);
        const double* p = raw.data().data() + r * raw.cols() + d * stride;
        double* gp = graw ? &(*graw)(r, d * stride) : nullptr;
        make_knots(p, settings_, k);
        if (v < -k.bound || v > k.bound) {
          if (gx) (*gx)(r, d) += gv;
          continue;
        }
        if (direction_ == SplineDirection::Forward) {
          const double g = forward_vjp_with_knots(k, settings_, p, v, gv, gl, gp, nullptr, nullptr);
          if (gx) (*gx)(r, d) += g;
        } else {
          const double xv = output(r, d);
          double fx = 0.0;
          double lx = 0.0;
          forward_vjp_with_knots(k, settings_, p, xv, 0.0, 0.0, nullptr, &fx, &lx);
          const double alpha = (gv - gl * lx) / fx;
          if (gx) (*gx)(r, d) += alpha;
          if (gp) forward_vjp_with_knots(k, settings_, p, xv, -alpha, -gl, gp, nullptr, nullptr);
        }
      }
    }
  }

 private:
  SplineSettings settings_;
  SplineDirection direction_;
};

Knots knots_from_params(const SplineSegmentParams& params) {
  Knots k;
  const int n = static_cast<int>(params.bin_widths.size());
  if (n < 1 || n > kMaxBins || params.bin_heights.size() != static_cast<std::size_t>(n) ||
      params.knot_derivatives.size() != static_cast<std::size_t>(n + 1)) {
    throw std::invalid_argument("inconsistent spline segment parameters");
  }
  k.bins = n;
  k.bound = params.tail_bound;
  k.x[0] = -params.tail_bound;
  k.y[0] = -params.tail_bound;
  for (int j = 0; j < n; ++j) {
    if (!(params.bin_widths[j] > 0.0) || !(params.bin_heights[j] > 0.0)) {
      throw std::invalid_argument("spline bins must be strictly positive");
    }
    k.width[j] = params.bin_widths[j];
    k.height[j] = params.bin_heights[j];
    k.x[j + 1] = k.x[j] + k.width[j];
    k.y[j + 1] = k.y[j] + k.height[j];
  }
  k.x[n] = params.tail_bound;
  k.y[n] = params.tail_bound;
  for (int j = 0; j <= n; ++j) {
    if (!(params.knot_derivatives[j] > 0.0)) throw std::invalid_argument("spline derivatives must be positive");
    k.deriv[j] = params.knot_derivatives[j];
  }
  return k;
}

}  // namespace

void SplineSettings::validate() const {
  if (bins < 1 || bins > kMaxBins) throw std::invalid_argument("spline bins must be in [1, 16]");
  if (!(tail_bound > 0.0)) throw std::invalid_argument("spline tail bound must be positive");
  if (!(min_bin_width > 0.0) || min_bin_width * bins >= 1.0) throw std::invalid_argument("invalid min bin width");
  if (!(min_bin_height > 0.0) || min_bin_height * bins >= 1.0) throw std::invalid_argument("invalid min bin height");
  if (!(min_derivative > 0.0) || min_derivative >= 1.0) throw std::invalid_argument("invalid min derivative");
}

SplineSegmentParams normalize_spline_params(std::span<const double> raw, const SplineSettings& settings) {
  settings.validate();
  if (raw.size() != static_cast<std::size_t>(settings.raw_size())) {
    throw std::invalid_argument("expected " + std::to_string(settings.raw_size()) + " raw spline parameters");
  }
  Knots k;
  make_knots(raw.data(), settings, k);
  SplineSegmentParams p;
  p.tail_bound = settings.tail_bound;
  p.bin_widths.assign(k.width.begin(), k.width.begin() + settings.bins);
  p.bin_heights.assign(k.height.begin(), k.height.begin() + settings.bins);
  p.knot_derivatives.assign(k.deriv.begin(), k.deriv.begin() + settings.bins + 1);
  return p;
}

SplineValue rq_spline_forward(double x, const SplineSegmentParams& params) {
  if (!std::isfinite(x)) throw std::domain_error("non-finite spline input");
  return forward_with_knots(knots_from_params(params), x);
}

SplineValue rq_spline_inverse(double y, const SplineSegmentParams& params) {
  if (!std::isfinite(y)) throw std::domain_error("non-finite spline input");
  const Knots k = knots_from_params(params);
  if (y < -k.bound || y > k.bound) return {y, 0.0};
  const double x = inverse_position(k, find_bin(k.y, k.bins, y), y);
  return {x, -forward_with_knots(k, x).log_det};
}

SplineVectorResult rq_spline_forward(std::span<const double> u, std::span<const SplineSegmentParams> params) {
  if (u.size() != params.size()) throw std::invalid_argument("one spline per coordinate required");
  SplineVectorResult out;
  out.values.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const SplineValue v = rq_spline_forward(u[i], params[i]);
    out.values[i] = v.value;
    out.log_det += v.log_det;
  }
  return out;
}

SplineVectorResult rq_spline_inverse(std::span<const double> y, std::span<const SplineSegmentParams> params) {
  if (y.size() != params.size()) throw std::invalid_argument("one spline per coordinate required");
  SplineVectorResult out;
  out.values.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const SplineValue v = rq_spline_inverse(y[i], params[i]);
    out.values[i] = v.value;
    out.log_det += v.log_det;
  }
  return out;
}

SplineValue rq_spline_forward_raw(double x, const double* raw, const SplineSettings& settings) {
  Knots k;
  make_knots(raw, settings, k);
  return forward_with_knots(k, x);
}

SplineValue rq_spline_inverse_raw(double y, const double* raw, const SplineSettings& settings) {
  Knots k;
  make_knots(raw, settings, k);
  if (y < -k.bound || y > k.bound) return {y, 0.0};
  const double x = inverse_position(k, find_bin(k.y, k.bins, y), y);
  return {x, -forward_with_knots(k, x).log_det};
}

void rq_spline_forward_vjp(double x, const double* raw, const SplineSettings& settings, double grad_value,
                           double grad_log_det, double& grad_x, double* grad_raw) {
  Knots k;
  make_knots(raw, settings, k);
  if (x < -k.bound || x > k.bound) {
    grad_x += grad_value;
    return;
  }
  grad_x += forward_vjp_with_knots(k, settings, raw, x, grad_value, grad_log_det, grad_raw, nullptr, nullptr);
}

void rq_spline_inverse_vjp(double y, const double* raw, const SplineSettings& settings, double grad_value,
                           double grad_log_det, double& grad_y, double* grad_raw) {
  Knots k;
  make_knots(raw, settings, k);
  if (y < -k.bound || y > k.bound) {
    grad_y += grad_value;
    return;
  }
  const double x = inverse_position(k, find_bin(k.y, k.bins, y), y);
  double fx = 0.0;
  double lx = 0.0;
  forward_vjp_with_knots(k, settings, raw, x, 0.0, 0.0, nullptr, &fx, &lx);
  const double alpha = (grad_value - grad_log_det * lx) / fx;
  grad_y += alpha;
  if (grad_raw) forward_vjp_with_knots(k, settings, raw, x, -alpha, -grad_log_det, grad_raw, nullptr, nullptr);
}

grad::Var rq_spline(grad::Var x, grad::Var raw, const SplineSettings& settings, SplineDirection direction) {
  settings.validate();
  const std::size_t stride = static_cast<std::size_t>(settings.raw_size());
  if (raw.rows() != x.rows() || raw.cols() != x.cols() * stride) {
    throw grad::ShapeError("spline raw parameters " + grad::shape_string(raw.value()) + " do not match input " +
                           grad::shape_string(x.value()));
  }
  if (x.tape() != raw.tape()) throw grad::TapeError("spline operands live on different tapes");
  return x.tape()->record_custom(std::make_shared<RQSplineOp>(settings, direction), {x, raw});
}

}  // namespace infodesign::flow
