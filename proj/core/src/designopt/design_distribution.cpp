#include "infodesign/designopt/design_distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "infodesign/sim/rng.hpp"

namespace infodesign::designopt {
namespace {

const boost::math::normal_distribution<double> kStd;

double phi_cdf(double x) { return boost::math::cdf(kStd, x); }
double phi_quantile(double p) { return boost::math::quantile(kStd, p); }

// Standardized draw on [a, b] with the interval kept on the lower side of
// zero, where the CDF has full relative precision.
double standard_draw(double a, double b, double v) {
  if (a + b > 0.0) return -standard_draw(-b, -a, 1.0 - v);
  const double pa = std::isinf(a) ? 0.0 : phi_cdf(a);
  const double pb = std::isinf(b) ? 1.0 : phi_cdf(b);
  const double mass = pb - pa;
  if (mass > 1e-280) {
    const double p = std::clamp(pa + mass * v, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
    const double z = phi_quantile(p);
    return std::clamp(z, a, b);
  }
  // Deep tail: density ~ exp(|b| (z - b)) on [a, b].
  const double rate = -b;
  const double z = b + std::log1p(-(1.0 - v) * -std::expm1(-rate * (b - a))) / rate;
  return std::clamp(z, a, b);
}

class TruncatedNormalOp final : public grad::CustomOp {
 public:
  TruncatedNormalOp(double sigma, sim::DesignBounds bounds, grad::Tensor v)
      : sigma_(sigma), bounds_(std::move(bounds)), v_(std::move(v)) {}

  const char* name() const noexcept override { return "truncated_normal"; }

  grad::Tensor forward(std::span<const grad::Tensor* const> inputs) const override {
    const grad::Tensor& mu = *inputs[0];
    return sample_designs(mu.data(), sigma_, bounds_, v_);
  }

  void backward(std::span<const grad::Tensor* const> inputs, const grad::Tensor& output, const grad::Tensor& grad_output,
                std::span<grad::Tensor* const> grad_inputs) const override {
    if (!grad_inputs[0]) return;
    const grad::Tensor& mu = *inputs[0];
    grad::Tensor& g = *grad_inputs[0];
    for (std::size_t r = 0; r < output.rows(); ++r) {
      for (std::size_t d = 0; d < output.cols(); ++d) {
        g(0, d) += grad_output(r, d) * truncated_normal_dmu(mu(0, d), sigma_, bounds_.lower[d], bounds_.upper[d],
                                                            v_(r, d), output(r, d));
      }
    }
  }

 private:
  double sigma_;
  sim::DesignBounds bounds_;
  grad::Tensor v_;
};

}  // namespace

double DesignDistribution::sigma() const { return sigma_schedule(*this, step); }

void DesignDistribution::validate() const {
  bounds.validate();
  if (mu.size() != bounds.dim()) throw std::invalid_argument("design mean and bounds differ in dimension");
  if (!(sigma_start >= 0.0) || !(sigma_end >= 0.0)) throw std::invalid_argument("design sigma must be non-negative");
  if (sigma_end > sigma_start) throw std::invalid_argument("sigma_end exceeds sigma_start");
  if (!(rho >= 0.0)) throw std::invalid_argument("sigma decay rate must be non-negative");
  if (total_steps == 0) throw std::invalid_argument("total design steps must be positive");
  for (double m : mu) {
    if (!std::isfinite(m)) throw std::invalid_argument("design mean must be finite");
  }
}

void DesignDistribution::clamp_mean() {
  for (std::size_t d = 0; d < mu.size(); ++d) mu[d] = std::clamp(mu[d], bounds.lower[d], bounds.upper[d]);
}

double sigma_schedule(const DesignDistribution& dist, std::size_t n) {
  const double decay = std::exp(-static_cast<double>(n) * dist.rho / static_cast<double>(dist.total_steps));
  return dist.sigma_end + (dist.sigma_start - dist.sigma_end) * decay;
}

double truncated_normal(double mu, double sigma, double lower, double upper, double v) {
  if (!(lower < upper)) throw std::invalid_argument("degenerate design bounds");
  if (sigma <= 0.0) return std::clamp(mu, lower, upper);
  const double z = standard_draw((lower - mu) / sigma, (upper - mu) / sigma, v);
  return std::clamp(mu + sigma * z, lower, upper);
}

double truncated_normal_dmu(double mu, double sigma, double lower, double upper, double v, double draw) {
  if (sigma <= 0.0) return (mu > lower && mu < upper) ? 1.0 : 0.0;
  const double a = (lower - mu) / sigma;
  const double b = (upper - mu) / sigma;
  const double z = (draw - mu) / sigma;
  // 1 - [(1 - v) phi(a) + v phi(b)] / phi(z), with the ratios in log space.
  const double ra = std::isinf(a) ? 0.0 : std::exp(0.5 * (z * z - a * a));
  const double rb = std::isinf(b) ? 0.0 : std::exp(0.5 * (z * z - b * b));
  return 1.0 - (1.0 - v) * ra - v * rb;
}

grad::Tensor design_uniforms(std::size_t count, std::size_t dim, std::uint64_t seed, std::uint64_t step) {
  grad::Tensor v(count, dim);
  for (std::size_t r = 0; r < count; ++r) {
    auto rng = sim::make_stream(seed, sim::StreamId::Designs, step, r);
    for (std::size_t d = 0; d < dim; ++d) v(r, d) = rng.uniform();
  }
  return v;
}

grad::Tensor sample_designs(std::span<const double> mu, double sigma, const sim::DesignBounds& bounds,
                            const grad::Tensor& v) {
  if (mu.size() != bounds.dim() || v.cols() != mu.size()) {
    throw std::invalid_argument("design mean, bounds and uniforms differ in dimension");
  }
  grad::Tensor out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t d = 0; d < v.cols(); ++d) {
      out(r, d) = truncated_normal(mu[d], sigma, bounds.lower[d], bounds.upper[d], v(r, d));
    }
  }
  return out;
}

grad::Var sample_designs(grad::Var mu, double sigma, const sim::DesignBounds& bounds, grad::Tensor v) {
  if (mu.rows() != 1) throw grad::ShapeError("design mean must be a single row");
  bounds.validate();
  auto op = std::make_shared<TruncatedNormalOp>(sigma, bounds, std::move(v));
  return mu.tape()->record_custom(std::move(op), {mu});
}

}  // namespace infodesign::designopt
