#include "infodesign/sim/simulator.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace infodesign::sim {
namespace {

class DirectPool final : public SimulationPool {
 public:
  DirectPool(const Simulator& sim, grad::Tensor thetas) : sim_(sim), thetas_(std::move(thetas)) {}
  const grad::Tensor& thetas() const noexcept override { return thetas_; }
  void simulate(std::size_t row, std::span<const double> xi, std::uint64_t key, std::span<double> y) const override {
    sim_.simulate(thetas_.row_span(row), xi, key, y);
  }

 private:
  const Simulator& sim_;
  grad::Tensor thetas_;
};

DesignBounds symmetric_bounds(std::size_t dim, double bound) {
  return DesignBounds{std::vector<double>(dim, -bound), std::vector<double>(dim, bound)};
}

}  // namespace

bool DesignBounds::contains(std::span<const double> xi) const noexcept {
  if (xi.size() != lower.size()) return false;
  for (std::size_t i = 0; i < xi.size(); ++i) {
    if (!(xi[i] >= lower[i] && xi[i] <= upper[i])) return false;
  }
  return true;
}

void DesignBounds::validate() const {
  if (lower.size() != upper.size()) throw std::invalid_argument("design bounds have mismatched dimensions");
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!(lower[i] < upper[i]) || !std::isfinite(lower[i]) || !std::isfinite(upper[i])) {
      throw std::invalid_argument("degenerate design bounds in coordinate " + std::to_string(i));
    }
  }
}

std::vector<double> Simulator::simulate(std::span<const double> theta, std::span<const double> xi,
                                        std::uint64_t key) const {
  std::vector<double> y(y_dim());
  simulate(theta, xi, key, y);
  return y;
}

std::shared_ptr<const SimulationPool> Simulator::prepare(grad::Tensor thetas, std::uint64_t) const {
  if (thetas.cols() != theta_dim()) throw std::invalid_argument("parameter table has the wrong width");
  return std::make_shared<DirectPool>(*this, std::move(thetas));
}

void Simulator::check_inputs(std::span<const double> theta, std::span<const double> xi, std::span<double> y) const {
  if (theta.size() != theta_dim() || xi.size() != xi_dim() || y.size() != y_dim()) {
    throw std::invalid_argument(name() + ": simulate called with wrong dimensions");
  }
}

LinearSimulator::LinearSimulator(LinearSettings settings)
    : settings_(settings),
      prior_({{PriorFamily::Normal, 0.0, settings.prior_sd}, {PriorFamily::Normal, 0.0, settings.prior_sd}}),
      bounds_(symmetric_bounds(settings.design_dim, settings.bound)) {
  if (settings_.design_dim == 0) throw std::invalid_argument("linear model needs at least one design");
  if (!(settings_.gamma_shape > 0.0) || !(settings_.gamma_rate > 0.0)) {
    throw std::invalid_argument("gamma noise needs positive shape and rate");
  }
  bounds_.validate();
}

void LinearSimulator::simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                               std::span<double> y) const {
  check_inputs(theta, xi, y);
  CounterRng rng(key);
  for (std::size_t i = 0; i < xi.size(); ++i) {
    double noise = 0.0;
    if (settings_.noise) {
      noise = rng.normal();
      if (settings_.gamma_noise) noise += rng.gamma(settings_.gamma_shape, 1.0 / settings_.gamma_rate);
    }
    y[i] = theta[0] + theta[1] * xi[i] + noise;
  }
}

GaussOracle::GaussOracle(GaussOracleSettings settings)
    : settings_(settings),
      prior_({{PriorFamily::Normal, 0.0, settings.sigma_theta}}),
      bounds_(symmetric_bounds(1, settings.bound)) {
  if (!(settings_.sigma_eps > 0.0)) throw std::invalid_argument("gauss oracle needs sigma_eps > 0");
  bounds_.validate();
}

void GaussOracle::simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                           std::span<double> y) const {
  check_inputs(theta, xi, y);
  CounterRng rng(key);
  y[0] = theta[0] * xi[0] + settings_.sigma_eps * rng.normal();
}

double GaussOracle::analytic_mi(double xi) const noexcept {
  const double r = settings_.sigma_theta / settings_.sigma_eps;
  return 0.5 * std::log1p(xi * xi * r * r);
}

double GaussOracle::log_likelihood(double y, double theta, double xi) const noexcept {
  const double z = (y - theta * xi) / settings_.sigma_eps;
  return -0.5 * z * z - std::log(settings_.sigma_eps) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double GaussOracle::conditional_entropy() const noexcept {
  return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * settings_.sigma_eps * settings_.sigma_eps);
}

GaussOracle::Posterior GaussOracle::conjugate_posterior(std::span<const double> xis,
                                                        std::span<const double> ys) const {
  if (xis.size() != ys.size()) throw std::invalid_argument("history designs and outcomes differ in length");
  double precision = 1.0 / (settings_.sigma_theta * settings_.sigma_theta);
  double weighted = 0.0;
  const double noise_precision = 1.0 / (settings_.sigma_eps * settings_.sigma_eps);
  for (std::size_t i = 0; i < xis.size(); ++i) {
    precision += xis[i] * xis[i] * noise_precision;
    weighted += xis[i] * ys[i] * noise_precision;
  }
  return {weighted / precision, 1.0 / precision};
}

TwoMoons::TwoMoons() : prior_({{PriorFamily::Uniform, -1.0, 1.0}, {PriorFamily::Uniform, -1.0, 1.0}}) {}

void TwoMoons::evaluate(std::span<const double> theta, double angle, double radius, std::span<double> y) {
  const double px = radius * std::cos(angle) + 0.25;
  const double py = radius * std::sin(angle);
  y[0] = px - std::abs(theta[0] + theta[1]) / std::numbers::sqrt2;
  y[1] = py + (-theta[0] + theta[1]) / std::numbers::sqrt2;
}

void TwoMoons::simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                        std::span<double> y) const {
  check_inputs(theta, xi, y);
  CounterRng rng(key);
  const double angle = std::numbers::pi * (rng.uniform() - 0.5);
  const double radius = 0.1 + 0.01 * rng.normal();
  evaluate(theta, angle, radius, y);
}

}  // namespace infodesign::sim
