#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "infodesign/grad/tensor.hpp"
#include "infodesign/sim/prior.hpp"

namespace infodesign::sim {

struct DesignBounds {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const noexcept { return lower.size(); }
  bool contains(std::span<const double> xi) const noexcept;
  void validate() const;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Simulator state prepared once for a fixed table of parameter rows, so the
// training loop can query outcomes by row index.
class SimulationPool {
 public:
  virtual ~SimulationPool() = default;
  virtual const grad::Tensor& thetas() const noexcept = 0;
  // `key` seeds the per-call noise; the pool owns any per-row state.
  virtual void simulate(std::size_t row, std::span<const double> xi, std::uint64_t key, std::span<double> y) const = 0;
};

// Pure stochastic map (theta, xi, key) -> y plus its prior. `key` is a
// stream key from stream_key(); equal inputs always give equal outputs.
class Simulator {
 public:
  virtual ~Simulator() = default;

  virtual std::string name() const = 0;
  virtual std::size_t theta_dim() const noexcept = 0;
  virtual std::size_t xi_dim() const noexcept = 0;
  virtual std::size_t y_dim() const noexcept = 0;
  virtual const Prior& prior() const noexcept = 0;
  virtual const DesignBounds& bounds() const noexcept = 0;

  virtual void simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                        std::span<double> y) const = 0;
  std::vector<double> simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key) const;

  // Default pool simulates each call directly from the stored row.
  virtual std::shared_ptr<const SimulationPool> prepare(grad::Tensor thetas, std::uint64_t seed) const;

 protected:
  void check_inputs(std::span<const double> theta, std::span<const double> xi, std::span<double> y) const;
};

// Noisy linear model: y = theta0 + theta1 * xi + eps + nu with eps ~ N(0, 1)
// and nu ~ Gamma(shape, rate), one design per output coordinate.
struct LinearSettings {
  std::size_t design_dim = 1;
  double prior_sd = 3.0;
  double gamma_shape = 2.0;
  double gamma_rate = 2.0;
  double bound = 10.0;
  bool noise = true;        // off reduces the model to its affine part
  bool gamma_noise = true;  // off leaves the Gaussian term only
};

class LinearSimulator final : public Simulator {
 public:
  explicit LinearSimulator(LinearSettings settings = {});
  std::string name() const override { return "linear"; }
  std::size_t theta_dim() const noexcept override { return 2; }
  std::size_t xi_dim() const noexcept override { return settings_.design_dim; }
  std::size_t y_dim() const noexcept override { return settings_.design_dim; }
  const Prior& prior() const noexcept override { return prior_; }
  const DesignBounds& bounds() const noexcept override { return bounds_; }
  const LinearSettings& settings() const noexcept { return settings_; }
  using Simulator::simulate;
  void simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                std::span<double> y) const override;

 private:
  LinearSettings settings_;
  Prior prior_;
  DesignBounds bounds_;
};

// Linear-Gaussian model with closed-form mutual information:
// theta ~ N(0, sigma_theta^2), y = theta * xi + eps, eps ~ N(0, sigma_eps^2).
struct GaussOracleSettings {
  double sigma_theta = 1.0;
  double sigma_eps = 1.0;
  double bound = 10.0;
};

class GaussOracle final : public Simulator {
 public:
  explicit GaussOracle(GaussOracleSettings settings = {});
  std::string name() const override { return "gauss-oracle"; }
  std::size_t theta_dim() const noexcept override { return 1; }
  std::size_t xi_dim() const noexcept override { return 1; }
  std::size_t y_dim() const noexcept override { return 1; }
  const Prior& prior() const noexcept override { return prior_; }
  const DesignBounds& bounds() const noexcept override { return bounds_; }
  const GaussOracleSettings& settings() const noexcept { return settings_; }
  using Simulator::simulate;
  void simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                std::span<double> y) const override;

  double analytic_mi(double xi) const noexcept;
  double log_likelihood(double y, double theta, double xi) const noexcept;
  // Entropy of y given theta and xi, identical for every theta.
  double conditional_entropy() const noexcept;

  struct Posterior {
    double mean;
    double variance;
  };
  Posterior conjugate_posterior(std::span<const double> xis, std::span<const double> ys) const;

 private:
  GaussOracleSettings settings_;
  Prior prior_;
  DesignBounds bounds_;
};

// Two-moons benchmark; no design input.
class TwoMoons final : public Simulator {
 public:
  TwoMoons();
  std::string name() const override { return "two-moons"; }
  std::size_t theta_dim() const noexcept override { return 2; }
  std::size_t xi_dim() const noexcept override { return 0; }
  std::size_t y_dim() const noexcept override { return 2; }
  const Prior& prior() const noexcept override { return prior_; }
  const DesignBounds& bounds() const noexcept override { return bounds_; }
  using Simulator::simulate;
  void simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                std::span<double> y) const override;

  // Closed form with the latent angle and radius supplied.
  static void evaluate(std::span<const double> theta, double angle, double radius, std::span<double> y);

 private:
  Prior prior_;
  DesignBounds bounds_;
};

}  // namespace infodesign::sim
