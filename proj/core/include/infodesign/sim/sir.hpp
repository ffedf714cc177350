#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "infodesign/sim/simulator.hpp"

namespace infodesign::sim {

enum class SirObservation {
  Poisson,   // Poisson(I) truncated at the population size
  Gaussian,  // I + sqrt(I + 1) * N(0, 1), a continuous relaxation
  None,      // raw infected count
};

struct SirSettings {
  double dt = 0.01;
  double t_max = 100.0;
  double population = 500.0;
  double initial_infected = 2.0;
  double noise_scale = 1.0;  // diffusion multiplier; 0 gives the mean-field ODE
  SirObservation observation = SirObservation::Gaussian;
  bool interpolate = false;  // linear interpolation instead of nearest grid time
  double log_beta_mean = -0.69314718055994531;  // log 0.5
  double log_beta_sd = 0.5;
  double log_gamma_mean = -2.3025850929940457;  // log 0.1
  double log_gamma_sd = 0.5;

  std::size_t steps() const;
};

// Euler-Maruyama trajectories for a table of (beta, gamma) rows on the
// time grid {0, dt, ..., t_max}. R is implied by R = N - S - I.
struct SirGrid {
  SirSettings settings;
  grad::Tensor thetas;
  std::size_t points = 0;      // steps + 1
  std::vector<float> S;        // rows x points
  std::vector<float> I;        // rows x points
  std::uint64_t clamp_events = 0;

  std::size_t rows() const noexcept { return thetas.rows(); }
  double susceptible(std::size_t row, std::size_t k) const { return S[row * points + k]; }
  double infected(std::size_t row, std::size_t k) const { return I[row * points + k]; }
  // Infected count at time t (nearest node or linear interpolation).
  double infected_at(std::size_t row, double t, bool interpolate) const;
};

struct SirTrajectoryStats {
  std::uint64_t clamp_events = 0;
};

// Integrates one trajectory, writing S and I at every grid node.
SirTrajectoryStats sir_integrate(double beta, double gamma, const SirSettings& settings, std::uint64_t key,
                                 std::span<float> S, std::span<float> I);

SirGrid sir_pregrid(const grad::Tensor& thetas, std::uint64_t seed, const SirSettings& settings);

// Applies the observation law to an infected count.
double sir_observe_count(double infected, const SirSettings& settings, std::uint64_t key);
// Clamps xi to [0, t_max] (counting the event) then observes.
double sir_observe(const SirGrid& grid, std::size_t row, double xi, std::uint64_t key);

// Binary grid cache keyed by (seed, theta table hash, dt, t_max).
std::filesystem::path sir_cache_path(const std::filesystem::path& dir, const grad::Tensor& thetas, std::uint64_t seed,
                                     const SirSettings& settings);
void save_sir_grid(const std::filesystem::path& path, const SirGrid& grid, std::uint64_t seed);
std::optional<SirGrid> load_sir_grid(const std::filesystem::path& path, const grad::Tensor& thetas,
                                     std::uint64_t seed, const SirSettings& settings);

class SirSimulator final : public Simulator {
 public:
  explicit SirSimulator(SirSettings settings = {}, std::filesystem::path cache_dir = {});
  std::string name() const override { return "sir"; }
  std::size_t theta_dim() const noexcept override { return 2; }
  std::size_t xi_dim() const noexcept override { return 1; }
  std::size_t y_dim() const noexcept override { return 1; }
  const Prior& prior() const noexcept override { return prior_; }
  const DesignBounds& bounds() const noexcept override { return bounds_; }
  const SirSettings& settings() const noexcept { return settings_; }

  using Simulator::simulate;
  // Integrates a fresh trajectory up to xi; keyed noise covers both the
  // path and the observation.
  void simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                std::span<double> y) const override;
  std::shared_ptr<const SimulationPool> prepare(grad::Tensor thetas, std::uint64_t seed) const override;

  std::uint64_t out_of_range_designs() const noexcept;

 private:
  SirSettings settings_;
  std::filesystem::path cache_dir_;
  Prior prior_;
  DesignBounds bounds_;
};

}  // namespace infodesign::sim
