#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infodesign/inference/posterior.hpp"
#include "infodesign/sim/simulator.hpp"

namespace infodesign::inference {

// Returns `draws` posterior rows given a history; used by SBC trials.
using PosteriorSampler =
    std::function<grad::Tensor(const std::vector<Observation>& history, std::size_t draws, std::uint64_t seed)>;

// MCMC on the flow's product likelihood, thinned to the requested count.
PosteriorSampler mcmc_sampler(const flow::ConditionalFlow& flow, const sim::Prior& prior, McmcSettings settings);
// Ignores the data and draws from the prior (miscalibration hook).
PosteriorSampler prior_sampler(const sim::Prior& prior);
// Scales draws about their mean so the variance grows by `factor`.
PosteriorSampler inflate_variance(PosteriorSampler inner, double factor);

struct SbcSettings {
  std::size_t trials = 200;
  std::size_t draws = 99;  // posterior draws per trial; ranks take draws + 1 values
  std::vector<double> levels = default_levels();
  std::uint64_t seed = 0;

  static std::vector<double> default_levels();
};

struct CoverageCurve {
  std::vector<double> levels;
  std::vector<std::vector<double>> coverage;  // [dim][level]
  std::vector<double> band_lower;              // 95% binomial band per level
  std::vector<double> band_upper;
  std::vector<std::vector<std::uint32_t>> ranks;  // [trial][dim]
  std::size_t trials = 0;
  std::size_t failed = 0;

  // Every level of every dimension inside the band.
  bool within_band() const;
  // Chi-square p-value of rank uniformity over `bins` equal bins, per dimension.
  std::vector<double> rank_uniformity_pvalue(std::size_t bins, std::size_t draws) const;
};

// Simulation-based calibration: each trial draws theta from the prior,
// simulates an outcome at every design in `designs`, samples the posterior
// and records the rank of the true theta among the draws.
CoverageCurve sbc_coverage(const sim::Simulator& simulator, const std::vector<std::vector<double>>& designs,
                           const PosteriorSampler& sampler, const SbcSettings& settings);

// Median Euclidean distance between predictive rows and the observation.
double median_distance(const grad::Tensor& predictive, std::span<const double> y_obs);

struct SeedRecord {
  std::uint64_t seed = 0;
  std::vector<double> round_eig;                 // checkpoint EIG per round
  std::optional<double> median_distance;
};

// Summary: per round mean and standard error of the checkpoint
// EIG across seeds. The SE is null for a single seed.
nlohmann::json eig_report(const std::vector<SeedRecord>& records);

}  // namespace infodesign::inference
