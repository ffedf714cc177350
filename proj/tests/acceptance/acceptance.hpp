#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace infodesign::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;  // wall-clock allowance on one core
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria();

// Seeds shared by every multi-seed criterion.
inline constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

inline std::string ratio(std::size_t hits, std::size_t total) { return fmt::format("{}/{}", hits, total); }

Outcome gradient_suite();
Outcome flow_correctness();
Outcome analytic_mi_recovery();
Outcome bound_caps();
Outcome lambda_identity();
Outcome two_moons_trends();
Outcome linear_dimension_trend();
Outcome sir_sigma_ablation();
Outcome oracle_design_optimality();
Outcome checkpoint_invariant();
Outcome calibration();
Outcome mcmc_correctness();
Outcome reproducibility();

}  // namespace infodesign::acceptance
