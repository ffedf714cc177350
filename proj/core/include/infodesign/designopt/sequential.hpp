#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "infodesign/designopt/train.hpp"
#include "infodesign/inference/posterior.hpp"

namespace infodesign::designopt {

// Which flow scores each past observation in the posterior.
enum class PosteriorFlows {
  PerRound,  // the flow as it stood at the end of the observation's round
  Latest,    // the current flow for every observation
};

struct SequentialSettings {
  std::size_t rounds = 1;
  std::size_t pool_size = 1000;        // parameter rows available to each round
  std::vector<double> ground_truth;    // empty draws one from the prior
  DesignDistribution design;           // initial mean and schedule, restarted every round
  bool random_initial_design = false;  // draw each round's initial mean uniformly in the bounds
  PosteriorFlows posterior_flows = PosteriorFlows::PerRound;
  TrainSettings train;
  inference::McmcSettings mcmc;
  std::uint64_t seed = 0;

  void validate(const sim::Simulator& simulator) const;
};

struct RoundReport {
  std::size_t round = 1;
  std::vector<double> initial_mu;
  RoundResult training;
  inference::Observation observation;
  inference::PosteriorSampleSet posterior;
};

struct SequentialResult {
  std::vector<double> ground_truth;
  std::vector<RoundReport> rounds;
};

class SequentialError : public std::runtime_error {
 public:
  SequentialError(std::size_t round, const std::string& what, nlohmann::json diagnostics = {});
  std::size_t round() const noexcept { return round_; }
  const nlohmann::json& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::size_t round_;
  nlohmann::json diagnostics_;
};

struct SequentialHooks {
  StepHook on_step;
  // Called after each round's posterior, before the next round starts.
  std::function<void(const RoundReport&, const flow::ConditionalFlow&)> on_round;
};

// Sequential design loop. Each round trains on the current parameter pool,
// observes the hidden ground truth at the checkpoint design, fits the
// posterior given every observation so far and resamples the pool from it.
// Flow parameters carry over between rounds; optimizer moments do not.
SequentialResult run_sbi_boed(const sim::Simulator& simulator, flow::ConditionalFlow& flow,
                              const SequentialSettings& settings, const SequentialHooks& hooks = {});

}  // namespace infodesign::designopt
