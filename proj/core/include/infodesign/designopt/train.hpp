#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infodesign/designopt/design_distribution.hpp"
#include "infodesign/flow/conditional_flow.hpp"
#include "infodesign/objective/mi_bounds.hpp"
#include "infodesign/sim/simulator.hpp"

namespace infodesign::designopt {

struct TrainSettings {
  std::size_t steps = 10000;
  std::size_t batch = 10;
  std::size_t contrastive = 50;  // L
  double lambda = 0.0;
  double lr_flow = 1e-3;
  double lr_design = 1e-3;
  double lr_anneal = 1.0;  // 1 keeps the learning rate constant
  double lr_final = 1e-4;
  double clip = 0.0;       // 0 disables clipping
  double design_beta2 = 0.95;
  std::size_t plateau_patience = 200;
  std::size_t plateau_smoothing = 50;
  bool optimize_design = true;
  bool per_row_contrastive = false;
  std::size_t jobs = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainSettings& s);
void from_json(const nlohmann::json& j, TrainSettings& s);

// One row of the per-step record.
struct StepRow {
  std::size_t round = 0;
  std::size_t step = 0;       // global, strictly increasing over a run
  double loss = 0.0;          // negative InfoNCE-lambda objective
  double loss_se = 0.0;
  double eig = 0.0;           // lambda-free InfoNCE estimate of the batch
  double eig_se = 0.0;
  double anchor_loglik = 0.0; // mean log p(y | theta0, xi)
  double sigma = 0.0;
  std::vector<double> mu;     // design mean that generated the batch
  double lr_flow = 0.0;
  double lr_design = 0.0;
  double grad_norm_flow = 0.0;
  double grad_norm_design = 0.0;
  bool checkpoint = false;
  std::size_t best_row = 0;   // batch row with the highest per-design EIG
  double wall_time = 0.0;     // seconds since the round started
};

struct DesignCheckpoint {
  std::vector<double> xi_star;
  double eig_star = 0.0;
  std::size_t step = 0;
  std::vector<double> best_design;  // per-design argmax of that step
  std::vector<double> parameters;   // flow parameters that produced eig_star
};

struct RoundResult {
  DesignCheckpoint checkpoint;
  std::vector<StepRow> rows;
  std::size_t lr_reductions = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& what, nlohmann::json diagnostics = {});
  std::size_t step() const noexcept { return step_; }
  const nlohmann::json& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::size_t step_;
  nlohmann::json diagnostics_;
};

struct RoundContext {
  std::uint64_t seed = 0;
  std::size_t round = 1;
  std::size_t step_offset = 0;  // global index of the round's first step
};

using StepHook = std::function<void(const StepRow&, const flow::ConditionalFlow&)>;

// Trains the flow and the design mean jointly for `settings.steps` steps.
// Parameter rows of each batch are drawn with replacement from `pool`.
// The flow is updated in place and keeps its final parameters.
RoundResult train_round(const sim::Simulator& simulator, const sim::SimulationPool& pool,
                        flow::ConditionalFlow& flow, DesignDistribution& dist, const TrainSettings& settings,
                        const RoundContext& context, const StepHook& on_step = {});

// Frozen standardization for a simulator: theta by prior moments, designs by
// bounds and outcomes by a pilot batch with designs uniform in the bounds.
flow::FlowConfig standardized_flow_config(const sim::Simulator& simulator, flow::FlowConfig base, std::size_t pilot,
                                          std::uint64_t seed);

// Simulates y for each (pool row, design row) pair with one key per row.
grad::Tensor simulate_rows(const sim::SimulationPool& pool, std::size_t y_dim, const std::vector<std::uint32_t>& rows,
                           const grad::Tensor& designs, std::uint64_t seed, std::uint64_t step, std::size_t jobs);

// n prior draws with outcomes simulated at one design, streams
// (seed, Validation, 0, i) for parameters and (seed, Validation, 1, i) for noise.
objective::JointSamples simulate_joint(const sim::Simulator& simulator, std::size_t n, std::span<const double> xi,
                                       std::uint64_t seed);

}  // namespace infodesign::designopt
