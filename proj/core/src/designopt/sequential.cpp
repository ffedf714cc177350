#include "infodesign/designopt/sequential.hpp"

#include <deque>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "infodesign/inference/posterior.hpp"
#include "infodesign/sim/rng.hpp"

namespace infodesign::designopt {

SequentialError::SequentialError(std::size_t round, const std::string& what, nlohmann::json diagnostics)
    : std::runtime_error(fmt::format("round {}: {}", round, what)), round_(round), diagnostics_(std::move(diagnostics)) {}

void SequentialSettings::validate(const sim::Simulator& simulator) const {
  if (rounds == 0) throw std::invalid_argument("rounds must be at least 1");
  if (pool_size == 0) throw std::invalid_argument("pool_size must be positive");
  if (!ground_truth.empty()) {
    if (ground_truth.size() != simulator.theta_dim()) throw std::invalid_argument("ground_truth has the wrong size");
    if (!simulator.prior().in_support(ground_truth)) throw std::invalid_argument("ground_truth outside prior support");
  }
  if (design.dim() != simulator.xi_dim()) throw std::invalid_argument("design mean has the wrong size");
  train.validate();
  if (mcmc.chains == 0 || mcmc.draws == 0) throw std::invalid_argument("mcmc needs chains and draws");
}

SequentialResult run_sbi_boed(const sim::Simulator& simulator, flow::ConditionalFlow& flow,
                              const SequentialSettings& settings, const SequentialHooks& hooks) {
  settings.validate(simulator);
  SequentialResult result;
  if (settings.ground_truth.empty()) {
    auto rng = sim::make_stream(settings.seed, sim::StreamId::GroundTruth);
    result.ground_truth = simulator.prior().sample(rng);
  } else {
    result.ground_truth = settings.ground_truth;
  }

  grad::Tensor pool_rows = simulator.prior().sample_table(settings.pool_size, settings.seed, sim::StreamId::Prior);
  std::vector<inference::Observation> history;
  std::deque<flow::ConditionalFlow> round_flows;
  std::size_t step_offset = 0;

  for (std::size_t t = 1; t <= settings.rounds; ++t) {
    RoundReport report;
    report.round = t;
    try {
      const auto pool = simulator.prepare(pool_rows, sim::mix64(settings.seed ^ t));
      DesignDistribution dist = settings.design;
      dist.step = 0;
      if (settings.random_initial_design) {
        auto rng = sim::make_stream(settings.seed, sim::StreamId::Designs, t, 0xffffffffULL);
        for (std::size_t d = 0; d < dist.dim(); ++d) {
          dist.mu[d] = dist.bounds.lower[d] + rng.uniform() * (dist.bounds.upper[d] - dist.bounds.lower[d]);
        }
      }
      report.initial_mu = dist.mu;
      report.training = train_round(simulator, *pool, flow, dist, settings.train,
                                    RoundContext{settings.seed, t, step_offset}, hooks.on_step);
    } catch (const TrainingError& e) {
      throw SequentialError(t, e.what(), e.diagnostics());
    } catch (const sim::SimulationError& e) {
      throw SequentialError(t, e.what());
    }
    step_offset += settings.train.steps;

    const auto& xi_star = report.training.checkpoint.xi_star;
    report.observation.xi = xi_star;
    report.observation.y = simulator.simulate(
        result.ground_truth, xi_star, sim::stream_key(settings.seed, sim::StreamId::Observation, t, 0));
    history.push_back(report.observation);

    inference::McmcSettings mcmc = settings.mcmc;
    mcmc.seed = sim::stream_key(settings.seed, sim::StreamId::Mcmc, t, 0);
    std::vector<const flow::ConditionalFlow*> scorers{&flow};
    if (settings.posterior_flows == PosteriorFlows::PerRound) {
      round_flows.push_back(flow);
      scorers.clear();
      for (const auto& f : round_flows) scorers.push_back(&f);
    }
    try {
      inference::ProductTarget target(simulator.prior(), history, inference::flow_term(scorers));
      report.posterior = inference::mcmc_posterior(target, mcmc);
    } catch (const std::exception& e) {
      throw SequentialError(t, fmt::format("posterior sampling failed: {}", e.what()));
    }
    if (report.posterior.rhat_flag) spdlog::warn("round {}: R-hat above 1.1", t);

    pool_rows = inference::resample_rows(report.posterior.samples, settings.pool_size, settings.seed, t);
    if (hooks.on_round) hooks.on_round(report, flow);
    result.rounds.push_back(std::move(report));
  }
  return result;
}

}  // namespace infodesign::designopt
