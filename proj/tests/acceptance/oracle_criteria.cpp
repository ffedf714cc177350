#include <cmath>

#include "acceptance.hpp"
#include "infodesign/designopt/train.hpp"
#include "infodesign/objective/mi_bounds.hpp"

namespace infodesign::acceptance {
namespace {

struct OracleRun {
  double xi0 = 2.0;
  bool optimize_design = false;
  std::size_t steps = 4000;
  std::size_t batch = 32;
  std::size_t contrastive = 127;
  std::size_t hidden_units = 32;
  double lambda = 0.0;
  double lr_flow = 3e-3;
  double lr_design = 1e-2;
};

struct OracleResult {
  designopt::RoundResult round;
  double final_mu = 0.0;
  objective::MIEstimate heldout;
  std::size_t cap_violations = 0;
  double worst_cap_margin = -1e300;  // max over steps of estimate - cap
};

// One training run on the linear-Gaussian oracle. Every step's estimates are
// checked against the InfoNCE caps as they are produced.
OracleResult run_oracle(const sim::GaussOracle& oracle, const OracleRun& cfg, std::uint64_t seed) {
  flow::FlowConfig base;
  base.bijectors = 5;
  base.hidden_layers = 2;
  base.hidden_units = cfg.hidden_units;
  base.seed = seed;
  flow::ConditionalFlow f(designopt::standardized_flow_config(oracle, base, 1000, seed));
  const auto pool = oracle.prepare(oracle.prior().sample_table(20000, seed, sim::StreamId::Prior), seed);
  designopt::DesignDistribution dist;
  dist.mu = {cfg.xi0};
  dist.bounds = oracle.bounds();
  if (cfg.optimize_design) {
    dist.sigma_start = 2.0;
    dist.sigma_end = 0.1;
  }
  designopt::TrainSettings train;
  train.steps = cfg.steps;
  train.batch = cfg.batch;
  train.contrastive = cfg.contrastive;
  train.lambda = cfg.lambda;
  train.lr_flow = cfg.lr_flow;
  train.lr_design = cfg.lr_design;
  train.optimize_design = cfg.optimize_design;

  OracleResult out;
  const double log_cap = std::log(static_cast<double>(cfg.contrastive) + 1.0);
  const double lambda_cap = log_cap - cfg.lambda * oracle.conditional_entropy();
  auto check = [&](double value, double cap, double se) {
    const double margin = value - (cap + 3.0 * se);
    out.worst_cap_margin = std::max(out.worst_cap_margin, value - cap);
    if (margin > 0.0) ++out.cap_violations;
  };
  out.round = designopt::train_round(oracle, *pool, f, dist, train, {seed, 1, 0},
                                     [&](const designopt::StepRow& row, const flow::ConditionalFlow&) {
                                       check(row.eig, log_cap, row.eig_se);
                                       if (cfg.lambda > 0.0) check(-row.loss, lambda_cap, row.loss_se);
                                     });
  out.final_mu = dist.mu[0];
  const auto held = designopt::simulate_joint(oracle, 4000, dist.mu, seed);
  const auto contrastive = oracle.prior().sample_table(cfg.contrastive, seed, sim::StreamId::Validation, 2);
  out.heldout = objective::heldout_info_nce(f, held, contrastive);
  check(out.heldout.value, log_cap, out.heldout.se);
  if (cfg.lambda > 0.0) {
    const auto lam = objective::heldout_info_nce(f, held, contrastive, cfg.lambda);
    check(lam.value, lambda_cap, lam.se);
  }
  return out;
}

}  // namespace

Outcome analytic_mi_recovery() {
  sim::GaussOracle oracle;
  const double truth = oracle.analytic_mi(2.0);
  std::size_t hits = 0, violations = 0;
  std::vector<std::string> values;
  for (std::uint64_t seed : kSeeds) {
    const auto r = run_oracle(oracle, {}, seed);
    if (std::abs(r.heldout.value - truth) <= 0.08) ++hits;
    violations += r.cap_violations;
    values.push_back(fmt::format("{:.3f}", r.heldout.value));
  }
  return {hits >= 4 && violations == 0,
          fmt::format("held-out EIG [{}] vs analytic {:.4f}, {} seeds within 0.08 (need 4), cap violations {}",
                      fmt::join(values, ", "), truth, ratio(hits, std::size(kSeeds)), violations)};
}

Outcome bound_caps() {
  sim::GaussOracle oracle;
  std::size_t violations = 0, runs = 0;
  std::vector<std::string> margins;
  for (double lambda : {0.0, 0.1, 1.0}) {
    for (std::uint64_t seed : {1u, 2u}) {
      OracleRun cfg;
      cfg.steps = 1000;
      cfg.batch = 16;
      cfg.lambda = lambda;
      const auto r = run_oracle(oracle, cfg, seed);
      violations += r.cap_violations;
      ++runs;
      margins.push_back(fmt::format("{:.2f}", r.worst_cap_margin));
    }
  }
  return {violations == 0,
          fmt::format("{} runs over lambda in {{0, 0.1, 1}}, every step and held-out estimate checked; violations {}, "
                      "worst estimate - cap per run [{}]",
                      runs, violations, fmt::join(margins, ", "))};
}

Outcome oracle_design_optimality() {
  sim::GaussOracle oracle;
  std::size_t hits = 0;
  std::vector<std::string> found;
  for (std::uint64_t seed : kSeeds) {
    OracleRun cfg;
    cfg.optimize_design = true;
    cfg.steps = 2000;
    cfg.batch = 16;
    cfg.contrastive = 31;
    cfg.hidden_units = 16;
    const auto r = run_oracle(oracle, cfg, seed);
    const double xi_star = r.round.checkpoint.xi_star[0];
    if (std::abs(xi_star) >= 9.0) ++hits;
    found.push_back(fmt::format("{:.2f}", xi_star));
  }
  return {hits == std::size(kSeeds),
          fmt::format("xi* [{}] from mu = 2, {} seeds with |xi*| >= 9 (need 5)", fmt::join(found, ", "),
                      ratio(hits, std::size(kSeeds)))};
}

}  // namespace infodesign::acceptance
