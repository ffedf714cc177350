#include <cmath>

#include "acceptance.hpp"
#include "infodesign/designopt/train.hpp"
#include "infodesign/inference/diagnostics.hpp"
#include "infodesign/inference/posterior.hpp"

namespace infodesign::acceptance {
namespace {

using inference::Observation;

inference::ProductTarget::Term oracle_term(const sim::GaussOracle& oracle) {
  return [&oracle](const grad::Tensor& thetas, const Observation& obs, std::size_t) {
    std::vector<double> out(thetas.rows());
    for (std::size_t r = 0; r < thetas.rows(); ++r) out[r] = oracle.log_likelihood(obs.y[0], thetas(r, 0), obs.xi[0]);
    return out;
  };
}

std::vector<Observation> oracle_history(const sim::GaussOracle& oracle, double theta, const std::vector<double>& xis,
                                        std::uint64_t seed) {
  std::vector<Observation> h;
  for (std::size_t i = 0; i < xis.size(); ++i) {
    const double t[] = {theta};
    const double x[] = {xis[i]};
    h.push_back({{xis[i]}, oracle.simulate(t, x, sim::stream_key(seed, sim::StreamId::Observation, i, 0))});
  }
  return h;
}

double min_over(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

}  // namespace

Outcome calibration() {
  sim::GaussOracle oracle;
  const std::uint64_t seed = 1;
  flow::FlowConfig base;
  base.bijectors = 5;
  base.hidden_layers = 2;
  base.hidden_units = 32;
  base.seed = seed;
  flow::ConditionalFlow f(designopt::standardized_flow_config(oracle, base, 1000, seed));
  const auto pool = oracle.prepare(oracle.prior().sample_table(20000, seed, sim::StreamId::Prior), seed);
  designopt::DesignDistribution dist;
  dist.mu = {2.0};
  dist.bounds = oracle.bounds();
  designopt::TrainSettings train;
  train.steps = 2000;
  train.batch = 32;
  train.contrastive = 127;
  train.lr_flow = 3e-3;
  train.optimize_design = false;
  designopt::train_round(oracle, *pool, f, dist, train, {seed, 1, 0});

  inference::McmcSettings mcmc;
  mcmc.warmup = 500;
  mcmc.draws = 500;
  inference::SbcSettings sbc;
  sbc.trials = 200;
  sbc.seed = 21;
  const auto sampler = inference::mcmc_sampler(f, oracle.prior(), mcmc);
  const auto curve = inference::sbc_coverage(oracle, {dist.mu}, sampler, sbc);
  const auto wide = inference::sbc_coverage(oracle, {dist.mu}, inference::inflate_variance(sampler, 4.0), sbc);

  std::size_t outside = 0;
  for (std::size_t l = 0; l < curve.levels.size(); ++l) {
    outside += curve.coverage[0][l] < curve.band_lower[l] || curve.coverage[0][l] > curve.band_upper[l];
  }
  double min_excess = 1.0;
  for (std::size_t l = 0; l < wide.levels.size(); ++l) {
    min_excess = std::min(min_excess, wide.coverage[0][l] - wide.levels[l]);
  }
  const std::size_t mid = wide.levels.size() / 2;
  const bool conservative = min_excess >= 0.0 && wide.coverage[0][mid] > wide.band_upper[mid];
  const bool pass = curve.trials == sbc.trials && curve.within_band() && conservative;
  return {pass, fmt::format("M={} trials ({} failed), {} of {} levels outside the 95% band, rank p-value {:.3f}; "
                            "variance x4 hook: coverage - level >= {:.3f} everywhere, level 0.5 at {:.3f} vs band "
                            "upper {:.3f}",
                            curve.trials, curve.failed, outside, curve.levels.size(),
                            min_over(curve.rank_uniformity_pvalue(20, sbc.draws)), min_excess, wide.coverage[0][mid],
                            wide.band_upper[mid])};
}

Outcome mcmc_correctness() {
  sim::GaussOracle oracle;
  std::size_t hits = 0;
  double worst_z = 0.0;
  const std::vector<std::vector<double>> designs{{2.0}, {-1.0, 3.0}, {0.5, 2.0, -4.0}, {9.0}, {1.0, 1.0, 1.0, 1.0}};
  for (std::size_t k = 0; k < designs.size(); ++k) {
    const auto h = oracle_history(oracle, 0.8 - 0.3 * static_cast<double>(k), designs[k], 40 + k);
    std::vector<double> ys;
    for (const auto& o : h) ys.push_back(o.y[0]);
    const auto post = oracle.conjugate_posterior(designs[k], ys);
    inference::McmcSettings s;
    s.seed = 60 + k;
    const auto set = inference::mcmc_posterior(inference::ProductTarget(oracle.prior(), h, oracle_term(oracle)), s);
    const double ess = set.ess[0];
    const double z_mean = std::abs(set.mean()[0] - post.mean) / std::sqrt(post.variance / ess);
    const double z_var = std::abs(set.variance()[0] - post.variance) / (post.variance * std::sqrt(2.0 / ess));
    worst_z = std::max({worst_z, z_mean, z_var});
    hits += z_mean < 3.0 && z_var < 3.0;
  }

  // log pi(theta | y1, y2) + log p(theta) = log pi(theta | y1) + log pi(theta | y2), unnormalized.
  double worst_gap = 0.0;
  const auto h = oracle_history(oracle, -0.4, {1.0, 2.5, -3.0}, 4);
  inference::ProductTarget all(oracle.prior(), h, oracle_term(oracle));
  inference::ProductTarget prior_only(oracle.prior(), {}, nullptr);
  for (double t = -4.0; t <= 4.0; t += 0.25) {
    const double th[] = {t};
    double parts = -2.0 * prior_only.log_density(th);
    for (const auto& o : h) parts += inference::ProductTarget(oracle.prior(), {o}, oracle_term(oracle)).log_density(th);
    worst_gap = std::max(worst_gap, std::abs(all.log_density(th) - parts));
  }
  const bool pass = hits == designs.size() && worst_gap < 1e-12;
  return {pass, fmt::format("{} conjugate posteriors within 3 MC SE (worst |z| {:.2f}), factorization gap {:.1e}",
                            ratio(hits, designs.size()), worst_z, worst_gap)};
}

}  // namespace infodesign::acceptance
