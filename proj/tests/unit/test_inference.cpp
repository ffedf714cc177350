#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/roots.hpp>

#include "infodesign/inference/diagnostics.hpp"
#include "infodesign/inference/posterior.hpp"
#include "infodesign/sim/rng.hpp"

using namespace infodesign;
using namespace infodesign::inference;

namespace {

ProductTarget::Term oracle_term(const sim::GaussOracle& oracle) {
  return [&oracle](const grad::Tensor& thetas, const Observation& obs, std::size_t) {
    std::vector<double> out(thetas.rows());
    for (std::size_t r = 0; r < thetas.rows(); ++r) out[r] = oracle.log_likelihood(obs.y[0], thetas(r, 0), obs.xi[0]);
    return out;
  };
}

std::vector<Observation> oracle_history(const sim::GaussOracle& oracle, double theta, std::vector<double> xis,
                                        std::uint64_t seed) {
  std::vector<Observation> h;
  for (std::size_t i = 0; i < xis.size(); ++i) {
    const double t[] = {theta};
    const double x[] = {xis[i]};
    h.push_back({{xis[i]}, oracle.simulate(t, x, sim::stream_key(seed, sim::StreamId::Observation, i, 0))});
  }
  return h;
}

PosteriorSampler conjugate_sampler(const sim::GaussOracle& oracle) {
  return [&oracle](const std::vector<Observation>& h, std::size_t draws, std::uint64_t seed) {
    std::vector<double> xs, ys;
    for (const auto& o : h) {
      xs.push_back(o.xi[0]);
      ys.push_back(o.y[0]);
    }
    const auto post = oracle.conjugate_posterior(xs, ys);
    grad::Tensor t(draws, 1);
    auto rng = sim::CounterRng(seed);
    for (std::size_t i = 0; i < draws; ++i) t(i, 0) = post.mean + std::sqrt(post.variance) * rng.normal();
    return t;
  };
}

std::vector<std::vector<double>> column_chains(const PosteriorSampleSet& s, std::size_t d, std::size_t chains) {
  std::vector<std::vector<double>> out(chains);
  for (std::size_t r = 0; r < s.samples.rows(); ++r) out[s.chain[r]].push_back(s.samples(r, d));
  return out;
}

}  // namespace

TEST_CASE("conjugate posterior recovered by MCMC") {
  sim::GaussOracle oracle;
  const auto h = oracle_history(oracle, 0.8, {2.0, -1.0, 3.0}, 1);
  ProductTarget target(oracle.prior(), h, oracle_term(oracle));
  McmcSettings s;
  s.seed = 2;
  const auto set = mcmc_posterior(target, s);
  const auto post = oracle.conjugate_posterior(std::vector<double>{2.0, -1.0, 3.0},
                                               std::vector<double>{h[0].y[0], h[1].y[0], h[2].y[0]});
  const double ess = set.ess[0];
  CHECK(ess > 1000.0);
  CHECK(std::abs(set.mean()[0] - post.mean) < 3.0 * std::sqrt(post.variance / ess));
  CHECK(std::abs(set.variance()[0] - post.variance) < 3.0 * post.variance * std::sqrt(2.0 / ess));
  CHECK(set.rhat[0] < 1.01);
  CHECK_FALSE(set.rhat_flag);
  for (double a : set.acceptance) {
    CHECK(a > 0.15);
    CHECK(a < 0.6);
  }
}

TEST_CASE("empty history reproduces the prior, including constrained priors") {
  const sim::Prior lognormal({{sim::PriorFamily::LogNormal, std::log(0.5), 0.5},
                              {sim::PriorFamily::LogNormal, std::log(0.1), 0.5}});
  ProductTarget target(lognormal, {}, nullptr);
  McmcSettings s;
  s.seed = 3;
  const auto set = mcmc_posterior(target, s);
  const auto m = set.mean();
  const auto v = set.variance();
  const auto pm = lognormal.mean();
  const auto psd = lognormal.stddev();
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(std::abs(m[d] - pm[d]) < 3.0 * psd[d] / std::sqrt(set.ess[d]));
    // Lognormal variance estimates are heavy-tailed; use a wide relative band.
    CHECK(std::abs(v[d] / (psd[d] * psd[d]) - 1.0) < 0.15);
    for (std::size_t r = 0; r < set.samples.rows(); ++r) REQUIRE(set.samples(r, d) > 0.0);
  }
}

TEST_CASE("product likelihood factorization") {
  sim::GaussOracle oracle;
  const auto h = oracle_history(oracle, -0.4, {1.0, 2.5}, 4);
  ProductTarget both(oracle.prior(), h, oracle_term(oracle));
  ProductTarget first(oracle.prior(), {h[0]}, oracle_term(oracle));
  ProductTarget second(oracle.prior(), {h[1]}, oracle_term(oracle));
  for (double t : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
    const double th[] = {t};
    const double lhs = both.log_density(th);
    const double rhs = first.log_density(th) + second.log_density(th) - oracle.prior().log_density(th);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-15).scale(1.0));
  }
}

TEST_CASE("flow terms score each observation with its own flow") {
  flow::FlowConfig c;
  c.y_dim = 1;
  c.theta_dim = 1;
  c.xi_dim = 1;
  c.hidden_units = 4;
  c.fill_defaults();
  flow::ConditionalFlow identity(c);
  flow::FlowConfig shifted_config = c;
  shifted_config.y_shift = {1.0};
  flow::ConditionalFlow shifted(shifted_config);
  const std::vector<Observation> h{{{0.5}, {1.0}}, {{0.5}, {1.0}}, {{0.5}, {1.0}}};
  const auto term = flow_term({&identity, &shifted});
  const grad::Tensor th(1, 1, 0.0);
  const double y1[] = {1.0};
  const double t0[] = {0.0};
  const double x0[] = {0.5};
  CHECK(term(th, h[0], 0)[0] == identity.log_prob(y1, t0, x0));
  CHECK(term(th, h[1], 1)[0] == shifted.log_prob(y1, t0, x0));
  CHECK(term(th, h[2], 2)[0] == shifted.log_prob(y1, t0, x0));
  CHECK(term(th, h[0], 0)[0] != term(th, h[1], 1)[0]);
  CHECK_THROWS(flow_term(std::vector<const flow::ConditionalFlow*>{}));
}

TEST_CASE("sampler smoke test on a standard normal target") {
  const sim::Prior normal({{sim::PriorFamily::Normal, 0.0, 1.0}});
  ProductTarget target(normal, {}, nullptr);
  McmcSettings s;
  s.seed = 5;
  s.chains = 4;
  s.draws = 150000;
  const auto set = mcmc_posterior(target, s);
  CHECK(set.ess[0] > 1e5);
  CHECK(std::abs(set.mean()[0]) < 3.0 / std::sqrt(set.ess[0]));
  CHECK(set.variance()[0] > 0.9);
  CHECK(set.variance()[0] < 1.1);
}

TEST_CASE("observations contract the posterior") {
  sim::GaussOracle oracle;
  int contracted = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto h = oracle_history(oracle, 0.5, {2.0, 2.0}, 10 + seed);
    McmcSettings s;
    s.seed = seed;
    s.draws = 5000;
    const auto one = mcmc_posterior(ProductTarget(oracle.prior(), {h[0]}, oracle_term(oracle)), s);
    const auto two = mcmc_posterior(ProductTarget(oracle.prior(), h, oracle_term(oracle)), s);
    contracted += two.variance()[0] < one.variance()[0];
  }
  CHECK(contracted >= 4);
}

TEST_CASE("chains that never accept are reported") {
  sim::GaussOracle oracle;
  auto never = [](const grad::Tensor& t, const Observation&, std::size_t) {
    return std::vector<double>(t.rows(), -std::numeric_limits<double>::infinity());
  };
  ProductTarget target(oracle.prior(), oracle_history(oracle, 0.0, {1.0}, 1), never);
  McmcSettings s;
  s.warmup = 100;
  s.draws = 100;
  CHECK_THROWS_AS(mcmc_posterior(target, s), InferenceError);
}

TEST_CASE("R-hat and ESS on synthetic chains") {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> iid(4), shifted(4), ar(4);
  const double rho = 0.9;
  for (std::size_t c = 0; c < 4; ++c) {
    double x = n(gen);
    for (int i = 0; i < 20000; ++i) {
      iid[c].push_back(n(gen));
      shifted[c].push_back(n(gen) + (c == 0 ? 2.0 : 0.0));
      x = rho * x + std::sqrt(1.0 - rho * rho) * n(gen);
      ar[c].push_back(x);
    }
  }
  CHECK(split_rhat(iid) < 1.01);
  CHECK(split_rhat(shifted) > 1.1);
  CHECK(effective_sample_size(iid) == doctest::Approx(80000.0).epsilon(0.1));
  CHECK(effective_sample_size(ar) == doctest::Approx(80000.0 * (1.0 - rho) / (1.0 + rho)).epsilon(0.15));
}

TEST_CASE("SBC with the exact posterior is calibrated") {
  sim::GaussOracle oracle;
  SbcSettings s;
  s.trials = 400;
  s.seed = 8;
  const auto curve = sbc_coverage(oracle, {{2.0}}, conjugate_sampler(oracle), s);
  CHECK(curve.trials == 400);
  CHECK(curve.within_band());
  CHECK(curve.rank_uniformity_pvalue(20, 99)[0] > 0.01);
  for (std::size_t l = 1; l < curve.levels.size(); ++l) CHECK(curve.coverage[0][l] >= curve.coverage[0][l - 1]);
}

TEST_CASE("SBC under mis-specified posteriors") {
  sim::GaussOracle oracle;
  SbcSettings s;
  s.trials = 200;
  s.seed = 9;
  // Ignoring the data still yields uniform ranks: prior draws are marginally calibrated.
  const auto ignored = sbc_coverage(oracle, {{3.0}}, prior_sampler(oracle.prior()), s);
  CHECK(ignored.within_band());
  const auto narrow = sbc_coverage(oracle, {{2.0}}, inflate_variance(conjugate_sampler(oracle), 0.25), s);
  CHECK_FALSE(narrow.within_band());
  CHECK(narrow.coverage[0][narrow.levels.size() / 2] < narrow.band_lower[narrow.levels.size() / 2]);
  const auto wide = sbc_coverage(oracle, {{2.0}}, inflate_variance(conjugate_sampler(oracle), 4.0), s);
  const std::size_t mid = wide.levels.size() / 2;
  CHECK(wide.coverage[0][mid] > wide.band_upper[mid]);
  for (std::size_t l = 0; l < wide.levels.size(); ++l) CHECK(wide.coverage[0][l] >= wide.levels[l]);
}

TEST_CASE("median predictive distance") {
  grad::Tensor same(5, 2, 1.5);
  const double y[] = {1.5, 1.5};
  CHECK(median_distance(same, y) == 0.0);
  grad::Tensor three(3, 1, std::vector<double>{1.0, 2.0, 100.0});
  const double zero[] = {0.0};
  CHECK(median_distance(three, zero) == 2.0);
  CHECK_THROWS(median_distance(grad::Tensor(0, 1), zero));

  const std::size_t n = 100000;
  const double a = 0.3;
  grad::Tensor pred(n, 1);
  auto rng = sim::make_stream(12, sim::StreamId::Sampling);
  for (double& v : pred.data()) v = rng.normal();
  const double obs[] = {a};
  const boost::math::normal_distribution<double> z;
  auto mass = [&](double q) { return boost::math::cdf(z, a + q) - boost::math::cdf(z, a - q) - 0.5; };
  boost::math::tools::eps_tolerance<double> tol(50);
  const auto [lo, hi] = boost::math::tools::bisect(mass, 0.0, 5.0, tol);
  const double q = 0.5 * (lo + hi);
  const double density = boost::math::pdf(z, a + q) + boost::math::pdf(z, a - q);
  const double se = 1.0 / (2.0 * density * std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(median_distance(pred, obs) - q) < 3.0 * se);
}

TEST_CASE("EIG report layout") {
  const auto single = eig_report({{1, {0.9, 1.2}, std::nullopt}});
  CHECK(single["rounds"][1]["eig"]["se"].is_null());
  CHECK(single["l_c2st"] == "n/a (out of scope)");
  const auto three = eig_report({{1, {1.0}, 3.0}, {2, {1.5}, 4.0}, {3, {2.0}, 5.0}});
  CHECK(three["eig"]["mean"].get<double>() == doctest::Approx(1.5));
  CHECK(three["eig"]["se"].get<double>() == doctest::Approx(0.5 / std::sqrt(3.0)));
  CHECK(three["eig"]["se"].get<double>() == doctest::Approx(0.2887).epsilon(1e-4));
  CHECK(three["median_distance"]["mean"].get<double>() == doctest::Approx(4.0));
}

TEST_CASE("resampling rows") {
  grad::Tensor s(3, 1, std::vector<double>{1.0, 2.0, 3.0});
  const auto r = resample_rows(s, 3000, 1, 0);
  std::array<int, 3> counts{};
  for (double v : r.data()) ++counts[static_cast<int>(v) - 1];
  for (int c : counts) CHECK(std::abs(c - 1000) < 150);
  CHECK(resample_rows(s, 10, 1, 0) == resample_rows(s, 10, 1, 0));
  CHECK_THROWS(resample_rows(grad::Tensor(0, 1), 1, 1, 0));
}
