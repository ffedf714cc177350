#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "infodesign/designopt/train.hpp"
#include "infodesign/grad/grad_check.hpp"
#include "infodesign/grad/ops.hpp"
#include "infodesign/objective/mi_bounds.hpp"
#include "infodesign/sim/simulator.hpp"

using namespace infodesign;
using namespace infodesign::objective;

namespace {

struct OracleBatch {
  grad::Tensor y;
  grad::Tensor theta;  // N + L rows
  grad::Tensor xi;
};

OracleBatch oracle_batch(const sim::GaussOracle& oracle, std::size_t n, std::size_t L, double xi, std::uint64_t seed) {
  OracleBatch b{grad::Tensor(n, 1), oracle.prior().sample_table(n + L, seed, sim::StreamId::Prior),
                grad::Tensor(n, 1, xi)};
  for (std::size_t i = 0; i < n; ++i) {
    const double t[] = {b.theta(i, 0)};
    const double x[] = {xi};
    b.y(i, 0) = oracle.simulate(t, x, sim::stream_key(seed, sim::StreamId::Simulator, 0, i))[0];
  }
  return b;
}

flow::FlowConfig oracle_flow_config() {
  flow::FlowConfig c;
  c.y_dim = 1;
  c.theta_dim = 1;
  c.xi_dim = 1;
  c.bijectors = 2;
  c.hidden_layers = 1;
  c.hidden_units = 6;
  c.seed = 3;
  c.xi_lower = {-10.0};
  c.xi_upper = {10.0};
  return c;
}

void perturb(flow::ConditionalFlow& f, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  auto flat = f.flat_parameters();
  for (double& v : flat) v += n(rng);
  f.set_flat_parameters(flat);
}

}  // namespace

TEST_CASE("no contrastive samples gives exactly zero") {
  grad::Tape tape;
  flow::ConditionalFlow f(oracle_flow_config());
  perturb(f, 1, 0.3);
  FlowLikelihood model(f, f.bind(tape, false));
  sim::GaussOracle oracle;
  const auto data = oracle_batch(oracle, 8, 0, 1.5, 2);
  auto batch = shared_contrastive_batch(tape.constant(data.y), tape.constant(data.theta), tape.constant(data.xi), 0, 0.0);
  const auto e = nce_loss(model, batch);
  for (double v : e.per_row) CHECK(v == 0.0);
}

TEST_CASE("true likelihood recovers the analytic information at L = 127") {
  sim::GaussOracle oracle;
  grad::Tape tape;
  GaussianLikelihood model(1.0);
  const std::size_t n = 4000, L = 127;
  const auto data = oracle_batch(oracle, n, L * n, 2.0, 3);
  // Independent contrastive draws per row keep rows independent for the SE.
  grad::Tensor theta(n + n * L, 1);
  for (std::size_t i = 0; i < theta.rows(); ++i) theta(i, 0) = data.theta(i, 0);
  auto batch = per_row_contrastive_batch(tape.constant(data.y), tape.constant(theta), tape.constant(data.xi), L, 0.0);
  const auto e = nce_loss(model, batch);
  const double target = std::min(oracle.analytic_mi(2.0), std::log(128.0));
  CHECK(std::abs(e.value - target) < 3.0 * e.se);
}

TEST_CASE("context-blind flow carries no information") {
  grad::Tape tape;
  flow::ConditionalFlow f(oracle_flow_config());
  FlowLikelihood model(f, f.bind(tape, false));
  sim::GaussOracle oracle;
  const auto data = oracle_batch(oracle, 64, 31, 3.0, 4);
  auto batch = shared_contrastive_batch(tape.constant(data.y), tape.constant(data.theta), tape.constant(data.xi), 31, 0.0);
  const auto e = nce_loss(model, batch);
  CHECK(std::abs(e.value) <= 3.0 * e.se + 1e-12);
}

TEST_CASE("lambda variants agree with each other") {
  grad::Tape tape;
  flow::ConditionalFlow f(oracle_flow_config());
  perturb(f, 5, 0.4);
  FlowLikelihood model(f, f.bind(tape, false));
  sim::GaussOracle oracle;
  const auto data = oracle_batch(oracle, 16, 15, -2.5, 6);
  auto y = tape.constant(data.y);
  auto th = tape.constant(data.theta);
  auto xi = tape.constant(data.xi);

  auto b0 = shared_contrastive_batch(y, th, xi, 15, 0.0);
  const auto nce = nce_loss(model, b0);
  const auto nl0 = nce_lambda_loss(model, b0);
  CHECK(nce.per_row == nl0.per_row);
  CHECK(nce.value == nl0.value);
  CHECK(info_nce_lambda(model, b0).per_row == nce.per_row);

  for (double lambda : {0.1, 0.5, 1.0, -0.3}) {
    auto b = shared_contrastive_batch(y, th, xi, 15, lambda);
    const auto a = nce_lambda_loss(model, b);
    const auto c = info_nce_lambda(model, b);
    for (std::size_t i = 0; i < a.per_row.size(); ++i) CHECK(std::abs(a.per_row[i] - c.per_row[i]) < 1e-10);
  }
}

TEST_CASE("identity flow lambda examples") {
  grad::Tape tape;
  flow::ConditionalFlow f(oracle_flow_config());
  FlowLikelihood model(f, f.bind(tape, false));
  auto y0 = tape.constant(grad::Tensor(1, 1, 0.0));
  auto y1 = tape.constant(grad::Tensor(1, 1, 1.0));
  auto th = tape.constant(grad::Tensor(4, 1, std::vector<double>{0.1, 0.5, -1.0, 2.0}));
  auto xi = tape.constant(grad::Tensor(1, 1, 1.0));
  const auto a = nce_lambda_loss(model, shared_contrastive_batch(y0, th, xi, 3, 1.0));
  CHECK(a.per_row[0] == doctest::Approx(-0.918938533204673).epsilon(1e-12));
  const auto base = info_nce_lambda(model, shared_contrastive_batch(y1, th, xi, 3, 0.0));
  const auto shifted = info_nce_lambda(model, shared_contrastive_batch(y1, th, xi, 3, 0.1));
  CHECK(shifted.per_row[0] - base.per_row[0] == doctest::Approx(0.1 * -1.418938533204673).epsilon(1e-12));
}

TEST_CASE("value is linear in lambda with slope equal to the anchor mean") {
  grad::Tape tape;
  flow::ConditionalFlow f(oracle_flow_config());
  perturb(f, 7, 0.4);
  FlowLikelihood model(f, f.bind(tape, false));
  sim::GaussOracle oracle;
  const auto data = oracle_batch(oracle, 32, 7, 1.0, 8);
  auto y = tape.constant(data.y);
  auto th = tape.constant(data.theta);
  auto xi = tape.constant(data.xi);
  const double h = 0.25;
  const auto lo = nce_lambda_loss(model, shared_contrastive_batch(y, th, xi, 7, 0.3 - h));
  const auto hi = nce_lambda_loss(model, shared_contrastive_batch(y, th, xi, 7, 0.3 + h));
  CHECK((hi.value - lo.value) / (2 * h) == doctest::Approx(lo.anchor_mean).epsilon(1e-10));

  auto est = eig_per_design(model, shared_contrastive_batch(y, th, xi, 7, 0.3), {.lambda_leaf = true}).estimate;
  tape.backward(est.objective);
  CHECK(std::abs(tape.gradient(est.lambda_leaf).item() - est.anchor_mean) < 1e-10);
}

TEST_CASE("per-design EIG on the oracle") {
  sim::GaussOracle oracle;
  GaussianLikelihood model(1.0);
  {
    grad::Tape tape;
    const auto data = oracle_batch(oracle, 64, 31, 1.0, 9);
    auto b = shared_contrastive_batch(tape.constant(data.y), tape.constant(data.theta),
                                      tape.constant(grad::Tensor(1, 1, 1.0)), 31, 0.0);
    const auto d = eig_per_design(model, b);
    REQUIRE(d.per_design.size() == 1);
    CHECK(d.per_design[0] == doctest::Approx(nce_loss(model, b).value).epsilon(1e-14));
  }
  {
    grad::Tape tape;
    const auto data = oracle_batch(oracle, 256, 63, 0.0, 10);
    auto b = shared_contrastive_batch(tape.constant(data.y), tape.constant(data.theta), tape.constant(data.xi), 63, 0.0);
    const auto e = eig_per_design(model, b).estimate;
    CHECK(std::abs(e.value) <= 3.0 * e.se + 1e-12);
  }
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    grad::Tape tape;
    const auto d1 = oracle_batch(oracle, 256, 63, 1.0, 100 + seed);
    const auto d2 = oracle_batch(oracle, 256, 63, 2.0, 100 + seed);
    auto b1 = shared_contrastive_batch(tape.constant(d1.y), tape.constant(d1.theta), tape.constant(d1.xi), 63, 0.0);
    auto b2 = shared_contrastive_batch(tape.constant(d2.y), tape.constant(d2.theta), tape.constant(d2.xi), 63, 0.0);
    if (eig_per_design(model, b2).estimate.value > eig_per_design(model, b1).estimate.value) ++wins;
  }
  CHECK(wins >= 19);
}

TEST_CASE("bound caps hold on random flows and the true likelihood") {
  sim::GaussOracle oracle;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    grad::Tape tape;
    flow::ConditionalFlow f(oracle_flow_config());
    perturb(f, 20 + seed, 1.0);
    FlowLikelihood model(f, f.bind(tape, false));
    const auto data = oracle_batch(oracle, 64, 15, 4.0, 30 + seed);
    auto b = shared_contrastive_batch(tape.constant(data.y), tape.constant(data.theta), tape.constant(data.xi), 15, 0.0);
    const auto e = nce_loss(model, b);
    CHECK(e.value <= e.bound_cap + 3.0 * e.se);
  }
  GaussianLikelihood truth(1.0);
  for (double lambda : {0.1, 1.0}) {
    grad::Tape tape;
    const auto data = oracle_batch(oracle, 2000, 127, 2.0, 40);
    auto b = shared_contrastive_batch(tape.constant(data.y), tape.constant(data.theta), tape.constant(data.xi), 127, lambda);
    const auto e = info_nce_lambda(truth, b);
    CHECK(e.value <= e.bound_cap - lambda * oracle.conditional_entropy() + 3.0 * e.se);
  }
}

TEST_CASE("contrastive-ratio form versus the InfoNCE form") {
  grad::Tape tape;
  flow::ConditionalFlow f(oracle_flow_config());
  perturb(f, 11, 0.5);
  FlowLikelihood model(f, f.bind(tape, false));
  sim::GaussOracle oracle;
  const auto data = oracle_batch(oracle, 64, 7, 2.0, 12);
  auto b = shared_contrastive_batch(tape.constant(data.y), tape.constant(data.theta), tape.constant(data.xi), 7, 0.0);
  const auto cre = cre_loss(model, b);
  const auto nce = nce_loss(model, b);
  // The two forms differ by log(mean_{0..L} p / mean_{1..L} p), which has the
  // sign of p0 - mean_{1..L} p, so neither form dominates row by row.
  std::size_t above = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    const double gap = cre.per_row[i] - nce.per_row[i];
    const double share = std::exp(nce.per_row[i] - std::log(8.0));  // p0 / sum_{0..L} p
    CHECK(gap == doctest::Approx(std::log(7.0 / 8.0) - std::log1p(-share)).epsilon(1e-9));
    if (std::abs(share - 1.0 / 8.0) > 1e-9) CHECK((gap > 0.0) == (share > 1.0 / 8.0));
    if (gap > 0.0) ++above;
  }
  CHECK(above > 0);
  CHECK(above < 64);
}

TEST_CASE("NWJ bound examples") {
  sim::GaussOracle oracle;
  const std::size_t n = 10000;
  JointSamples s{grad::Tensor(n, 1), oracle.prior().sample_table(n, 50, sim::StreamId::Prior), grad::Tensor(1, 1, 2.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const double t[] = {s.theta(i, 0)};
    const double x[] = {2.0};
    s.y(i, 0) = oracle.simulate(t, x, sim::stream_key(50, sim::StreamId::Simulator, 0, i))[0];
  }
  auto one = [](auto, auto, auto) { return 1.0; };
  auto zero = [](auto, auto, auto) { return 0.0; };
  CHECK(std::abs(nwj_bound(one, s, 3).value) < 1e-12);
  CHECK(nwj_bound(zero, s, 3).value == doctest::Approx(-std::exp(-1.0)));
  auto ratio = [&](std::span<const double> y, std::span<const double> t, std::span<const double> x) {
    const double var_y = x[0] * x[0] + 1.0;
    const double log_marginal = -0.5 * y[0] * y[0] / var_y - 0.5 * std::log(2.0 * std::numbers::pi * var_y);
    return oracle.log_likelihood(y[0], t[0], x[0]) - log_marginal + 1.0;
  };
  const auto e = nwj_bound(ratio, s, 20);
  CHECK(std::abs(e.value - oracle.analytic_mi(2.0)) < 3.0 * e.se);
  auto huge = [](auto, auto, auto) { return 1000.0; };
  CHECK_THROWS_AS(nwj_bound(huge, s, 1), std::overflow_error);
}

TEST_CASE("validation log-likelihood of the identity flow") {
  flow::ConditionalFlow f(oracle_flow_config());
  const std::size_t n = 20000;
  JointSamples s{grad::Tensor(n, 1), grad::Tensor(n, 1, 0.5), grad::Tensor(1, 1, 1.0)};
  auto rng = sim::make_stream(60, sim::StreamId::Validation);
  for (double& v : s.y.data()) v = rng.normal();
  const auto e = validation_loglik(f, s);
  CHECK(std::abs(e.mean + 0.5 * (1.0 + std::log(2.0 * std::numbers::pi))) < 3.0 * e.se);
  JointSamples empty{grad::Tensor(0, 1), grad::Tensor(0, 1), grad::Tensor()};
  CHECK_THROWS(validation_loglik(f, empty));
}

TEST_CASE("loss gradients with respect to flow parameters and designs") {
  sim::GaussOracle oracle;
  const auto data = oracle_batch(oracle, 6, 5, 1.0, 70);
  flow::ConditionalFlow f(oracle_flow_config());
  perturb(f, 71, 0.4);
  grad::Tensor xi(6, 1, std::vector<double>{-3.0, -1.0, 0.5, 2.0, 4.0, 7.0});
  for (double lambda : {0.0, 0.7}) {
    auto wrt_xi = [&](grad::Tape& t, grad::Var x) {
      FlowLikelihood model(f, f.bind(t, false));
      auto b = shared_contrastive_batch(t.constant(data.y), t.constant(data.theta), x, 5, lambda);
      return info_nce_lambda(model, b).objective;
    };
    CHECK(grad::grad_check(wrt_xi, xi).max_rel_error < 1e-4);
    auto wrt_theta = [&](grad::Tape& t, grad::Var th) {
      FlowLikelihood model(f, f.bind(t, false));
      auto b = shared_contrastive_batch(t.constant(data.y), th, t.constant(xi), 5, lambda);
      return nce_lambda_loss(model, b).objective;
    };
    CHECK(grad::grad_check(wrt_theta, data.theta).max_rel_error < 1e-4);
    const auto base = f.flat_parameters();
    auto wrt_phi = [&](grad::Tape& t, grad::Var flat) {
      flow::ConditionalFlow::Bound bound;
      std::size_t offset = 0;
      for (const auto& p : f.parameters()) {
        bound.params.push_back(grad::reshape(grad::slice_cols(flat, offset, p.size()), p.rows(), p.cols()));
        offset += p.size();
      }
      FlowLikelihood model(f, bound);
      auto b = shared_contrastive_batch(t.constant(data.y), t.constant(data.theta), t.constant(xi), 5, lambda);
      return eig_per_design(model, b).estimate.objective;
    };
    CHECK(grad::grad_check(wrt_phi, grad::Tensor(1, base.size(), base)).max_rel_error < 1e-4);
  }
}

TEST_CASE("batch layouts") {
  grad::Tape tape;
  auto y = tape.constant(grad::Tensor(3, 1, std::vector<double>{0.1, 0.2, 0.3}));
  auto th = tape.constant(grad::Tensor(3, 1, std::vector<double>{1.0, 2.0, 3.0}));
  const auto b = in_batch_contrastive_batch(y, th, grad::Var{}, 0.0);
  CHECK(b.L == 2);
  CHECK(b.contrast == std::vector<std::uint32_t>{1, 2, 0, 2, 0, 1});
  CHECK_THROWS(shared_contrastive_batch(y, th, grad::Var{}, 2, 0.0));
  auto bad = b;
  bad.lambda = -2.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("held-out InfoNCE of a context-blind flow is zero") {
  sim::GaussOracle oracle;
  const double xi[] = {2.0};
  const auto held_out = designopt::simulate_joint(oracle, 200, xi, 3);
  CHECK(held_out.theta.rows() == 200);
  CHECK(held_out.xi.rows() == 1);
  flow::FlowConfig c;
  c.xi_dim = 1;
  c.hidden_units = 4;
  c.fill_defaults();
  flow::ConditionalFlow identity(c);
  const auto contrastive = oracle.prior().sample_table(15, 4, sim::StreamId::Validation, 2);
  const auto e = objective::heldout_info_nce(identity, held_out, contrastive);
  CHECK(std::abs(e.value) < 1e-12);
  CHECK_THROWS(objective::heldout_info_nce(identity, objective::JointSamples{}, contrastive));
}
