#include <benchmark/benchmark.h>

#include <random>

#include "infodesign/flow/conditional_flow.hpp"
#include "infodesign/flow/rq_spline.hpp"
#include "infodesign/grad/ops.hpp"
#include "infodesign/sim/sir.hpp"

using namespace infodesign;

namespace {

grad::Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  grad::Tensor t(rows, cols);
  for (double& v : t.data()) v = n(rng);
  return t;
}

flow::FlowConfig flow_config(std::size_t y_dim) {
  flow::FlowConfig c;
  c.y_dim = y_dim;
  c.theta_dim = 2;
  c.xi_dim = 1;
  c.hidden_units = 64;
  c.xi_lower = {-10.0};
  c.xi_upper = {10.0};
  c.seed = 3;
  return c;
}

void BM_SplineForwardRaw(benchmark::State& state) {
  flow::SplineSettings settings;
  settings.bins = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  const auto raw = random_tensor(rng, 1, settings.raw_size());
  double x = -4.0;
  for (auto _ : state) {
    auto v = flow::rq_spline_forward_raw(x, raw.data().data(), settings);
    benchmark::DoNotOptimize(v);
    x = x > 4.0 ? -4.0 : x + 0.01;
  }
}
BENCHMARK(BM_SplineForwardRaw)->Arg(4)->Arg(8)->Arg(16);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const auto a = random_tensor(rng, n, 64);
  const auto b = random_tensor(rng, 64, 64);
  for (auto _ : state) {
    grad::Tape tape;
    grad::Var x = tape.parameter(a);
    grad::Var out = grad::sum(grad::matmul(x, tape.constant(b)));
    tape.backward(out);
    benchmark::DoNotOptimize(tape.gradient(x));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(256)->Arg(4096);

// Forward and backward through a 5-bijector flow for a batch of pairs, the
// shape of one training step's likelihood evaluation.
void BM_FlowLogProb(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto y_dim = static_cast<std::size_t>(state.range(1));
  flow::ConditionalFlow flow(flow_config(y_dim));
  std::mt19937_64 rng(4);
  const auto y = random_tensor(rng, n, y_dim);
  const auto theta = random_tensor(rng, n, 2);
  const auto xi = random_tensor(rng, n, 1, 3.0);
  for (auto _ : state) {
    grad::Tape tape;
    const auto bound = flow.bind(tape, true);
    grad::Var lp = grad::sum(flow.log_prob(bound, flow::aligned_inputs(tape.constant(y), tape.constant(theta),
                                                                        tape.constant(xi))));
    tape.backward(lp);
    benchmark::DoNotOptimize(tape.parameter_gradients());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_FlowLogProb)->Args({128, 1})->Args({4096, 1})->Args({128, 2})->Args({4096, 2});

void BM_SirPregrid(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  sim::SirSettings settings;
  std::mt19937_64 rng(5);
  grad::Tensor thetas(n, 2);
  std::lognormal_distribution<double> beta(settings.log_beta_mean, settings.log_beta_sd);
  std::lognormal_distribution<double> gamma(settings.log_gamma_mean, settings.log_gamma_sd);
  for (std::size_t i = 0; i < n; ++i) {
    thetas(i, 0) = beta(rng);
    thetas(i, 1) = gamma(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(sim::sir_pregrid(thetas, 7, settings));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_SirPregrid)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
