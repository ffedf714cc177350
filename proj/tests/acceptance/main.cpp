#include <chrono>
#include <cstdio>
#include <exception>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "acceptance.hpp"

namespace infodesign::acceptance {

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> list{
      {1, "gradient suite", 60, gradient_suite},
      {2, "flow correctness", 120, flow_correctness},
      {3, "analytic MI recovery", 600, analytic_mi_recovery},
      {4, "bound caps", 600, bound_caps},
      {5, "lambda identity", 10, lambda_identity},
      {6, "two-moons trends", 1800, two_moons_trends},
      {7, "linear EIG grows with design dimension", 1800, linear_dimension_trend},
      {8, "SIR sigma schedule ablation", 1800, sir_sigma_ablation},
      {9, "design optimality on the oracle", 300, oracle_design_optimality},
      {10, "checkpoint invariant", 600, checkpoint_invariant},
      {11, "calibration", 1200, calibration},
      {12, "MCMC correctness", 120, mcmc_correctness},
      {13, "reproducibility", 600, reproducibility},
  };
  return list;
}

}  // namespace infodesign::acceptance

int main(int argc, char** argv) {
  using namespace infodesign::acceptance;
  CLI::App app{"Acceptance criteria; prints one PASS/FAIL line per criterion"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "criterion number(s) to run; all when omitted")->check(CLI::Range(1, 13));
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  bool all_pass = true;
  for (const auto& c : criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      out.pass = false;
      out.detail += fmt::format("; over the {:.0f} s budget", c.budget_seconds);
    }
    all_pass = all_pass && out.pass;
    std::printf("criterion %d %s: %s (%s; %.1f s)\n", c.id, c.title, out.pass ? "PASS" : "FAIL", out.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
