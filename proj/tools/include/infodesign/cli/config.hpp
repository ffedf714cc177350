#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infodesign/designopt/sequential.hpp"
#include "infodesign/flow/conditional_flow.hpp"
#include "infodesign/inference/posterior.hpp"
#include "infodesign/sim/sir.hpp"

namespace infodesign::cli {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DesignConfig {
  std::vector<double> mu;  // empty draws a uniform start per round
  double sigma_start = 0.0;
  double sigma_end = 0.0;
  double rho = 5.0;
  std::vector<double> lower;
  std::vector<double> upper;
};

struct FlowSettings {
  std::size_t bijectors = 5;
  std::size_t hidden_layers = 2;
  std::size_t hidden_units = 64;
  int bins = 4;
  double tail_bound = 5.0;
  std::size_t pilot = 1000;  // simulations used to standardize outcomes
};

struct SweepConfig {
  std::vector<std::size_t> contrastive;
  std::vector<double> lambda;
  std::vector<double> design;     // fixed design for every cell
  std::size_t validation = 2000;  // held-out pairs
  std::size_t eval_every = 100;
};

struct SbcConfig {
  std::size_t trials = 200;
  std::size_t draws = 99;
  std::vector<double> levels;
  inference::McmcSettings mcmc;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string task;
  std::string name;
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds{0};
  std::size_t rounds = 1;
  std::size_t pool_size = 10000;
  std::vector<double> ground_truth;
  std::string posterior_flows = "per-round";
  std::size_t predictive_draws = 1000;  // posterior predictive samples for the median distance

  designopt::TrainSettings train;
  DesignConfig design;
  FlowSettings flow;
  inference::McmcSettings mcmc;
  SweepConfig sweep;
  SbcConfig sbc;

  sim::GaussOracleSettings gauss;
  sim::LinearSettings linear;
  sim::SirSettings sir;
};

// Per-task defaults; unknown tasks throw ConfigError.
RunConfig default_config(const std::string& task);

// Strict parse: unknown keys and invalid values throw ConfigError. A run
// manifest is accepted too; its embedded config must match its hash.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

// Every field, defaults included, in a fixed key order.
nlohmann::json to_json(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);
std::string hex64(std::uint64_t value);

void validate(const RunConfig& config);

// Overrides fields of `base` from a partial sbc section.
SbcConfig parse_sbc(const nlohmann::json& j, SbcConfig base);

std::unique_ptr<sim::Simulator> make_simulator(const RunConfig& config);
flow::FlowConfig make_flow_config(const RunConfig& config, const sim::Simulator& simulator, std::uint64_t seed);
designopt::SequentialSettings make_sequential(const RunConfig& config, const sim::Simulator& simulator,
                                              std::uint64_t seed);

}  // namespace infodesign::cli
