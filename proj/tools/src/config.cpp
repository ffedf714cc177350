#include "infodesign/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "infodesign/inference/diagnostics.hpp"

namespace infodesign::cli {
namespace {

using nlohmann::json;

// Reads the keys of one object and rejects anything it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", label()));
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("{}.{}: wrong type", label(), key));
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(fmt::format("{}: unknown key '{}'", label(), item.key()));
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* observation_name(sim::SirObservation o) {
  switch (o) {
    case sim::SirObservation::Poisson: return "poisson";
    case sim::SirObservation::Gaussian: return "gaussian";
    case sim::SirObservation::None: return "none";
  }
  return "gaussian";
}

sim::SirObservation parse_observation(const std::string& s) {
  if (s == "poisson") return sim::SirObservation::Poisson;
  if (s == "gaussian") return sim::SirObservation::Gaussian;
  if (s == "none") return sim::SirObservation::None;
  throw ConfigError(fmt::format("simulator.observation: unknown value '{}'", s));
}

void read_train(Section s, designopt::TrainSettings& t) {
  s.get("steps", t.steps);
  s.get("batch", t.batch);
  s.get("contrastive", t.contrastive);
  s.get("lambda", t.lambda);
  s.get("lr_flow", t.lr_flow);
  s.get("lr_design", t.lr_design);
  s.get("lr_anneal", t.lr_anneal);
  s.get("lr_final", t.lr_final);
  s.get("clip", t.clip);
  s.get("design_beta2", t.design_beta2);
  s.get("plateau_patience", t.plateau_patience);
  s.get("plateau_smoothing", t.plateau_smoothing);
  s.get("optimize_design", t.optimize_design);
  s.get("per_row_contrastive", t.per_row_contrastive);
  s.finish();
}

void read_mcmc(Section s, inference::McmcSettings& m) {
  s.get("chains", m.chains);
  s.get("warmup", m.warmup);
  s.get("draws", m.draws);
  s.get("thin", m.thin);
  s.get("target_acceptance", m.target_acceptance);
  s.finish();
}

json mcmc_json(const inference::McmcSettings& m) {
  return json{{"chains", m.chains},
              {"warmup", m.warmup},
              {"draws", m.draws},
              {"thin", m.thin},
              {"target_acceptance", m.target_acceptance}};
}

void read_simulator(Section s, RunConfig& c) {
  if (c.task == "gauss-oracle") {
    s.get("sigma_theta", c.gauss.sigma_theta);
    s.get("sigma_eps", c.gauss.sigma_eps);
    s.get("bound", c.gauss.bound);
  } else if (c.task == "linear") {
    s.get("design_dim", c.linear.design_dim);
    s.get("prior_sd", c.linear.prior_sd);
    s.get("gamma_shape", c.linear.gamma_shape);
    s.get("gamma_rate", c.linear.gamma_rate);
    s.get("bound", c.linear.bound);
    s.get("noise", c.linear.noise);
    s.get("gamma_noise", c.linear.gamma_noise);
  } else if (c.task == "sir") {
    s.get("dt", c.sir.dt);
    s.get("t_max", c.sir.t_max);
    s.get("population", c.sir.population);
    s.get("initial_infected", c.sir.initial_infected);
    s.get("noise_scale", c.sir.noise_scale);
    std::string obs = observation_name(c.sir.observation);
    s.get("observation", obs);
    c.sir.observation = parse_observation(obs);
    s.get("interpolate", c.sir.interpolate);
    s.get("log_beta_mean", c.sir.log_beta_mean);
    s.get("log_beta_sd", c.sir.log_beta_sd);
    s.get("log_gamma_mean", c.sir.log_gamma_mean);
    s.get("log_gamma_sd", c.sir.log_gamma_sd);
  }
  s.finish();
}

json simulator_json(const RunConfig& c) {
  if (c.task == "gauss-oracle") {
    return json{{"sigma_theta", c.gauss.sigma_theta}, {"sigma_eps", c.gauss.sigma_eps}, {"bound", c.gauss.bound}};
  }
  if (c.task == "linear") {
    return json{{"design_dim", c.linear.design_dim}, {"prior_sd", c.linear.prior_sd},
                {"gamma_shape", c.linear.gamma_shape}, {"gamma_rate", c.linear.gamma_rate},
                {"bound", c.linear.bound}, {"noise", c.linear.noise}, {"gamma_noise", c.linear.gamma_noise}};
  }
  if (c.task == "sir") {
    return json{{"dt", c.sir.dt},
                {"t_max", c.sir.t_max},
                {"population", c.sir.population},
                {"initial_infected", c.sir.initial_infected},
                {"noise_scale", c.sir.noise_scale},
                {"observation", observation_name(c.sir.observation)},
                {"interpolate", c.sir.interpolate},
                {"log_beta_mean", c.sir.log_beta_mean},
                {"log_beta_sd", c.sir.log_beta_sd},
                {"log_gamma_mean", c.sir.log_gamma_mean},
                {"log_gamma_sd", c.sir.log_gamma_sd}};
  }
  return json::object();
}

void set_bounds(RunConfig& c) {
  const auto simulator = make_simulator(c);
  const auto& b = simulator->bounds();
  c.design.lower = b.lower;
  c.design.upper = b.upper;
  if (!c.design.lower.empty()) {
    const double width = c.design.upper[0] - c.design.lower[0];
    c.design.sigma_start = width / 10.0;
    c.design.sigma_end = width / 200.0;
  }
}

}  // namespace

RunConfig default_config(const std::string& task) {
  RunConfig c;
  c.task = task;
  c.name = task;
  auto& t = c.train;
  if (task == "linear") {
    t.batch = 10;
    t.contrastive = 50;
    t.steps = 10000;
    t.lr_flow = t.lr_design = 1e-3;
    t.lr_anneal = 1.0;
    t.lr_final = 1e-4;
    t.clip = 0.0;
    c.flow.hidden_units = 128;
    c.flow.hidden_layers = 4;
    c.flow.bijectors = 5;
  } else if (task == "sir") {
    t.batch = 256;
    t.contrastive = 255;
    t.steps = 10000;
    t.lr_flow = t.lr_design = 1e-3;
    t.lr_anneal = 0.8;
    t.lr_final = 1e-4;
    t.clip = 5.0;
    c.flow.hidden_units = 64;
    c.flow.hidden_layers = 2;
    c.flow.bijectors = 5;
    c.ground_truth = {0.7399, 0.0924};
  } else if (task == "gauss-oracle") {
    t.batch = 32;
    t.contrastive = 127;
    t.steps = 2000;
    t.lr_flow = 3e-3;
    t.lr_design = 5e-2;
    t.lr_anneal = 1.0;
    t.lr_final = 1e-4;
    t.clip = 5.0;
    c.flow.hidden_units = 32;
    c.flow.hidden_layers = 2;
    c.flow.bijectors = 5;
    c.sweep.contrastive = {127};
    c.sweep.lambda = {0.0};
    c.sweep.design = {2.0};
  } else if (task == "two-moons") {
    t.batch = 128;
    t.contrastive = 127;
    t.steps = 5000;
    t.lr_flow = t.lr_design = 1e-3;
    t.lr_anneal = 0.8;
    t.lr_final = 1e-4;
    t.clip = 5.0;
    t.optimize_design = false;
    c.flow.hidden_units = 64;
    c.flow.hidden_layers = 2;
    c.flow.bijectors = 5;
    c.sweep.contrastive = {7, 127};
    c.sweep.lambda = {0.0};
  } else {
    throw ConfigError(fmt::format("task: unknown value '{}'", task));
  }
  c.sbc.levels = inference::SbcSettings{}.levels;
  c.sbc.mcmc.warmup = 500;
  c.sbc.mcmc.draws = 500;
  set_bounds(c);
  return c;
}

RunConfig parse_config(const json& raw) {
  if (!raw.is_object()) throw ConfigError("config: expected an object");
  if (raw.contains("config_hash") && raw.contains("config")) {
    RunConfig c = parse_config(raw.at("config"));
    const std::string expected = raw.at("config_hash").get<std::string>();
    if (hex64(config_hash(c)) != expected) throw ConfigError("manifest config does not match its hash");
    return c;
  }
  if (!raw.contains("task") || !raw.at("task").is_string()) throw ConfigError("task: required string");
  RunConfig c = default_config(raw.at("task").get<std::string>());
  Section s(raw, "");
  s.get("schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion) {
    throw ConfigError(fmt::format("schema_version: expected {}, got {}", kSchemaVersion, c.schema_version));
  }
  s.get("task", c.task);
  s.get("name", c.name);
  s.get("output_dir", c.output_dir);
  s.get("seeds", c.seeds);
  s.get("rounds", c.rounds);
  s.get("pool_size", c.pool_size);
  s.get("ground_truth", c.ground_truth);
  s.get("posterior_flows", c.posterior_flows);
  s.get("predictive_draws", c.predictive_draws);

  if (s.has("simulator")) {
    read_simulator(Section(s.at("simulator"), "simulator"), c);
    // Bounds follow the simulator unless the design section overrides them.
    set_bounds(c);
  }
  if (s.has("train")) read_train(Section(s.at("train"), "train"), c.train);
  if (s.has("design")) {
    Section d(s.at("design"), "design");
    d.get("mu", c.design.mu);
    d.get("sigma_start", c.design.sigma_start);
    d.get("sigma_end", c.design.sigma_end);
    d.get("rho", c.design.rho);
    d.get("lower", c.design.lower);
    d.get("upper", c.design.upper);
    d.finish();
  }
  if (s.has("flow")) {
    Section f(s.at("flow"), "flow");
    f.get("bijectors", c.flow.bijectors);
    f.get("hidden_layers", c.flow.hidden_layers);
    f.get("hidden_units", c.flow.hidden_units);
    f.get("bins", c.flow.bins);
    f.get("tail_bound", c.flow.tail_bound);
    f.get("pilot", c.flow.pilot);
    f.finish();
  }
  if (s.has("mcmc")) read_mcmc(Section(s.at("mcmc"), "mcmc"), c.mcmc);
  if (s.has("sweep")) {
    Section w(s.at("sweep"), "sweep");
    w.get("contrastive", c.sweep.contrastive);
    w.get("lambda", c.sweep.lambda);
    w.get("design", c.sweep.design);
    w.get("validation", c.sweep.validation);
    w.get("eval_every", c.sweep.eval_every);
    w.finish();
  }
  if (s.has("sbc")) c.sbc = parse_sbc(s.at("sbc"), c.sbc);
  s.finish();
  validate(c);
  return c;
}

SbcConfig parse_sbc(const json& j, SbcConfig base) {
  Section b(j, "sbc");
  b.get("trials", base.trials);
  b.get("draws", base.draws);
  b.get("levels", base.levels);
  if (b.has("mcmc")) read_mcmc(Section(b.at("mcmc"), "sbc.mcmc"), base.mcmc);
  b.finish();
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  return json{
      {"schema_version", c.schema_version},
      {"task", c.task},
      {"name", c.name},
      {"output_dir", c.output_dir},
      {"seeds", c.seeds},
      {"rounds", c.rounds},
      {"pool_size", c.pool_size},
      {"ground_truth", c.ground_truth},
      {"posterior_flows", c.posterior_flows},
      {"predictive_draws", c.predictive_draws},
      {"simulator", simulator_json(c)},
      {"train",
       {{"steps", t.steps},
        {"batch", t.batch},
        {"contrastive", t.contrastive},
        {"lambda", t.lambda},
        {"lr_flow", t.lr_flow},
        {"lr_design", t.lr_design},
        {"lr_anneal", t.lr_anneal},
        {"lr_final", t.lr_final},
        {"clip", t.clip},
        {"design_beta2", t.design_beta2},
        {"plateau_patience", t.plateau_patience},
        {"plateau_smoothing", t.plateau_smoothing},
        {"optimize_design", t.optimize_design},
        {"per_row_contrastive", t.per_row_contrastive}}},
      {"design",
       {{"mu", c.design.mu},
        {"sigma_start", c.design.sigma_start},
        {"sigma_end", c.design.sigma_end},
        {"rho", c.design.rho},
        {"lower", c.design.lower},
        {"upper", c.design.upper}}},
      {"flow",
       {{"bijectors", c.flow.bijectors},
        {"hidden_layers", c.flow.hidden_layers},
        {"hidden_units", c.flow.hidden_units},
        {"bins", c.flow.bins},
        {"tail_bound", c.flow.tail_bound},
        {"pilot", c.flow.pilot}}},
      {"mcmc", mcmc_json(c.mcmc)},
      {"sweep",
       {{"contrastive", c.sweep.contrastive},
        {"lambda", c.sweep.lambda},
        {"design", c.sweep.design},
        {"validation", c.sweep.validation},
        {"eval_every", c.sweep.eval_every}}},
      {"sbc",
       {{"trials", c.sbc.trials}, {"draws", c.sbc.draws}, {"levels", c.sbc.levels}, {"mcmc", mcmc_json(c.sbc.mcmc)}}},
  };
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(config).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

void validate(const RunConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (c.name.empty() || c.name.find('/') != std::string::npos) fail("name: must be a non-empty file name");
  if (c.seeds.empty()) fail("seeds: at least one seed required");
  if (c.rounds == 0) fail("rounds: must be at least 1");
  if (c.pool_size == 0) fail("pool_size: must be positive");
  if (c.posterior_flows != "per-round" && c.posterior_flows != "latest") {
    fail("posterior_flows: expected 'per-round' or 'latest'");
  }
  if (c.flow.pilot < 2) fail("flow.pilot: need at least 2 simulations");
  if (c.sbc.trials < 1 || c.sbc.draws < 1) fail("sbc: trials and draws must be positive");
  for (double l : c.sbc.levels) {
    if (!(l > 0.0 && l < 1.0)) fail("sbc.levels: levels must lie in (0, 1)");
  }
  for (std::size_t L : c.sweep.contrastive) {
    if (L == 0) fail("sweep.contrastive: L must be positive");
  }
  for (double l : c.sweep.lambda) {
    if (!std::isfinite(l) || l < 0.0) fail("sweep.lambda: values must be finite and non-negative");
  }
  try {
    const auto simulator = make_simulator(c);
    c.train.validate();
    flow::SplineSettings spline;
    spline.bins = c.flow.bins;
    spline.tail_bound = c.flow.tail_bound;
    spline.validate();
    if (c.flow.bijectors == 0 || c.flow.hidden_units == 0) fail("flow: bijectors and hidden_units must be positive");
    const std::size_t d = simulator->xi_dim();
    if (c.design.lower.size() != d || c.design.upper.size() != d) fail("design: bounds must match the design dimension");
    if (!c.design.mu.empty() && c.design.mu.size() != d) fail("design.mu: wrong dimension");
    if (c.design.sigma_start < 0.0 || c.design.sigma_end < 0.0 || c.design.rho < 0.0) {
      fail("design: sigma and rho must be non-negative");
    }
    sim::DesignBounds{c.design.lower, c.design.upper}.validate();
    if (!c.sweep.design.empty() && c.sweep.design.size() != d) fail("sweep.design: wrong dimension");
    if (!c.ground_truth.empty()) {
      if (c.ground_truth.size() != simulator->theta_dim()) fail("ground_truth: wrong dimension");
      if (!simulator->prior().in_support(c.ground_truth)) fail("ground_truth: outside the prior support");
    }
    if (c.mcmc.chains == 0 || c.mcmc.draws == 0) fail("mcmc: chains and draws must be positive");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::unique_ptr<sim::Simulator> make_simulator(const RunConfig& c) {
  try {
    if (c.task == "gauss-oracle") return std::make_unique<sim::GaussOracle>(c.gauss);
    if (c.task == "linear") return std::make_unique<sim::LinearSimulator>(c.linear);
    if (c.task == "sir") return std::make_unique<sim::SirSimulator>(c.sir);
    if (c.task == "two-moons") return std::make_unique<sim::TwoMoons>();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("simulator: {}", e.what()));
  }
  throw ConfigError(fmt::format("task: unknown value '{}'", c.task));
}

flow::FlowConfig make_flow_config(const RunConfig& c, const sim::Simulator& simulator, std::uint64_t seed) {
  flow::FlowConfig base;
  base.bijectors = c.flow.bijectors;
  base.hidden_layers = c.flow.hidden_layers;
  base.hidden_units = c.flow.hidden_units;
  base.spline.bins = c.flow.bins;
  base.spline.tail_bound = c.flow.tail_bound;
  base.seed = seed;
  return designopt::standardized_flow_config(simulator, base, c.flow.pilot, seed);
}

designopt::SequentialSettings make_sequential(const RunConfig& c, const sim::Simulator& simulator,
                                              std::uint64_t seed) {
  designopt::SequentialSettings s;
  s.rounds = c.rounds;
  s.pool_size = c.pool_size;
  s.ground_truth = c.ground_truth;
  s.seed = seed;
  s.train = c.train;
  s.mcmc = c.mcmc;
  s.posterior_flows = c.posterior_flows == "latest" ? designopt::PosteriorFlows::Latest
                                                    : designopt::PosteriorFlows::PerRound;
  s.design.bounds = sim::DesignBounds{c.design.lower, c.design.upper};
  s.design.sigma_start = c.design.sigma_start;
  s.design.sigma_end = c.design.sigma_end;
  s.design.rho = c.design.rho;
  if (c.design.mu.empty()) {
    s.random_initial_design = true;
    s.design.mu.resize(simulator.xi_dim());
    for (std::size_t d = 0; d < s.design.mu.size(); ++d) {
      s.design.mu[d] = 0.5 * (c.design.lower[d] + c.design.upper[d]);
    }
  } else {
    s.design.mu = c.design.mu;
  }
  return s;
}

}  // namespace infodesign::cli
