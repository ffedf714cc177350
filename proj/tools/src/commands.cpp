#include "infodesign/cli/commands.hpp"

#include <cmath>
#include <cstdlib>
#include <ostream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "infodesign/cli/output.hpp"
#include "infodesign/flow/checkpoint.hpp"
#include "infodesign/inference/diagnostics.hpp"
#include "infodesign/sim/rng.hpp"

namespace infodesign::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string seed_dir_name(std::uint64_t seed) { return fmt::format("seed_{}", seed); }
std::string checkpoint_name(std::size_t step) { return fmt::format("checkpoint_{}.bin", step); }

void write_checkpoint_file(const fs::path& path, const flow::FlowConfig& config, std::uint64_t seed,
                           std::size_t step, std::vector<double> parameters, std::size_t round) {
  flow::Checkpoint ck;
  ck.config = config;
  ck.seed = seed;
  ck.step = step;
  ck.parameters = std::move(parameters);
  ck.meta = json{{"updates", step}, {"round", round}};
  flow::write_checkpoint(path, ck);
}

std::vector<double> column_sd(const inference::PosteriorSampleSet& set) {
  auto v = set.variance();
  for (double& x : v) x = std::sqrt(x);
  return v;
}

// Median distance between y_obs and outcomes simulated from evenly spaced
// posterior draws at the round's design.
double predictive_median_distance(const sim::Simulator& simulator, const inference::PosteriorSampleSet& set,
                                  const inference::Observation& obs, std::size_t draws, std::uint64_t seed,
                                  std::size_t round) {
  const std::size_t total = set.samples.rows();
  const std::size_t n = std::min(draws, total);
  grad::Tensor predictive(n, simulator.y_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = (2 * i + 1) * total / (2 * n);
    simulator.simulate(set.samples.row_span(k), obs.xi, sim::stream_key(seed, sim::StreamId::Sampling, round, i),
                       predictive.row_span(i));
  }
  return inference::median_distance(predictive, obs.y);
}

std::vector<std::string> numbers(const std::vector<double>& v) {
  std::vector<std::string> out;
  for (double x : v) out.push_back(format_double(x));
  return out;
}

void append(std::vector<std::string>& a, const std::vector<std::string>& b) { a.insert(a.end(), b.begin(), b.end()); }

json boed_seed(const RunConfig& config, std::uint64_t seed, const fs::path& dir, std::size_t jobs,
               inference::SeedRecord& record) {
  fs::create_directories(dir);
  const auto simulator = make_simulator(config);
  const std::size_t xd = simulator->xi_dim();
  const std::size_t td = simulator->theta_dim();
  const std::size_t yd = simulator->y_dim();
  flow::ConditionalFlow flow(make_flow_config(config, *simulator, seed));
  auto settings = make_sequential(config, *simulator, seed);
  settings.train.jobs = jobs;

  CsvWriter metrics(dir / "metrics.csv", metrics_header(xd));
  CsvWriter timing(dir / "timing.csv", {"round", "step", "wall_time"});
  std::vector<std::string> sample_header{"round", "chain"};
  append(sample_header, indexed("theta", td));
  CsvWriter samples(dir / "posterior_samples.csv", sample_header);
  std::vector<std::string> round_header{"round"};
  append(round_header, indexed("xi_star", xd));
  append(round_header, {"eig_star", "checkpoint_step"});
  append(round_header, indexed("y_obs", yd));
  append(round_header, indexed("posterior_mean", td));
  append(round_header, indexed("posterior_sd", td));
  append(round_header, indexed("rhat", td));
  append(round_header, indexed("ess", td));
  append(round_header, {"acceptance", "rhat_flag", "median_distance"});
  CsvWriter rounds(dir / "rounds.csv", round_header);

  json round_entries = json::array();
  designopt::SequentialHooks hooks;
  hooks.on_step = [&](const designopt::StepRow& row, const flow::ConditionalFlow&) {
    metrics.row(metrics_cells(row));
    timing.row({std::to_string(row.round), std::to_string(row.step), format_double(row.wall_time)});
  };
  hooks.on_round = [&](const designopt::RoundReport& r, const flow::ConditionalFlow& f) {
    metrics.flush();
    timing.flush();
    const auto& ck = r.training.checkpoint;
    const std::size_t end_step = r.training.rows.empty() ? 0 : r.training.rows.back().step + 1;
    write_checkpoint_file(dir / checkpoint_name(ck.step), f.config(), seed, ck.step, ck.parameters, r.round);
    write_checkpoint_file(dir / checkpoint_name(end_step), f.config(), seed, end_step, f.flat_parameters(), r.round);
    write_posterior_samples(samples, r.round, r.posterior);
    samples.flush();

    const double med = predictive_median_distance(*simulator, r.posterior, r.observation, config.predictive_draws,
                                                  seed, r.round);
    double acceptance = 0.0;
    for (double a : r.posterior.acceptance) acceptance += a / static_cast<double>(r.posterior.acceptance.size());
    const auto mean = r.posterior.mean();
    const auto sd = column_sd(r.posterior);

    std::vector<std::string> cells{std::to_string(r.round)};
    append(cells, numbers(ck.xi_star));
    append(cells, {format_double(ck.eig_star), std::to_string(ck.step)});
    append(cells, numbers(r.observation.y));
    append(cells, numbers(mean));
    append(cells, numbers(sd));
    append(cells, numbers(r.posterior.rhat));
    append(cells, numbers(r.posterior.ess));
    append(cells, {format_double(acceptance), r.posterior.rhat_flag ? "1" : "0", format_double(med)});
    rounds.row(cells);
    rounds.flush();

    round_entries.push_back(json{{"round", r.round},
                                 {"initial_mu", r.initial_mu},
                                 {"xi_star", ck.xi_star},
                                 {"eig_star", ck.eig_star},
                                 {"checkpoint_step", ck.step},
                                 {"best_design", ck.best_design},
                                 {"design_checkpoint", checkpoint_name(ck.step)},
                                 {"final_checkpoint", checkpoint_name(end_step)},
                                 {"lr_reductions", r.training.lr_reductions},
                                 {"observation", r.observation.y},
                                 {"posterior_mean", mean},
                                 {"posterior_sd", sd},
                                 {"rhat", r.posterior.rhat},
                                 {"ess", r.posterior.ess},
                                 {"acceptance", r.posterior.acceptance},
                                 {"rhat_flag", r.posterior.rhat_flag},
                                 {"median_distance", med}});
    record.round_eig.push_back(ck.eig_star);
    record.median_distance = med;
    spdlog::info("seed {} round {}: xi* {} eig* {:.4f} median distance {:.4g}", seed, r.round,
                 fmt::join(ck.xi_star, " "), ck.eig_star, med);
  };

  designopt::SequentialResult result;
  try {
    result = designopt::run_sbi_boed(*simulator, flow, settings, hooks);
  } catch (const designopt::SequentialError& e) {
    write_json(dir / "failure.json", json{{"round", e.round()}, {"error", e.what()}, {"diagnostics", e.diagnostics()}});
    throw std::runtime_error(fmt::format("seed {}: {}", seed, e.what()));
  }
  return json{{"seed", seed},
              {"dir", dir.filename().string()},
              {"ground_truth", result.ground_truth},
              {"rounds", round_entries}};
}

json manifest_base(const std::string& command, const RunConfig& config) {
  return json{{"schema_version", kSchemaVersion},
              {"command", command},
              {"config_hash", hex64(config_hash(config))},
              {"config", to_json(config)},
              {"seeds", config.seeds}};
}

}  // namespace

fs::path output_root(const RunConfig& config) {
  if (const char* env = std::getenv("INFODESIGN_OUT"); env && *env) return fs::path(env);
  return fs::path(config.output_dir);
}

fs::path run_directory(const RunConfig& config) { return output_root(config) / config.name; }

RunConfig apply_options(RunConfig config, const CommandOptions& options) {
  if (options.seed) config.seeds = {*options.seed};
  if (options.jobs && *options.jobs == 0) throw ConfigError("--jobs must be at least 1");
  return config;
}

json run_boed(const RunConfig& config, const fs::path& run_dir, std::size_t jobs) {
  if (config.task != "linear" && config.task != "sir" && config.task != "gauss-oracle") {
    throw ConfigError(fmt::format("boed: task '{}' has no design; use linear, sir or gauss-oracle", config.task));
  }
  fs::create_directories(run_dir);
  json manifest = manifest_base("boed", config);
  json runs = json::array();
  std::vector<inference::SeedRecord> records;
  for (std::uint64_t seed : config.seeds) {
    inference::SeedRecord record;
    record.seed = seed;
    runs.push_back(boed_seed(config, seed, run_dir / seed_dir_name(seed), jobs, record));
    records.push_back(record);
  }
  manifest["runs"] = runs;
  manifest["files"] = {"metrics.csv", "timing.csv", "rounds.csv", "posterior_samples.csv"};
  json summary = inference::eig_report(records);
  summary["task"] = config.task;
  summary["lambda"] = config.train.lambda;
  write_json(run_dir / "summary.json", summary);
  write_json(run_dir / "run_manifest.json", manifest);
  return manifest;
}

json run_mi_sweep(const RunConfig& config, const fs::path& run_dir, std::size_t jobs) {
  if (config.task != "two-moons" && config.task != "gauss-oracle") {
    throw ConfigError(fmt::format("mi-sweep: task '{}' not supported; use two-moons or gauss-oracle", config.task));
  }
  if (config.sweep.contrastive.empty() || config.sweep.lambda.empty()) {
    throw ConfigError("sweep: invalid grid, contrastive and lambda need at least one value");
  }
  if (config.sweep.eval_every == 0 || config.sweep.validation == 0) {
    throw ConfigError("sweep: eval_every and validation must be positive");
  }
  const auto simulator = make_simulator(config);
  const std::size_t xd = simulator->xi_dim();
  if (config.sweep.design.size() != xd) throw ConfigError("sweep.design: wrong dimension");

  fs::create_directories(run_dir);
  json manifest = manifest_base("mi-sweep", config);
  json cells = json::array();
  for (std::size_t L : config.sweep.contrastive) {
    for (double lambda : config.sweep.lambda) {
      const std::string cell = fmt::format("L{}_lambda{}", L, format_double(lambda));
      for (std::uint64_t seed : config.seeds) {
        const fs::path dir = run_dir / cell / seed_dir_name(seed);
        fs::create_directories(dir);
        flow::ConditionalFlow flow(make_flow_config(config, *simulator, seed));
        const auto pool = simulator->prepare(
            simulator->prior().sample_table(config.pool_size, seed, sim::StreamId::Prior), seed);
        designopt::DesignDistribution dist;
        dist.mu = config.sweep.design;
        dist.bounds = sim::DesignBounds{config.design.lower, config.design.upper};
        designopt::TrainSettings train = config.train;
        train.contrastive = L;
        train.lambda = lambda;
        train.optimize_design = false;
        train.jobs = jobs;

        const auto held_out = designopt::simulate_joint(*simulator, config.sweep.validation, dist.mu, seed);
        const auto contrastive = simulator->prior().sample_table(L, seed, sim::StreamId::Validation, 2);

        CsvWriter metrics(dir / "metrics.csv", metrics_header(xd));
        CsvWriter validation(dir / "validation.csv",
                             {"step", "val_loglik", "val_loglik_se", "heldout_eig", "heldout_eig_se"});
        json last;
        auto evaluate = [&](std::size_t step, const flow::ConditionalFlow& f) {
          const auto ll = objective::validation_loglik(f, held_out);
          const auto eig = objective::heldout_info_nce(f, held_out, contrastive);
          validation.row({std::to_string(step), format_double(ll.mean), format_double(ll.se), format_double(eig.value),
                          format_double(eig.se)});
          last = json{{"step", step}, {"val_loglik", ll.mean}, {"heldout_eig", eig.value}};
        };
        const std::size_t steps = train.steps;
        auto hook = [&](const designopt::StepRow& row, const flow::ConditionalFlow& f) {
          metrics.row(metrics_cells(row));
          if (row.step % config.sweep.eval_every == 0 || row.step + 1 == steps) evaluate(row.step, f);
        };
        designopt::RoundResult result;
        try {
          result = designopt::train_round(*simulator, *pool, flow, dist, train, {seed, 1, 0}, hook);
        } catch (const designopt::TrainingError& e) {
          write_json(dir / "failure.json", json{{"step", e.step()}, {"error", e.what()}, {"diagnostics", e.diagnostics()}});
          throw std::runtime_error(fmt::format("{} seed {}: {}", cell, seed, e.what()));
        }
        cells.push_back(json{{"cell", cell},
                             {"contrastive", L},
                             {"lambda", lambda},
                             {"seed", seed},
                             {"dir", (fs::path(cell) / seed_dir_name(seed)).string()},
                             {"eig_star", result.checkpoint.eig_star},
                             {"final", last}});
        spdlog::info("{} seed {}: held-out EIG {:.4f} validation log-lik {:.4f}", cell, seed,
                     last.value("heldout_eig", 0.0), last.value("val_loglik", 0.0));
      }
    }
  }
  manifest["cells"] = cells;
  manifest["files"] = {"metrics.csv", "validation.csv"};
  write_json(run_dir / "run_manifest.json", manifest);
  return manifest;
}

DiagnoseRequest load_diagnose_request(const fs::path& path) {
  DiagnoseRequest req;
  if (fs::is_directory(path)) {
    req.run_dir = path;
    return req;
  }
  json j;
  try {
    j = read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("cannot read diagnose config '{}': {}", path.string(), e.what()));
  }
  if (j.contains("config_hash")) {
    req.run_dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    return req;
  }
  for (const auto& item : j.items()) {
    if (item.key() != "run" && item.key() != "compare" && item.key() != "sbc" && item.key() != "coverage") {
      throw ConfigError(fmt::format("diagnose: unknown key '{}'", item.key()));
    }
  }
  try {
    req.run_dir = j.at("run").get<std::string>();
    for (const auto& c : j.value("compare", json::array())) req.compare.push_back(c.get<std::string>());
    req.coverage = j.value("coverage", true);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("diagnose: {}", e.what()));
  }
  if (j.contains("sbc")) req.sbc = parse_sbc(j.at("sbc"), SbcConfig{});
  return req;
}

json run_diagnose(const DiagnoseRequest& request, std::size_t jobs) {
  (void)jobs;
  const fs::path run_dir = request.run_dir;
  const fs::path manifest_path = run_dir / "run_manifest.json";
  if (!fs::exists(manifest_path)) throw std::runtime_error("missing run_manifest.json in " + run_dir.string());
  const json manifest = read_json(manifest_path);
  const RunConfig config = parse_config(manifest);
  if (manifest.value("command", "") != "boed") throw ConfigError("diagnose needs a boed run directory");

  std::vector<std::string> missing;
  for (const auto& run : manifest.at("runs")) {
    const fs::path dir = run_dir / run.at("dir").get<std::string>();
    std::vector<std::string> needed{"metrics.csv", "rounds.csv", "posterior_samples.csv"};
    for (const auto& r : run.at("rounds")) {
      needed.push_back(r.at("design_checkpoint").get<std::string>());
      needed.push_back(r.at("final_checkpoint").get<std::string>());
    }
    for (const auto& f : needed) {
      if (!fs::exists(dir / f)) missing.push_back((fs::path(run.at("dir").get<std::string>()) / f).string());
    }
  }
  if (!missing.empty()) throw std::runtime_error(fmt::format("missing {}", fmt::join(missing, ", ")));

  SbcConfig sbc = request.sbc.value_or(config.sbc);
  if (sbc.levels.empty()) sbc.levels = config.sbc.levels;
  const auto simulator = make_simulator(config);
  json report = json{{"run", run_dir.string()}, {"config_hash", manifest.at("config_hash")}, {"seeds", json::array()}};

  for (const auto& run : manifest.at("runs")) {
    const std::uint64_t seed = run.at("seed").get<std::uint64_t>();
    const fs::path dir = run_dir / run.at("dir").get<std::string>();
    CsvWriter rhat(dir / "rhat.csv", {"round", "dim", "rhat", "ess", "acceptance"});
    for (const auto& r : run.at("rounds")) {
      double acc = 0.0;
      for (double a : r.at("acceptance")) acc += a / static_cast<double>(r.at("acceptance").size());
      for (std::size_t d = 0; d < r.at("rhat").size(); ++d) {
        rhat.row({std::to_string(r.at("round").get<std::size_t>()), std::to_string(d),
                  format_double(r.at("rhat")[d].get<double>()), format_double(r.at("ess")[d].get<double>()),
                  format_double(acc)});
      }
    }
    json seed_report{{"seed", seed}};
    if (request.coverage) {
      // The first round's flow is trained on prior draws, so it is the one
      // whose posterior SBC can check.
      const auto& first = run.at("rounds").at(0);
      const auto ck = flow::read_checkpoint(dir / first.at("final_checkpoint").get<std::string>());
      const auto flow = flow::restore_flow(ck);
      inference::SbcSettings settings;
      settings.trials = sbc.trials;
      settings.draws = sbc.draws;
      settings.levels = sbc.levels;
      settings.seed = seed;
      inference::McmcSettings mcmc = sbc.mcmc;
      const auto curve = inference::sbc_coverage(*simulator, {first.at("xi_star").get<std::vector<double>>()},
                                                 inference::mcmc_sampler(flow, simulator->prior(), mcmc), settings);
      write_coverage(dir / "coverage.csv", curve);
      seed_report["coverage_within_band"] = curve.within_band();
      seed_report["rank_pvalues"] = curve.rank_uniformity_pvalue(std::min<std::size_t>(20, sbc.draws + 1), sbc.draws);
      seed_report["sbc_trials"] = curve.trials;
      seed_report["sbc_failed"] = curve.failed;
    }
    report["seeds"].push_back(seed_report);
  }

  // Side-by-side EIG against step for this run and any comparison runs.
  std::vector<fs::path> runs{run_dir};
  runs.insert(runs.end(), request.compare.begin(), request.compare.end());
  std::vector<std::string> header{"run", "seed", "round", "step", "eig", "sigma"};
  append(header, indexed("mu", simulator->xi_dim()));
  CsvWriter curve(run_dir / "eig_vs_step.csv", header);
  for (const auto& r : runs) {
    const fs::path mpath = r / "run_manifest.json";
    if (!fs::exists(mpath)) throw std::runtime_error("missing run_manifest.json in " + r.string());
    const json m = read_json(mpath);
    const std::string label = m.at("config").at("name").get<std::string>();
    for (const auto& run : m.at("runs")) {
      const auto table = read_csv(r / run.at("dir").get<std::string>() / "metrics.csv");
      std::vector<std::size_t> mu_cols;
      for (const auto& name : indexed("mu", simulator->xi_dim())) mu_cols.push_back(table.column(name));
      const std::size_t c_round = table.column("round"), c_step = table.column("step"), c_eig = table.column("eig"),
                        c_sigma = table.column("sigma");
      for (const auto& row : table.rows) {
        std::vector<std::string> cells{label, std::to_string(run.at("seed").get<std::uint64_t>()), row[c_round],
                                       row[c_step], row[c_eig], row[c_sigma]};
        for (std::size_t c : mu_cols) cells.push_back(row[c]);
        curve.row(cells);
      }
    }
  }
  write_json(run_dir / "diagnostics.json", report);
  return report;
}

json dry_run(const RunConfig& config) {
  const auto simulator = make_simulator(config);
  std::vector<double> xi = config.design.mu;
  if (xi.empty()) {
    for (std::size_t d = 0; d < simulator->xi_dim(); ++d) xi.push_back(0.5 * (config.design.lower[d] + config.design.upper[d]));
  }
  const std::uint64_t seed = config.seeds.front();
  json smoke = json::array();
  auto rng = sim::make_stream(seed, sim::StreamId::Prior, 0, 0);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto theta = simulator->prior().sample(rng);
    const auto y = simulator->simulate(theta, xi, sim::stream_key(seed, sim::StreamId::Simulator, 0, i));
    smoke.push_back(json{{"theta", theta}, {"xi", xi}, {"y", y}});
  }
  return json{{"config", to_json(config)},
              {"config_hash", hex64(config_hash(config))},
              {"run_dir", run_directory(config).string()},
              {"simulator", simulator->name()},
              {"smoke", smoke}};
}

int run_command(const std::string& command, const CommandOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const std::size_t jobs = options.jobs.value_or(1);
    if (options.jobs && *options.jobs == 0) throw ConfigError("--jobs must be at least 1");
    if (command == "diagnose") {
      const auto request = load_diagnose_request(options.config);
      if (options.dry_run) {
        out << json{{"run", request.run_dir.string()}, {"coverage", request.coverage}}.dump(2) << '\n';
        return kSuccess;
      }
      const auto report = run_diagnose(request, jobs);
      out << report.dump(2) << '\n';
      return kSuccess;
    }
    if (command != "boed" && command != "mi-sweep") throw ConfigError(fmt::format("unknown command '{}'", command));
    const RunConfig config = apply_options(load_config(options.config), options);
    if (options.dry_run) {
      out << dry_run(config).dump(2) << '\n';
      return kSuccess;
    }
    const fs::path dir = run_directory(config);
    const json manifest = command == "boed" ? run_boed(config, dir, jobs) : run_mi_sweep(config, dir, jobs);
    out << json{{"run_dir", dir.string()}, {"config_hash", manifest.at("config_hash")}}.dump(2) << '\n';
    return kSuccess;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace infodesign::cli
