#include <filesystem>
#include <fstream>
#include <sstream>

#include "acceptance.hpp"
#include "infodesign/cli/commands.hpp"
#include "infodesign/cli/output.hpp"

namespace infodesign::acceptance {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunSpec {
  std::string command;
  json config;
};

json small_flow() { return {{"bijectors", 2}, {"hidden_layers", 1}, {"hidden_units", 16}, {"pilot", 300}}; }

// A spread of short runs covering every task and both commands.
std::vector<RunSpec> run_specs() {
  const json mcmc{{"warmup", 300}, {"draws", 300}};
  return {
      {"boed",
       {{"schema_version", 1}, {"task", "linear"}, {"name", "linear"}, {"seeds", {1, 2}}, {"rounds", 2},
        {"pool_size", 2000}, {"predictive_draws", 200}, {"flow", small_flow()}, {"mcmc", mcmc},
        {"train", {{"steps", 150}, {"batch", 8}, {"contrastive", 15}, {"lambda", 1.0}}}}},
      {"boed",
       {{"schema_version", 1}, {"task", "gauss-oracle"}, {"name", "oracle"}, {"seeds", {3}}, {"rounds", 2},
        {"pool_size", 2000}, {"predictive_draws", 200}, {"flow", small_flow()}, {"mcmc", mcmc},
        {"train", {{"steps", 150}, {"batch", 8}, {"contrastive", 15}}}}},
      {"boed",
       {{"schema_version", 1}, {"task", "sir"}, {"name", "sir"}, {"seeds", {4}}, {"rounds", 1}, {"pool_size", 300},
        {"predictive_draws", 100}, {"flow", small_flow()}, {"mcmc", mcmc},
        {"train", {{"steps", 100}, {"batch", 8}, {"contrastive", 15}}}}},
      {"mi-sweep",
       {{"schema_version", 1}, {"task", "two-moons"}, {"name", "moons"}, {"seeds", {5}}, {"pool_size", 2000},
        {"flow", small_flow()}, {"train", {{"steps", 60}, {"batch", 8}}},
        {"sweep", {{"contrastive", {7, 15}}, {"lambda", {0, 1}}, {"validation", 200}, {"eval_every", 20}}}}},
  };
}

json execute(const std::string& command, const cli::RunConfig& config, const fs::path& dir) {
  return command == "boed" ? cli::run_boed(config, dir) : cli::run_mi_sweep(config, dir);
}

// (relative metrics path, per-round eig_star) for every run in a manifest.
struct RunRecord {
  fs::path metrics;
  std::vector<std::pair<std::size_t, double>> round_eig_star;
};

std::vector<RunRecord> records(const json& manifest) {
  std::vector<RunRecord> out;
  if (manifest.at("command") == "boed") {
    for (const auto& run : manifest.at("runs")) {
      RunRecord r{fs::path(run.at("dir").get<std::string>()) / "metrics.csv", {}};
      for (const auto& round : run.at("rounds")) {
        r.round_eig_star.emplace_back(round.at("round").get<std::size_t>(), round.at("eig_star").get<double>());
      }
      out.push_back(r);
    }
  } else {
    for (const auto& cell : manifest.at("cells")) {
      out.push_back({fs::path(cell.at("dir").get<std::string>()) / "metrics.csv", {{1, cell.at("eig_star").get<double>()}}});
    }
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("infodesign_acceptance_" + name)) {
    fs::remove_all(root);
  }
  ~Workspace() { fs::remove_all(root); }
};

}  // namespace

Outcome checkpoint_invariant() {
  Workspace ws("checkpoint");
  std::size_t checked = 0, mismatches = 0;
  for (const auto& spec : run_specs()) {
    const auto config = cli::parse_config(spec.config);
    const fs::path dir = ws.root / config.name;
    const json manifest = execute(spec.command, config, dir);
    for (const auto& rec : records(manifest)) {
      const auto table = cli::read_csv(dir / rec.metrics);
      const std::size_t c_round = table.column("round"), c_eig = table.column("eig");
      for (const auto& [round, eig_star] : rec.round_eig_star) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& row : table.rows) {
          if (std::stoul(row[c_round]) == round) best = std::max(best, cli::parse_double(row[c_eig]));
        }
        ++checked;
        if (best != eig_star) {
          ++mismatches;
          fmt::print("  {} round {}: eig_star {} vs max step EIG {}\n", rec.metrics.string(), round, eig_star, best);
        }
      }
    }
  }
  return {mismatches == 0 && checked > 0,
          fmt::format("{} (run, round) pairs across boed and mi-sweep on all four tasks, {} mismatches", checked,
                      mismatches)};
}

Outcome reproducibility() {
  Workspace ws("repro");
  std::size_t compared = 0, differing = 0;
  for (const auto& spec : run_specs()) {
    const auto config = cli::parse_config(spec.config);
    const fs::path first = ws.root / "first" / config.name;
    const json manifest = execute(spec.command, config, first);
    // Re-execute from the written manifest alone.
    const auto again = cli::load_config(first / "run_manifest.json");
    const fs::path second = ws.root / "second" / config.name;
    execute(spec.command, again, second);
    for (const auto& rec : records(manifest)) {
      ++compared;
      if (slurp(first / rec.metrics) != slurp(second / rec.metrics) || slurp(first / rec.metrics).empty()) {
        ++differing;
        fmt::print("  {}/{} differs\n", config.name, rec.metrics.string());
      }
    }
  }
  return {differing == 0 && compared > 0,
          fmt::format("{} metrics.csv files re-executed from run_manifest.json, {} differ", compared, differing)};
}

}  // namespace infodesign::acceptance
