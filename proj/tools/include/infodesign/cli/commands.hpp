#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infodesign/cli/config.hpp"

namespace infodesign::cli {

enum ExitCode : int { kSuccess = 0, kConfigError = 2, kRuntimeError = 3 };

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;  // replaces the configured seed list
  std::optional<std::size_t> jobs;
  bool dry_run = false;
};

// Output root: INFODESIGN_OUT when set, otherwise the configured directory.
std::filesystem::path output_root(const RunConfig& config);
std::filesystem::path run_directory(const RunConfig& config);

// Applies --seed and --jobs to a parsed config.
RunConfig apply_options(RunConfig config, const CommandOptions& options);

// Each command returns the manifest it wrote into `run_dir`.
nlohmann::json run_mi_sweep(const RunConfig& config, const std::filesystem::path& run_dir, std::size_t jobs = 1);
nlohmann::json run_boed(const RunConfig& config, const std::filesystem::path& run_dir, std::size_t jobs = 1);

struct DiagnoseRequest {
  std::filesystem::path run_dir;
  std::vector<std::filesystem::path> compare;  // extra runs for the side-by-side EIG table
  std::optional<SbcConfig> sbc;
  bool coverage = true;
};
DiagnoseRequest load_diagnose_request(const std::filesystem::path& path);
nlohmann::json run_diagnose(const DiagnoseRequest& request, std::size_t jobs = 1);

// Config echo plus a few simulator draws; writes nothing.
nlohmann::json dry_run(const RunConfig& config);

// Dispatches one command and maps failures to exit codes.
int run_command(const std::string& command, const CommandOptions& options, std::ostream& out, std::ostream& err);

}  // namespace infodesign::cli
