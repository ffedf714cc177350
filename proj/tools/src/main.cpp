#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "infodesign/cli/commands.hpp"

int main(int argc, char** argv) {
  using infodesign::cli::CommandOptions;
  CLI::App app{"Joint likelihood training and experimental design"};
  app.require_subcommand(1);

  CommandOptions options;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string level = "info";
  for (const char* name : {"mi-sweep", "boed", "diagnose"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", options.config, "config JSON, run manifest or run directory")->required();
    sub->add_option("--seed", seed, "run this seed only");
    sub->add_option("--jobs", jobs, "worker threads for simulation");
    sub->add_flag("--dry-run", options.dry_run, "echo the config and a simulator smoke sample");
    sub->add_option("--log-level", level, "trace, debug, info, warn or error");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : infodesign::cli::kConfigError;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("infodesign"));
  spdlog::set_level(spdlog::level::from_str(level));

  auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) options.seed = seed;
  if (sub->count("--jobs")) options.jobs = jobs;
  return infodesign::cli::run_command(sub->get_name(), options, std::cout, std::cerr);
}
