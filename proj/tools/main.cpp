#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "nhmpc/cli.hpp"

namespace {

void add_common(CLI::App& cmd, nhmpc::RunConfig& cfg, std::string& scenario, std::uint64_t& seed) {
  cmd.add_option("--scenario", scenario, "Scenario file (JSON)")->check(CLI::ExistingFile);
  cmd.add_option("--out", cfg.out_dir, "Output directory");
  cmd.add_option("--seed", seed, "Random seed (overrides the scenario's)");
  cmd.add_option("--set", cfg.overrides, "Override a scenario value, key.path=value")->allow_extra_args(false);
  cmd.add_option("--jobs", cfg.jobs, "Concurrent batch cells")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stabilizing horizons, path following, DMPC and relative localization experiments"};
  app.require_subcommand(1);

  nhmpc::RunConfig cfg;
  cfg.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string scenario;
  std::uint64_t seed = 0;

  auto* certify = app.add_subcommand("certify", "Minimal stabilizing horizon per (delta, q2) cell");
  add_common(*certify, cfg, scenario, seed);
  auto* certify_path = app.add_subcommand("certify-path", "Path-following performance index over the horizon");
  add_common(*certify_path, cfg, scenario, seed);
  auto* simulate = app.add_subcommand("simulate", "Closed-loop runs: regulation, mpfc, dmpc, mrs or rmse");
  add_common(*simulate, cfg, scenario, seed);
  simulate->add_option("loop", cfg.loop, "Loop to run (optional with --scenario)")
      ->check(CLI::IsMember({"regulation", "mpfc", "dmpc", "mrs", "rmse"}));

  CLI11_PARSE(app, argc, argv);

  const auto* chosen = app.get_subcommands().front();
  cfg.subcommand = chosen->get_name();
  if (!scenario.empty()) cfg.scenario = scenario;
  if (chosen->count("--seed") > 0) cfg.seed = seed;

  try {
    return nhmpc::run_command(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
