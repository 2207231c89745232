#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nhmpc/io.hpp"

namespace nhmpc {

struct RunConfig {
  std::string subcommand;  // certify | certify-path | simulate
  std::string loop;        // simulate only; may be empty when a scenario file names the kind
  std::optional<std::filesystem::path> scenario;
  std::filesystem::path out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // key=value
  int jobs = 1;
};

// Built-in scenario for a kind (regulation, mpfc, dmpc, mrs, rmse, certify, certify_path).
Json default_scenario(std::string_view kind);

// Scenario file (or the built-in default) with the seed and overrides applied.
Json resolve_scenario(const RunConfig& cfg, std::string_view kind);

// Each command writes its artifacts into cfg.out_dir and returns the process
// exit code: 0 iff every assertion configured in the scenario holds. Failed
// assertions are listed in failures.json.
int cmd_certify(const RunConfig& cfg, std::ostream& log);
int cmd_certify_path(const RunConfig& cfg, std::ostream& log);
int cmd_simulate(const RunConfig& cfg, std::ostream& log);

int run_command(const RunConfig& cfg, std::ostream& log);

}  // namespace nhmpc
