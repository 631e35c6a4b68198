#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

namespace diffem::experiments {

using Json = nlohmann::json;

/// Everything an experiment needs; `out` receives metrics.json, history.csv,
/// checkpoint.json and fields/*.csv.
struct RunContext {
  Json config = Json::object();
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

/// Each command writes its outputs and returns the metrics it wrote to metrics.json.
Json helmholtz_adjoint(const RunContext& ctx);
Json divfree_loss(const RunContext& ctx);
Json heat(const std::string& subcommand, const RunContext& ctx);
Json constitutive(const std::string& subcommand, const RunContext& ctx);
Json seismic(const std::string& subcommand, const RunContext& ctx);

/// Dispatch by name. Throws Error(InvalidConfig) for unknown experiments or subcommands.
Json run(const std::string& experiment, const std::string& subcommand, const RunContext& ctx);

/// Process exit code for an exception escaping `run`: 2 for configuration
/// problems, 3 for numerical failures, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace diffem::experiments
