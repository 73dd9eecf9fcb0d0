#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "platoon/env.hpp"
#include "platoon/sac.hpp"
#include "platoon/uncertainty.hpp"

namespace platoon {

struct EvalConfig {
  std::size_t episodes = 20;
  std::uint64_t seed = 7;
};

/// Everything a run needs. Network sizes carry the core type; obs_size is
/// derived from the scenario.
struct RunConfig {
  ScenarioConfig scenario = ScenarioConfig::lane_change(2);
  CostWeights weights;
  UncertaintyConfig uncertainty;
  TrainerConfig trainer;
  NetSizes network;
  EvalConfig eval;
  std::filesystem::path output_dir = "out";

  /// Resolves derived fields and validates every sub-config.
  void resolve();
  NetSizes net_sizes() const;
};

/// Strict parse: unknown keys are rejected, missing keys take defaults.
/// Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved form; parse_run_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& config);

}  // namespace platoon
