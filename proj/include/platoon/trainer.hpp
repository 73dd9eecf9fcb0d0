#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "platoon/env.hpp"
#include "platoon/replay_buffer.hpp"
#include "platoon/sac.hpp"

namespace platoon {

/// Builds an independent environment; the argument is an instance id that
/// selects the environment's random stream.
using EnvFactory = std::function<PlatoonEnv(std::uint64_t instance_id)>;

struct TrainingLogRow {
  std::uint64_t step = 0;  // environment steps completed when the episode ended
  std::uint64_t episode = 0;
  double episode_return = 0.0;  // mean over agents, unscaled rewards
  double critic_loss1 = 0.0;    // means over the episode's updates (0 if none)
  double critic_loss2 = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  bool success = false;
  bool collision = false;
  std::size_t updates = 0;
};

std::string training_log_header();
std::string format_training_row(const TrainingLogRow& row);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // training_log.csv, checkpoint.bin
  std::function<void(const TrainingLogRow&)> on_episode;
  std::string checkpoint_metadata = "{}";
};

struct TrainResult {
  std::vector<SacLearner> learners;  // one when parameters are shared
  std::vector<TrainingLogRow> log;
  std::uint64_t steps = 0;
  std::uint64_t updates = 0;
  double seconds = 0.0;

  Checkpoint checkpoint(const std::string& metadata = "{}") const;
};

/// Seed of episode `episode` for a run seeded with `seed`.
std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t episode);

/// Off-policy loop: act with the shared (or per-agent) stochastic policy,
/// store one transition per agent per step, and after warm-up run one critic,
/// actor and target update per `update_interval` steps. `sizes.obs_size` is
/// taken from the environment. A non-finite loss writes
/// checkpoint_diagnostic.bin (when an output directory is set) and throws
/// NumericError.
TrainResult train(const EnvFactory& make_env, NetSizes sizes, const TrainerConfig& cfg,
                  const TrainOptions& options = {});

}  // namespace platoon
