#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "platoon/config.hpp"
#include "platoon/env.hpp"
#include "platoon/sac.hpp"

namespace platoon {

/// Maps the observations of all vehicles to normalized actions. Policies may
/// keep per-episode state (hidden states); `reset` is called at episode start.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void reset(std::size_t n_vehicles) = 0;
  virtual std::vector<Action> act(const PlatoonEnv& env,
                                  const std::vector<Observation>& observations) = 0;
  virtual std::unique_ptr<Policy> clone() const = 0;
};

/// Deterministic SAC actor, tanh(mu), with per-vehicle hidden states. One
/// learner for shared parameters, otherwise one per vehicle.
class SacPolicy : public Policy {
 public:
  explicit SacPolicy(std::vector<SacLearner> learners);
  void reset(std::size_t n_vehicles) override;
  std::vector<Action> act(const PlatoonEnv& env,
                          const std::vector<Observation>& observations) override;
  /// Same, without an environment: the actor only reads observations.
  std::vector<Action> act(const std::vector<Observation>& observations);
  std::unique_ptr<Policy> clone() const override;

  const SacLearner& learner_for(std::size_t k) const;
  Matrix& hidden(std::size_t k) { return hidden_.at(k); }
  const Matrix& hidden(std::size_t k) const { return hidden_.at(k); }

 private:
  std::vector<SacLearner> learners_;
  std::vector<Matrix> hidden_;  // per vehicle, 1 x hidden_size
};

/// Feedback tracker of each vehicle's reference trajectory.
class TrackingPolicy : public Policy {
 public:
  void reset(std::size_t) override {}
  std::vector<Action> act(const PlatoonEnv& env, const std::vector<Observation>&) override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<TrackingPolicy>(*this); }
};

/// Leader brakes hard while every follower accelerates straight ahead.
class CollidingPolicy : public Policy {
 public:
  void reset(std::size_t) override {}
  std::vector<Action> act(const PlatoonEnv& env, const std::vector<Observation>&) override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<CollidingPolicy>(*this); }
};

/// Normalized action that requests `control` (inverse of PlatoonEnv::map_action).
Action control_to_action(const ControlInput& control, const DynamicsLimits& limits);

/// Learners restored from a checkpoint written for `config`. Throws
/// CheckpointError when the layout does not match.
std::vector<SacLearner> load_learners(const RunConfig& config,
                                      const std::filesystem::path& checkpoint_path);
std::vector<SacLearner> load_learners(const RunConfig& config, const Checkpoint& checkpoint);

struct EpisodeSummary {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool success = false;
  bool collision = false;
  bool off_road = false;
  bool obstacle = false;
  std::optional<double> navigation_time;
  double episode_return = 0.0;  // mean over vehicles
  std::size_t steps = 0;
};

struct MetricsReport {
  double success_rate = 0.0;
  std::optional<double> navigation_time;  // mean over successful episodes
  double avg_velocity = 0.0;              // over all vehicle-steps
  double avg_heading = 0.0;               // signed, over each vehicle's maneuver window
  double avg_compute_time_per_step = 0.0; // s, policy + env stepping only
  std::size_t n_episodes = 0;
  std::size_t collisions = 0;
  std::vector<EpisodeSummary> episodes;
};

/// Metrics without wall-clock fields, so that identical runs give identical
/// bytes.
nlohmann::json metrics_json(const MetricsReport& report);

struct EvalResult {
  MetricsReport metrics;
  std::vector<EpisodeRecord> records;
};

/// Runs `n` episodes with seeds episode_seed(seed, i). Episodes run on
/// kernels::thread_count() threads, each with its own environment and policy
/// copy; results do not depend on the thread count.
EvalResult run_episodes(const Policy& policy, const RunConfig& config, std::size_t n,
                        std::uint64_t seed);

/// Aggregates per-episode records into a report (compute time left at 0).
MetricsReport summarize(const std::vector<EpisodeRecord>& records,
                        const std::vector<std::uint64_t>& seeds);

void export_trace(const EpisodeRecord& record, const std::filesystem::path& path);
/// Rows of an exported trace; n_vehicles and dt are not stored and stay unset.
std::vector<TraceRow> read_trace(const std::filesystem::path& path);
std::string trace_header();

/// Frozen picture of an episode at one step, from which predictions start.
struct PredictionContext {
  ScenarioConfig scenario;
  std::vector<VehicleState> states;
  std::vector<ControlInput> controls;
  std::vector<ReferenceTrajectory> references;
  std::vector<VehicleState> obstacles;
  UncertaintyFrame frame;
  std::size_t t = 0;
};

PredictionContext capture_context(const PlatoonEnv& env);

/// One open-loop step: observations are rebuilt from the predicted states
/// with the captured uncertainty frame, the policy acts, and the kinematic
/// model advances every vehicle.
void advance_prediction(SacPolicy& policy, PredictionContext& ctx);

/// H steps of advance_prediction; element h holds the states after step h+1.
std::vector<std::vector<VehicleState>> autoregressive_rollout(SacPolicy& policy,
                                                              PredictionContext ctx,
                                                              std::size_t horizon);

/// Mean absolute position error over steps and the (x, y) components.
double prediction_mae(const std::vector<VehicleState>& predicted,
                      const std::vector<VehicleState>& reference);

/// Mean positional MAE of H-step rollouts of every vehicle, started at each
/// `stride`-th step of deterministic evaluation episodes.
double rollout_mae(const SacPolicy& policy, const RunConfig& config, std::size_t horizon,
                   std::size_t episodes, std::uint64_t seed, std::size_t stride = 10);

struct CoreComparisonRow {
  CoreType core = CoreType::kGru;
  std::size_t horizon = 0;
  double median_mae = 0.0;
  std::vector<double> per_seed;
};

struct CoreComparison {
  std::vector<CoreComparisonRow> rows;
  std::vector<std::uint64_t> seeds;

  const CoreComparisonRow& find(CoreType core, std::size_t horizon) const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Trains both cores on every seed with identical budgets and tabulates the
/// median rollout MAE per H.
CoreComparison compare_cores(const RunConfig& config, const std::vector<std::size_t>& horizons,
                             const std::vector<std::uint64_t>& seeds,
                             const std::function<void(const std::string&)>& progress = {});

/// MAE table for already trained policies, one per core and seed.
CoreComparison compare_policies(const RunConfig& config, const std::vector<std::size_t>& horizons,
                                const std::vector<std::uint64_t>& seeds,
                                const std::vector<const SacPolicy*>& gru,
                                const std::vector<const SacPolicy*>& mlp);

inline const std::vector<std::size_t> kDefaultHorizons{1, 5, 10, 15, 20};

}  // namespace platoon
