#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "platoon/dynamics.hpp"
#include "platoon/geometry.hpp"
#include "platoon/random.hpp"
#include "platoon/uncertainty.hpp"

namespace platoon {

/// Static obstacle dropped into a lane mid-episode (a lane closure).
struct ObstacleConfig {
  double probability = 0.0;   // chance per episode that the obstacle appears
  double spawn_time = 2.5;    // s
  int lane = -1;              // -1 selects the leader's target lane
  double gap = 30.0;          // distance ahead of the front-most vehicle at spawn (m)
  double length = 4.5;
  double width = 1.8;
  double replan_window = 2.0;  // s, lateral re-plan back to the original lane
};

struct ScenarioConfig {
  std::size_t n_vehicles = 2;
  std::size_t horizon = 100;
  double dt = 0.05;
  std::size_t lane_count = 2;
  double lane_width = 3.7;
  std::vector<VehicleState> initial_states;
  std::vector<std::size_t> target_lane;
  double d_min = 10.0;
  std::uint64_t seed = 0;         // mixed into every episode seed
  double maneuver_start = 0.0;    // s
  double maneuver_stagger = 0.5;  // extra start delay per vehicle index (s)
  double maneuver_window = 3.0;   // s
  std::size_t lookahead_steps = 5;
  std::size_t neighbor_slots = 0;  // 0 selects n_vehicles (K - 1 vehicles + 1 obstacle)
  VehicleGeometry geometry;
  DynamicsLimits limits = DynamicsLimits::standard(0.05);
  ObstacleConfig obstacle;
  MarginOptions margins;

  /// Two vehicles 25 m apart at 15 m/s in the left lane of a two-lane road,
  /// both changing into the right lane.
  static ScenarioConfig lane_change(std::size_t n_vehicles = 2);

  /// Fills derived fields (limits.dt, geometry lane width, slots) and checks
  /// invariants.
  void resolve();
  void validate() const;

  double lane_center(std::size_t lane) const { return static_cast<double>(lane) * lane_width; }
  std::size_t lane_of(double y) const;
  std::size_t slots() const { return neighbor_slots == 0 ? n_vehicles : neighbor_slots; }
  std::size_t observation_size() const { return 9 + 7 * slots(); }
  bool off_road(double y) const;
};

struct CostWeights {
  std::array<double, 4> q_z{1.0, 100.0, 1.0, 0.1};
  std::array<double, 2> q_u{1.0, 1.0};
  std::array<double, 2> q_du{1.0, 1.0};
  double sigma1 = 10.0;
  double sigma2 = 10.0;
  double collision_penalty = 100.0;

  void validate() const;
};

struct ReferenceTrajectory {
  std::vector<VehicleState> points;  // horizon + 1 points
  double target_y = 0.0;
  double maneuver_start = 0.0;  // s
  double maneuver_end = 0.0;    // s

  const VehicleState& at(std::size_t t) const;
};

/// Smoothstep profile 3s^2 - 2s^3.
double smoothstep(double s);

ReferenceTrajectory make_reference(const ScenarioConfig& scenario, std::size_t k);

/// Re-plans the lateral profile from step `from` towards `target_y` over
/// `window` seconds; longitudinal profile is kept.
void replan_lateral(ReferenceTrajectory& ref, std::size_t from, double target_y, double window,
                    double dt);

using Observation = std::vector<double>;
using Action = std::array<double, 2>;

/// Perceived neighbor as it enters an observation slot.
struct NeighborView {
  double dx = 0.0, dy = 0.0, dphi = 0.0, dv = 0.0;
  double confidence = 1.0;
  double safe_distance = 0.0;
};

/// Observation layout: own state (4), previous control (2), reference errors
/// at the lookahead point (3), then `slots` neighbor blocks of
/// (presence, dx, dy, dphi, dv, confidence, safe distance). Neighbors are
/// placed nearest first; missing ones are zero.
Observation build_observation(const ScenarioConfig& scenario, const VehicleState& ego,
                              const ControlInput& prev_control, const ReferenceTrajectory& ref,
                              std::size_t t, std::vector<NeighborView> neighbors);

/// Neighbor views of observer k over `objects` (vehicles, then obstacles),
/// perturbed by the frame's effective deviations.
std::vector<NeighborView> perceive_neighbors(std::span<const VehicleState> objects, std::size_t k,
                                             const UncertaintyFrame& frame);

/// Affine map of a normalized action in [-1, 1]^2 onto the control bounds.
ControlInput action_to_control(const Action& action, const DynamicsLimits& limits);

/// sum q_z (z - z_ref)^2 + sum q_u u^2 + sum q_du du^2 (heading error wrapped).
double step_cost(const VehicleState& state, const VehicleState& ref, const ControlInput& control,
                 const ControlInput& dcontrol, const CostWeights& w);

struct StepInfo {
  std::vector<double> min_margin;     // per vehicle, most violated avoidance margin
  std::vector<double> safe_distance;  // per vehicle, to the nearest object
  std::vector<double> outage_prob;    // per vehicle
  std::vector<double> cost;           // per vehicle tracking cost F
  std::vector<bool> collided;
  std::vector<bool> left_road;
  bool collision = false;
  bool off_road = false;
  bool timeout = false;
};

struct StepResult {
  std::vector<Observation> observations;
  std::vector<double> rewards;
  bool done = false;
  bool terminal = false;  // collision or off-road, as opposed to the horizon
  StepInfo info;
};

struct TraceRow {
  std::size_t t = 0;
  std::size_t k = 0;
  VehicleState state;
  ControlInput control;
  double reward = 0.0;
  double min_margin = 0.0;
  double safe_distance = 0.0;
  double outage_prob = 0.0;
};

struct EpisodeRecord {
  std::size_t n_vehicles = 0;
  double dt = 0.05;
  std::size_t steps = 0;
  bool collision = false;
  bool off_road = false;
  bool obstacle = false;
  std::vector<double> target_y;     // final lateral target per vehicle
  std::vector<double> maneuver_start;  // s, per vehicle
  std::vector<double> maneuver_end;    // s, per vehicle
  std::vector<TraceRow> rows;       // t-major, (t, k)

  std::vector<VehicleState> final_states() const;
};

struct SuccessCriteria {
  double lateral_tolerance = 0.3;  // m
  double heading_tolerance = 0.1;  // rad
};

bool is_success(const EpisodeRecord& record, const SuccessCriteria& criteria = {});

/// Time (s) of the first step from which every vehicle's lateral error to its
/// target holds below tolerance until the episode ends. nullopt if some
/// vehicle never settles.
std::optional<double> navigation_time(const EpisodeRecord& record,
                                      const SuccessCriteria& criteria = {});

struct StaticObstacle {
  VehicleState pose;
  std::size_t lane = 0;
};

/// Multi-vehicle lane-change episode. Single writer; copies are independent.
class PlatoonEnv {
 public:
  PlatoonEnv(ScenarioConfig scenario, CostWeights weights, UncertaintyConfig uncertainty,
             std::uint64_t instance_id = 0);

  std::vector<Observation> reset(std::uint64_t seed);
  StepResult step(std::span<const Action> actions);

  Observation observe(std::size_t k, const UncertaintyFrame& frame) const;
  /// Reward of vehicle k at the current state; `control`/`dcontrol` are the
  /// input just applied and its change.
  double reward(std::size_t k, const UncertaintyFrame& frame, const ControlInput& control,
                const ControlInput& dcontrol, StepInfo* info = nullptr) const;

  /// Affine map of a normalized action in [-1, 1]^2 onto the control bounds.
  ControlInput map_action(const Action& action) const;

  const ScenarioConfig& scenario() const { return scenario_; }
  const CostWeights& weights() const { return weights_; }
  const std::vector<VehicleState>& states() const { return states_; }
  const std::vector<ControlInput>& controls() const { return controls_; }
  const std::vector<ReferenceTrajectory>& references() const { return refs_; }
  const std::vector<StaticObstacle>& obstacles() const { return obstacles_; }
  const UncertaintyFrame& frame() const { return frame_; }
  const EpisodeRecord& record() const { return record_; }
  std::size_t time() const { return t_; }
  bool done() const { return done_; }
  std::size_t n_vehicles() const { return scenario_.n_vehicles; }
  std::size_t observation_size() const { return scenario_.observation_size(); }

  /// Neighbor views of vehicle k: perturbed by the frame's deviations.
  std::vector<NeighborView> neighbor_views(std::size_t k, const UncertaintyFrame& frame) const;

 private:
  std::vector<VehicleState> objects() const;
  void spawn_obstacle();
  bool collides(std::size_t k) const;
  void record_rows(const std::vector<double>& rewards, const StepInfo& info);

  ScenarioConfig scenario_;
  CostWeights weights_;
  UncertaintyConfig uncertainty_cfg_;
  std::uint64_t instance_id_ = 0;

  Rng rng_;
  UncertaintyModel uncertainty_;
  UncertaintyFrame frame_;
  std::vector<VehicleState> states_;
  std::vector<ControlInput> controls_;
  std::vector<ReferenceTrajectory> refs_;
  std::vector<StaticObstacle> obstacles_;
  bool obstacle_pending_ = false;
  std::size_t t_ = 0;
  bool done_ = true;
  EpisodeRecord record_;
};

}  // namespace platoon
