#include "platoon/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "platoon/errors.hpp"

namespace platoon {

namespace {

constexpr double kPositionScale = 100.0;
constexpr double kHeadingErrorScale = 0.1;
constexpr double kSpeedErrorScale = 5.0;

}  // namespace

ScenarioConfig ScenarioConfig::lane_change(std::size_t n_vehicles) {
  ScenarioConfig s;
  s.n_vehicles = n_vehicles;
  s.initial_states.clear();
  s.target_lane.clear();
  for (std::size_t k = 0; k < n_vehicles; ++k) {
    s.initial_states.push_back(
        {static_cast<double>(n_vehicles - 1 - k) * 25.0, s.lane_center(1), 0.0, 15.0});
    s.target_lane.push_back(0);
  }
  return s;
}

void ScenarioConfig::resolve() {
  limits.dt = dt;
  geometry.lane_width = lane_width;
  if (initial_states.empty()) {
    const auto defaults = lane_change(n_vehicles);
    initial_states = defaults.initial_states;
    target_lane = defaults.target_lane;
  }
  if (target_lane.empty()) target_lane.assign(n_vehicles, 0);
  validate();
}

void ScenarioConfig::validate() const {
  if (n_vehicles == 0) throw ConfigError("scenario.n_vehicles must be >= 1");
  if (horizon == 0) throw ConfigError("scenario.horizon must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("scenario.dt must be > 0");
  if (lane_count == 0) throw ConfigError("scenario.lane_count must be >= 1");
  if (!(lane_width > 0.0)) throw ConfigError("scenario.lane_width must be > 0");
  if (!(d_min > 0.0)) throw ConfigError("scenario.d_min must be > 0");
  if (!(maneuver_window > 0.0)) throw ConfigError("scenario.maneuver_window must be > 0");
  if (initial_states.size() != n_vehicles) {
    throw ConfigError("scenario.initial_states must list one state per vehicle");
  }
  if (target_lane.size() != n_vehicles) {
    throw ConfigError("scenario.target_lane must list one lane per vehicle");
  }
  for (std::size_t lane : target_lane) {
    if (lane >= lane_count) throw ConfigError("scenario.target_lane index out of range");
  }
  if (obstacle.lane >= static_cast<int>(lane_count)) {
    throw ConfigError("scenario.obstacle.lane index out of range");
  }
  if (!(obstacle.probability >= 0.0 && obstacle.probability <= 1.0)) {
    throw ConfigError("scenario.obstacle.probability must lie in [0, 1]");
  }
  try {
    geometry.validate();
    limits.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

std::size_t ScenarioConfig::lane_of(double y) const {
  const double idx = std::round(y / lane_width);
  return static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(lane_count - 1)));
}

bool ScenarioConfig::off_road(double y) const {
  return y < -0.5 * lane_width || y > (static_cast<double>(lane_count) - 0.5) * lane_width;
}

void CostWeights::validate() const {
  auto nonneg = [](auto& arr) {
    return std::all_of(arr.begin(), arr.end(), [](double v) { return v >= 0.0; });
  };
  if (!nonneg(q_z) || !nonneg(q_u) || !nonneg(q_du) || !(sigma1 >= 0.0) || !(sigma2 >= 0.0) ||
      !(collision_penalty >= 0.0)) {
    throw ConfigError("cost weights must be non-negative");
  }
}

const VehicleState& ReferenceTrajectory::at(std::size_t t) const {
  return points[std::min(t, points.size() - 1)];
}

double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

namespace {

// Lateral position and rate of a smoothstep transition.
std::pair<double, double> lateral_profile(double y0, double y1, double elapsed, double window) {
  const double s = std::clamp(elapsed / window, 0.0, 1.0);
  const double rate = (s > 0.0 && s < 1.0) ? (y1 - y0) * 6.0 * s * (1.0 - s) / window : 0.0;
  return {y0 + (y1 - y0) * smoothstep(s), rate};
}

}  // namespace

ReferenceTrajectory make_reference(const ScenarioConfig& scenario, std::size_t k) {
  const VehicleState& init = scenario.initial_states.at(k);
  const double y1 = scenario.lane_center(scenario.target_lane.at(k));
  const double start =
      scenario.maneuver_start + static_cast<double>(k) * scenario.maneuver_stagger;
  ReferenceTrajectory ref;
  ref.target_y = y1;
  ref.maneuver_start = start;
  ref.maneuver_end = start + scenario.maneuver_window;
  ref.points.reserve(scenario.horizon + 1);
  for (std::size_t t = 0; t <= scenario.horizon; ++t) {
    const double time = static_cast<double>(t) * scenario.dt;
    const auto [y, rate] = lateral_profile(init.y, y1, time - start, scenario.maneuver_window);
    const double phi = (rate == 0.0) ? 0.0 : std::atan2(rate, init.v);
    ref.points.push_back({init.x + init.v * time, y, phi, init.v});
  }
  return ref;
}

void replan_lateral(ReferenceTrajectory& ref, std::size_t from, double target_y, double window,
                    double dt) {
  if (from >= ref.points.size()) return;
  const double y0 = ref.points[from].y;
  for (std::size_t t = from; t < ref.points.size(); ++t) {
    const double elapsed = static_cast<double>(t - from) * dt;
    const auto [y, rate] = lateral_profile(y0, target_y, elapsed, window);
    ref.points[t].y = y;
    ref.points[t].phi = (rate == 0.0) ? 0.0 : std::atan2(rate, ref.points[t].v);
  }
  ref.target_y = target_y;
  ref.maneuver_start = static_cast<double>(from) * dt;
  ref.maneuver_end = ref.maneuver_start + window;
}

Observation build_observation(const ScenarioConfig& scenario, const VehicleState& ego,
                              const ControlInput& prev_control, const ReferenceTrajectory& ref,
                              std::size_t t, std::vector<NeighborView> neighbors) {
  const auto& lim = scenario.limits;
  const double v_max = lim.z_max[3] > 0.0 ? lim.z_max[3] : 1.0;
  const double a_scale = std::max(std::abs(lim.u_min[0]), std::abs(lim.u_max[0]));
  const double d_scale = std::max(std::abs(lim.u_min[1]), std::abs(lim.u_max[1]));
  const std::size_t slots = scenario.slots();

  Observation obs(scenario.observation_size(), 0.0);
  obs[0] = ego.x / kPositionScale;
  obs[1] = ego.y / kPositionScale;
  obs[2] = ego.phi / std::numbers::pi;
  obs[3] = ego.v / v_max;
  obs[4] = a_scale > 0.0 ? prev_control.a / a_scale : 0.0;
  obs[5] = d_scale > 0.0 ? prev_control.delta / d_scale : 0.0;
  const VehicleState& r = ref.at(std::min(t + scenario.lookahead_steps, scenario.horizon));
  obs[6] = (r.y - ego.y) / scenario.lane_width;
  obs[7] = wrap_angle(r.phi - ego.phi) / kHeadingErrorScale;
  obs[8] = (r.v - ego.v) / kSpeedErrorScale;

  std::stable_sort(neighbors.begin(), neighbors.end(),
                   [](const NeighborView& a, const NeighborView& b) {
                     return std::hypot(a.dx, a.dy) < std::hypot(b.dx, b.dy);
                   });
  for (std::size_t s = 0; s < slots && s < neighbors.size(); ++s) {
    const NeighborView& n = neighbors[s];
    double* slot = obs.data() + 9 + 7 * s;
    slot[0] = 1.0;
    slot[1] = n.dx / kPositionScale;
    slot[2] = n.dy / scenario.lane_width;
    slot[3] = n.dphi / std::numbers::pi;
    slot[4] = n.dv / v_max;
    slot[5] = n.confidence;
    slot[6] = n.safe_distance / kPositionScale;
  }
  return obs;
}

std::vector<NeighborView> perceive_neighbors(std::span<const VehicleState> objects, std::size_t k,
                                             const UncertaintyFrame& frame) {
  if (k >= objects.size() || frame.n_objects != objects.size()) {
    throw ShapeError("perceive_neighbors: frame does not match the objects");
  }
  const VehicleState& ego = objects[k];
  std::vector<NeighborView> out;
  for (std::size_t j = 0; j < objects.size(); ++j) {
    if (j == k) continue;
    const std::size_t idx = frame.index(k, j);
    const PerceptionDeviation& dev = frame.effective_deviation[idx];
    NeighborView n;
    n.dx = objects[j].x + dev.dx - ego.x;
    n.dy = objects[j].y + dev.dy - ego.y;
    n.dphi = wrap_angle(objects[j].phi + dev.dphi - ego.phi);
    n.dv = objects[j].v + dev.dv - ego.v;
    n.confidence = frame.fused_confidence[idx].value();
    n.safe_distance = frame.safe_distance[idx];
    out.push_back(n);
  }
  return out;
}

ControlInput action_to_control(const Action& action, const DynamicsLimits& limits) {
  auto map = [&](double u, std::size_t i) {
    if (!std::isfinite(u)) throw NumericError("non-finite action");
    u = std::clamp(u, -1.0, 1.0);
    return limits.u_min[i] + 0.5 * (u + 1.0) * (limits.u_max[i] - limits.u_min[i]);
  };
  return {map(action[0], 0), map(action[1], 1)};
}

double step_cost(const VehicleState& state, const VehicleState& ref, const ControlInput& control,
                 const ControlInput& dcontrol, const CostWeights& w) {
  const double ex = state.x - ref.x;
  const double ey = state.y - ref.y;
  const double ephi = wrap_angle(state.phi - ref.phi);
  const double ev = state.v - ref.v;
  return w.q_z[0] * ex * ex + w.q_z[1] * ey * ey + w.q_z[2] * ephi * ephi + w.q_z[3] * ev * ev +
         w.q_u[0] * control.a * control.a + w.q_u[1] * control.delta * control.delta +
         w.q_du[0] * dcontrol.a * dcontrol.a + w.q_du[1] * dcontrol.delta * dcontrol.delta;
}

std::vector<VehicleState> EpisodeRecord::final_states() const {
  std::vector<VehicleState> out;
  if (rows.size() < n_vehicles) return out;
  for (std::size_t i = rows.size() - n_vehicles; i < rows.size(); ++i) {
    out.push_back(rows[i].state);
  }
  return out;
}

bool is_success(const EpisodeRecord& record, const SuccessCriteria& criteria) {
  if (record.collision || record.off_road || record.steps == 0) return false;
  const auto finals = record.final_states();
  if (finals.size() != record.n_vehicles) return false;
  for (std::size_t k = 0; k < finals.size(); ++k) {
    if (!(std::abs(finals[k].y - record.target_y[k]) < criteria.lateral_tolerance)) return false;
    if (!(std::abs(finals[k].phi) < criteria.heading_tolerance)) return false;
  }
  return true;
}

std::optional<double> navigation_time(const EpisodeRecord& record,
                                      const SuccessCriteria& criteria) {
  if (record.rows.empty()) return std::nullopt;
  std::size_t settled_step = 0;
  for (std::size_t k = 0; k < record.n_vehicles; ++k) {
    std::optional<std::size_t> first;
    for (std::size_t i = record.rows.size(); i-- > 0;) {
      const TraceRow& row = record.rows[i];
      if (row.k != k) continue;
      if (std::abs(row.state.y - record.target_y[k]) < criteria.lateral_tolerance) {
        first = row.t;
      } else {
        break;
      }
    }
    if (!first) return std::nullopt;
    settled_step = std::max(settled_step, *first);
  }
  return static_cast<double>(settled_step) * record.dt;
}

PlatoonEnv::PlatoonEnv(ScenarioConfig scenario, CostWeights weights,
                       UncertaintyConfig uncertainty, std::uint64_t instance_id)
    : scenario_(std::move(scenario)),
      weights_(weights),
      uncertainty_cfg_(std::move(uncertainty)),
      instance_id_(instance_id) {
  scenario_.resolve();
  weights_.validate();
  uncertainty_cfg_.validate();
}

std::vector<VehicleState> PlatoonEnv::objects() const {
  std::vector<VehicleState> out = states_;
  for (const auto& o : obstacles_) out.push_back(o.pose);
  return out;
}

bool PlatoonEnv::collides(std::size_t k) const {
  const OrientedBox ego = vehicle_polytope(states_[k], scenario_.geometry);
  for (std::size_t j = 0; j < states_.size(); ++j) {
    if (j != k && boxes_intersect(ego, vehicle_polytope(states_[j], scenario_.geometry))) {
      return true;
    }
  }
  for (const auto& o : obstacles_) {
    const OrientedBox box{{o.pose.x, o.pose.y},
                          o.pose.phi,
                          {scenario_.obstacle.length / 2.0, scenario_.obstacle.width / 2.0}};
    if (boxes_intersect(ego, box)) return true;
  }
  return false;
}

std::vector<Observation> PlatoonEnv::reset(std::uint64_t seed) {
  const std::size_t K = scenario_.n_vehicles;
  rng_ = make_rng(seed + scenario_.seed * 0x9E3779B97F4A7C15ULL, instance_id_);
  states_ = scenario_.initial_states;
  controls_.assign(K, ControlInput{});
  refs_.clear();
  for (std::size_t k = 0; k < K; ++k) refs_.push_back(make_reference(scenario_, k));
  obstacles_.clear();
  obstacle_pending_ = uniform(rng_, 0.0, 1.0) < scenario_.obstacle.probability;
  uncertainty_ = UncertaintyModel(uncertainty_cfg_, K, scenario_.d_min, rng_);
  frame_ = uncertainty_.refresh(objects(), rng_);
  t_ = 0;
  done_ = false;

  record_ = EpisodeRecord{};
  record_.n_vehicles = K;
  record_.dt = scenario_.dt;
  for (std::size_t k = 0; k < K; ++k) {
    record_.target_y.push_back(refs_[k].target_y);
    record_.maneuver_start.push_back(refs_[k].maneuver_start);
    record_.maneuver_end.push_back(refs_[k].maneuver_end);
  }

  StepInfo info;
  info.min_margin.assign(K, 0.0);
  info.safe_distance.assign(K, 0.0);
  info.outage_prob.assign(K, 0.0);
  info.cost.assign(K, 0.0);
  info.collided.assign(K, false);
  info.left_road.assign(K, false);
  for (std::size_t k = 0; k < K; ++k) reward(k, frame_, {}, {}, &info);
  record_rows(std::vector<double>(K, 0.0), info);
  for (std::size_t k = 0; k < K; ++k) {
    if (collides(k)) {
      done_ = true;
      record_.collision = true;
    }
  }

  std::vector<Observation> obs;
  for (std::size_t k = 0; k < K; ++k) obs.push_back(observe(k, frame_));
  return obs;
}

ControlInput PlatoonEnv::map_action(const Action& action) const {
  return action_to_control(action, scenario_.limits);
}

void PlatoonEnv::spawn_obstacle() {
  const auto& cfg = scenario_.obstacle;
  const std::size_t lane =
      cfg.lane >= 0 ? static_cast<std::size_t>(cfg.lane) : scenario_.target_lane[0];
  double front = -std::numeric_limits<double>::infinity();
  for (const auto& s : states_) front = std::max(front, s.x);
  obstacles_.push_back({{front + cfg.gap, scenario_.lane_center(lane), 0.0, 0.0}, lane});
  record_.obstacle = true;
  // Vehicles heading into the closed lane fall back to their original lane.
  for (std::size_t k = 0; k < states_.size(); ++k) {
    const std::size_t original = scenario_.lane_of(scenario_.initial_states[k].y);
    if (scenario_.lane_of(refs_[k].target_y) == lane && original != lane) {
      replan_lateral(refs_[k], t_, scenario_.lane_center(original), cfg.replan_window,
                     scenario_.dt);
      record_.target_y[k] = refs_[k].target_y;
      record_.maneuver_start[k] = refs_[k].maneuver_start;
      record_.maneuver_end[k] = refs_[k].maneuver_end;
    }
  }
}

std::vector<NeighborView> PlatoonEnv::neighbor_views(std::size_t k,
                                                     const UncertaintyFrame& frame) const {
  const auto objs = objects();
  return perceive_neighbors(objs, k, frame);
}

Observation PlatoonEnv::observe(std::size_t k, const UncertaintyFrame& frame) const {
  if (k >= scenario_.n_vehicles) throw InvalidArgument("observe: vehicle index out of range");
  return build_observation(scenario_, states_[k], controls_[k], refs_[k], t_,
                           neighbor_views(k, frame));
}

double PlatoonEnv::reward(std::size_t k, const UncertaintyFrame& frame,
                          const ControlInput& control, const ControlInput& dcontrol,
                          StepInfo* info) const {
  if (k >= scenario_.n_vehicles) throw InvalidArgument("reward: vehicle index out of range");
  const VehicleState& ego = states_[k];
  const double cost = step_cost(ego, refs_[k].at(t_), control, dcontrol, weights_);
  double r = -cost;

  const auto objs = objects();
  double min_margin = std::numeric_limits<double>::infinity();
  double nearest = std::numeric_limits<double>::infinity();
  double nearest_safe = scenario_.d_min;
  for (std::size_t j = 0; j < objs.size(); ++j) {
    if (j == k) continue;
    const double dx = objs[j].x - ego.x;
    const double dy = objs[j].y - ego.y;
    const double d_safe = frame.safe_distance[frame.index(k, j)];
    const bool ahead = dx >= 0.0;
    const double margin =
        avoidance_margin(dx, dy, d_safe, scenario_.geometry,
                         ahead ? Constraint::kForward : Constraint::kRear, lane_side_of(dy),
                         scenario_.margins);
    r -= (ahead ? weights_.sigma1 : weights_.sigma2) * std::max(-margin, 0.0);
    min_margin = std::min(min_margin, margin);
    const double dist = std::hypot(dx, dy);
    if (dist < nearest) {
      nearest = dist;
      nearest_safe = d_safe;
    }
  }

  const bool collided = collides(k);
  const bool left_road = scenario_.off_road(ego.y);
  if (collided || left_road) {
    // Terminal event: fixed penalty plus the current cost held over the rest
    // of the horizon, so ending the episode early never pays.
    const double remaining = static_cast<double>(scenario_.horizon - std::min(t_, scenario_.horizon));
    r -= weights_.collision_penalty + remaining * cost;
  }

  if (info != nullptr) {
    info->min_margin[k] = min_margin;
    info->safe_distance[k] = nearest_safe;
    info->outage_prob[k] = frame.outage_prob[k];
    info->cost[k] = cost;
    info->collided[k] = collided;
    info->left_road[k] = left_road;
  }
  return r;
}

void PlatoonEnv::record_rows(const std::vector<double>& rewards, const StepInfo& info) {
  for (std::size_t k = 0; k < scenario_.n_vehicles; ++k) {
    record_.rows.push_back({t_, k, states_[k], controls_[k], rewards[k], info.min_margin[k],
                            info.safe_distance[k], info.outage_prob[k]});
  }
  record_.steps = t_;
}

StepResult PlatoonEnv::step(std::span<const Action> actions) {
  if (done_) throw StateError("step called on a terminated environment; call reset first");
  const std::size_t K = scenario_.n_vehicles;
  if (actions.size() != K) throw ShapeError("step: expected one action per vehicle");

  std::vector<ControlInput> applied(K), changes(K);
  for (std::size_t k = 0; k < K; ++k) {
    const ControlInput u = clamp_control(map_action(actions[k]), controls_[k], scenario_.limits);
    changes[k] = {u.a - controls_[k].a, u.delta - controls_[k].delta};
    applied[k] = u;
    states_[k] = step_kinematics(states_[k], u, scenario_.geometry, scenario_.limits);
    controls_[k] = u;
  }
  ++t_;
  if (obstacle_pending_ && obstacles_.empty() &&
      static_cast<double>(t_) * scenario_.dt >= scenario_.obstacle.spawn_time - 1e-9) {
    spawn_obstacle();
  }
  frame_ = uncertainty_.refresh(objects(), rng_);

  StepResult result;
  auto& info = result.info;
  info.min_margin.assign(K, 0.0);
  info.safe_distance.assign(K, 0.0);
  info.outage_prob.assign(K, 0.0);
  info.cost.assign(K, 0.0);
  info.collided.assign(K, false);
  info.left_road.assign(K, false);
  result.rewards.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    result.rewards[k] = reward(k, frame_, applied[k], changes[k], &info);
    info.collision = info.collision || info.collided[k];
    info.off_road = info.off_road || info.left_road[k];
  }
  info.timeout = t_ >= scenario_.horizon;
  result.terminal = info.collision || info.off_road;
  result.done = result.terminal || info.timeout;
  done_ = result.done;

  record_.collision = record_.collision || info.collision;
  record_.off_road = record_.off_road || info.off_road;
  record_rows(result.rewards, info);

  result.observations.reserve(K);
  for (std::size_t k = 0; k < K; ++k) result.observations.push_back(observe(k, frame_));
  return result;
}

}  // namespace platoon
