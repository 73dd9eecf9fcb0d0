#include "platoon/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <omp.h>

#include "platoon/errors.hpp"
#include "platoon/kernels.hpp"
#include "platoon/trainer.hpp"

namespace platoon {

using nlohmann::json;

SacPolicy::SacPolicy(std::vector<SacLearner> learners) : learners_(std::move(learners)) {
  if (learners_.empty()) throw InvalidArgument("SacPolicy needs at least one learner");
}

const SacLearner& SacPolicy::learner_for(std::size_t k) const {
  return learners_.size() == 1 ? learners_.front() : learners_.at(k);
}

void SacPolicy::reset(std::size_t n_vehicles) {
  if (learners_.size() != 1 && learners_.size() != n_vehicles) {
    throw ShapeError("per-vehicle policy has " + std::to_string(learners_.size()) +
                     " learners for " + std::to_string(n_vehicles) + " vehicles");
  }
  hidden_.clear();
  for (std::size_t k = 0; k < n_vehicles; ++k) {
    hidden_.emplace_back(1, learner_for(k).sizes().hidden_size);
  }
}

std::vector<Action> SacPolicy::act(const PlatoonEnv&,
                                   const std::vector<Observation>& observations) {
  return act(observations);
}

std::vector<Action> SacPolicy::act(const std::vector<Observation>& observations) {
  if (observations.size() != hidden_.size()) reset(observations.size());
  std::vector<Action> actions(observations.size());
  for (std::size_t k = 0; k < observations.size(); ++k) {
    const SacLearner& l = learner_for(k);
    const PolicyOutput out =
        policy_forward(l.actor, Matrix::row_vector(observations[k]), hidden_[k]);
    actions[k] = {std::tanh(out.mean(0, 0)), std::tanh(out.mean(0, 1))};
    hidden_[k] = out.hidden;
  }
  return actions;
}

std::unique_ptr<Policy> SacPolicy::clone() const { return std::make_unique<SacPolicy>(*this); }

Action control_to_action(const ControlInput& control, const DynamicsLimits& limits) {
  auto inv = [&](double u, std::size_t i) {
    const double span = limits.u_max[i] - limits.u_min[i];
    return span > 0.0 ? std::clamp(2.0 * (u - limits.u_min[i]) / span - 1.0, -1.0, 1.0) : 0.0;
  };
  return {inv(control.a, 0), inv(control.delta, 1)};
}

std::vector<Action> TrackingPolicy::act(const PlatoonEnv& env, const std::vector<Observation>&) {
  const ScenarioConfig& sc = env.scenario();
  const auto& geom = sc.geometry;
  const std::size_t t = env.time();
  std::vector<Action> actions;
  for (std::size_t k = 0; k < env.n_vehicles(); ++k) {
    const VehicleState& s = env.states()[k];
    const ReferenceTrajectory& ref = env.references()[k];
    const VehicleState& next = ref.at(t + 1);
    const VehicleState& now = ref.at(t);
    const double a = 1.0 * (next.v - s.v) + 0.5 * (next.x - s.x);

    const double v = std::max(s.v, 1.0);
    const double phi_des = next.phi + std::atan(1.5 * (next.y - s.y) / v);
    const double phi_rate_ref = wrap_angle(next.phi - now.phi) / sc.dt;
    const double phi_rate = 4.0 * wrap_angle(phi_des - s.phi) + phi_rate_ref;
    const double beta = std::asin(std::clamp(phi_rate * geom.lr / v, -0.99, 0.99));
    const double delta = std::atan(std::tan(beta) * (geom.lf + geom.lr) / geom.lr);
    actions.push_back(control_to_action({a, delta}, sc.limits));
  }
  return actions;
}

std::vector<Action> CollidingPolicy::act(const PlatoonEnv& env, const std::vector<Observation>&) {
  std::vector<Action> actions;
  const auto& lim = env.scenario().limits;
  for (std::size_t k = 0; k < env.n_vehicles(); ++k) {
    actions.push_back(control_to_action({k == 0 ? lim.u_min[0] : lim.u_max[0], 0.0}, lim));
  }
  return actions;
}

std::vector<SacLearner> load_learners(const RunConfig& config, const Checkpoint& checkpoint) {
  const NetSizes sizes = config.net_sizes();
  const NetSizes stored = checkpoint_sizes(checkpoint);
  if (stored.obs_size != sizes.obs_size || stored.action_size != sizes.action_size ||
      stored.hidden_size != sizes.hidden_size || stored.head_widths != sizes.head_widths ||
      stored.core != sizes.core) {
    throw CheckpointError("checkpoint network layout (core " + to_string(stored.core) +
                          ", hidden " + std::to_string(stored.hidden_size) + ", obs " +
                          std::to_string(stored.obs_size) + ") does not match the config (core " +
                          to_string(sizes.core) + ", hidden " + std::to_string(sizes.hidden_size) +
                          ", obs " + std::to_string(sizes.obs_size) + ")");
  }
  const std::size_t n = config.trainer.shared_parameters ? 1 : config.scenario.n_vehicles;
  Rng rng = make_rng(0, 0);
  std::vector<SacLearner> learners;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string prefix =
        config.trainer.shared_parameters ? "" : "agent" + std::to_string(i) + ".";
    learners.emplace_back(sizes, config.trainer, rng, prefix);
    load_checkpoint(learners.back(), checkpoint);
  }
  return learners;
}

std::vector<SacLearner> load_learners(const RunConfig& config,
                                      const std::filesystem::path& checkpoint_path) {
  return load_learners(config, read_checkpoint(checkpoint_path));
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

json metrics_json(const MetricsReport& r) {
  json episodes = json::array();
  for (const auto& e : r.episodes) {
    episodes.push_back({{"index", e.index},
                        {"seed", e.seed},
                        {"success", e.success},
                        {"collision", e.collision},
                        {"off_road", e.off_road},
                        {"obstacle", e.obstacle},
                        {"navigation_time", optional_json(e.navigation_time)},
                        {"return", e.episode_return},
                        {"steps", e.steps}});
  }
  return {{"n_episodes", r.n_episodes},
          {"success_rate", r.success_rate},
          {"navigation_time", optional_json(r.navigation_time)},
          {"avg_velocity", r.avg_velocity},
          {"avg_heading", r.avg_heading},
          {"collisions", r.collisions},
          {"episodes", episodes}};
}

MetricsReport summarize(const std::vector<EpisodeRecord>& records,
                        const std::vector<std::uint64_t>& seeds) {
  if (records.empty()) throw InvalidArgument("summarize: no episodes");
  MetricsReport r;
  r.n_episodes = records.size();
  std::size_t successes = 0;
  double nav_sum = 0.0;
  std::size_t nav_count = 0;
  double v_sum = 0.0, heading_sum = 0.0;
  std::size_t v_count = 0, heading_count = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const EpisodeRecord& rec = records[i];
    EpisodeSummary e;
    e.index = i;
    e.seed = i < seeds.size() ? seeds[i] : 0;
    e.success = is_success(rec);
    e.collision = rec.collision;
    e.off_road = rec.off_road;
    e.obstacle = rec.obstacle;
    e.steps = rec.steps;
    if (e.success) {
      ++successes;
      e.navigation_time = navigation_time(rec);
      if (e.navigation_time) {
        nav_sum += *e.navigation_time;
        ++nav_count;
      }
    }
    if (rec.collision) ++r.collisions;
    double ret = 0.0;
    for (const TraceRow& row : rec.rows) {
      ret += row.reward;
      v_sum += row.state.v;
      ++v_count;
      const double time = static_cast<double>(row.t) * rec.dt;
      if (row.k < rec.maneuver_start.size() && time >= rec.maneuver_start[row.k] &&
          time <= rec.maneuver_end[row.k]) {
        heading_sum += row.state.phi;
        ++heading_count;
      }
    }
    e.episode_return = rec.n_vehicles > 0 ? ret / static_cast<double>(rec.n_vehicles) : 0.0;
    r.episodes.push_back(e);
  }
  r.success_rate = static_cast<double>(successes) / static_cast<double>(records.size());
  if (nav_count > 0) r.navigation_time = nav_sum / static_cast<double>(nav_count);
  if (v_count > 0) r.avg_velocity = v_sum / static_cast<double>(v_count);
  if (heading_count > 0) r.avg_heading = heading_sum / static_cast<double>(heading_count);
  return r;
}

EvalResult run_episodes(const Policy& policy, const RunConfig& config, std::size_t n,
                        std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("run_episodes: n must be >= 1");
  std::vector<EpisodeRecord> records(n);
  std::vector<double> seconds(n, 0.0);
  std::vector<std::size_t> steps(n, 0);
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t i = 0; i < n; ++i) seeds[i] = episode_seed(seed, i);

  auto run_one = [&](std::size_t i, Policy& p) {
    PlatoonEnv env(config.scenario, config.weights, config.uncertainty, i);
    auto obs = env.reset(seeds[i]);
    p.reset(env.n_vehicles());
    double elapsed = 0.0;
    while (!env.done()) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto actions = p.act(env, obs);
      StepResult res = env.step(actions);
      elapsed += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      obs = std::move(res.observations);
      ++steps[i];
    }
    seconds[i] = elapsed;
    records[i] = env.record();
  };

  const int threads = kernels::thread_count();
  if (threads > 1 && n > 1) {
    std::vector<std::string> errors(n);
#pragma omp parallel num_threads(threads)
    {
      auto local = policy.clone();
#pragma omp for schedule(static)
      for (std::size_t i = 0; i < n; ++i) {
        try {
          run_one(i, *local);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    }
    for (const auto& e : errors) {
      if (!e.empty()) throw Error("evaluation episode failed: " + e);
    }
  } else {
    auto local = policy.clone();
    for (std::size_t i = 0; i < n; ++i) run_one(i, *local);
  }

  EvalResult out;
  out.metrics = summarize(records, seeds);
  double total_s = 0.0;
  std::size_t total_steps = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total_s += seconds[i];
    total_steps += steps[i];
  }
  if (total_steps > 0) out.metrics.avg_compute_time_per_step = total_s / static_cast<double>(total_steps);
  out.records = std::move(records);
  return out;
}

std::string trace_header() {
  return "t,k,x,y,phi,v,a,delta,reward,min_margin,safe_distance,outage_prob";
}

void export_trace(const EpisodeRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace file '" + path.string() + "'");
  out << trace_header() << '\n';
  char buf[640];
  for (const TraceRow& r : record.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.t, r.k, r.state.x, r.state.y, r.state.phi, r.state.v, r.control.a,
                  r.control.delta, r.reward, r.min_margin, r.safe_distance, r.outage_prob);
    out << buf;
  }
  if (!out) throw IoError("failed writing trace file '" + path.string() + "'");
}

std::vector<TraceRow> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read trace file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != trace_header()) {
    throw IoError("trace file '" + path.string() + "' has an unexpected header");
  }
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 12) throw IoError("malformed trace row in '" + path.string() + "'");
    auto d = [&](std::size_t i) { return std::strtod(f[i].c_str(), nullptr); };
    TraceRow r;
    r.t = std::stoull(f[0]);
    r.k = std::stoull(f[1]);
    r.state = {d(2), d(3), d(4), d(5)};
    r.control = {d(6), d(7)};
    r.reward = d(8);
    r.min_margin = d(9);
    r.safe_distance = d(10);
    r.outage_prob = d(11);
    rows.push_back(r);
  }
  return rows;
}

PredictionContext capture_context(const PlatoonEnv& env) {
  PredictionContext ctx;
  ctx.scenario = env.scenario();
  ctx.states = env.states();
  ctx.controls = env.controls();
  ctx.references = env.references();
  for (const auto& o : env.obstacles()) ctx.obstacles.push_back(o.pose);
  ctx.frame = env.frame();
  ctx.t = env.time();
  return ctx;
}

void advance_prediction(SacPolicy& policy, PredictionContext& ctx) {
  const std::size_t K = ctx.states.size();
  std::vector<VehicleState> objects = ctx.states;
  objects.insert(objects.end(), ctx.obstacles.begin(), ctx.obstacles.end());
  std::vector<Observation> obs;
  for (std::size_t k = 0; k < K; ++k) {
    obs.push_back(build_observation(ctx.scenario, ctx.states[k], ctx.controls[k],
                                    ctx.references[k], ctx.t,
                                    perceive_neighbors(objects, k, ctx.frame)));
  }
  const auto actions = policy.act(obs);
  for (std::size_t k = 0; k < K; ++k) {
    const ControlInput u = clamp_control(action_to_control(actions[k], ctx.scenario.limits),
                                         ctx.controls[k], ctx.scenario.limits);
    ctx.states[k] = step_kinematics(ctx.states[k], u, ctx.scenario.geometry, ctx.scenario.limits);
    ctx.controls[k] = u;
  }
  ++ctx.t;
}

std::vector<std::vector<VehicleState>> autoregressive_rollout(SacPolicy& policy,
                                                              PredictionContext ctx,
                                                              std::size_t horizon) {
  if (horizon == 0) throw InvalidArgument("autoregressive_rollout: H must be >= 1");
  std::vector<std::vector<VehicleState>> out;
  for (std::size_t h = 0; h < horizon; ++h) {
    advance_prediction(policy, ctx);
    out.push_back(ctx.states);
  }
  return out;
}

double prediction_mae(const std::vector<VehicleState>& predicted,
                      const std::vector<VehicleState>& reference) {
  if (predicted.size() != reference.size()) {
    throw ShapeError("prediction_mae: sequences differ in length");
  }
  if (predicted.empty()) throw ShapeError("prediction_mae: empty sequences");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    sum += std::abs(predicted[i].x - reference[i].x) + std::abs(predicted[i].y - reference[i].y);
  }
  return sum / (2.0 * static_cast<double>(predicted.size()));
}

double rollout_mae(const SacPolicy& policy, const RunConfig& config, std::size_t horizon,
                   std::size_t episodes, std::uint64_t seed, std::size_t stride) {
  if (horizon == 0 || episodes == 0 || stride == 0) {
    throw InvalidArgument("rollout_mae: horizon, episodes and stride must be >= 1");
  }
  RunConfig cfg = config;
  cfg.scenario.obstacle.probability = 0.0;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    PlatoonEnv env(cfg.scenario, cfg.weights, cfg.uncertainty, e);
    auto obs = env.reset(episode_seed(seed, e));
    SacPolicy live = policy;
    live.reset(env.n_vehicles());
    while (!env.done()) {
      const std::size_t t = env.time();
      if (t % stride == 0 && t + horizon <= cfg.scenario.horizon) {
        SacPolicy branch = live;
        const auto predicted = autoregressive_rollout(branch, capture_context(env), horizon);
        for (std::size_t k = 0; k < env.n_vehicles(); ++k) {
          std::vector<VehicleState> pred, ref;
          for (std::size_t h = 0; h < horizon; ++h) {
            pred.push_back(predicted[h][k]);
            ref.push_back(env.references()[k].at(t + h + 1));
          }
          sum += prediction_mae(pred, ref);
          ++count;
        }
      }
      const auto actions = live.act(env, obs);
      obs = env.step(actions).observations;
    }
  }
  if (count == 0) throw InvalidArgument("rollout_mae: horizon longer than the episode");
  return sum / static_cast<double>(count);
}

const CoreComparisonRow& CoreComparison::find(CoreType core, std::size_t horizon) const {
  for (const auto& r : rows) {
    if (r.core == core && r.horizon == horizon) return r;
  }
  throw InvalidArgument("no comparison row for core " + to_string(core) + " and H " +
                        std::to_string(horizon));
}

std::string CoreComparison::to_csv() const {
  std::ostringstream out;
  out << "core,H,median_mae";
  for (std::uint64_t s : seeds) out << ",seed_" << s;
  out << '\n';
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.median_mae);
    out << to_string(r.core) << ',' << r.horizon << ',' << buf;
    for (double v : r.per_seed) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}

json CoreComparison::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"core", to_string(r.core)},
                         {"H", r.horizon},
                         {"median_mae", r.median_mae},
                         {"per_seed", r.per_seed}});
  }
  return {{"seeds", seeds}, {"rows", rows_json}};
}

CoreComparison compare_policies(const RunConfig& config, const std::vector<std::size_t>& horizons,
                                const std::vector<std::uint64_t>& seeds,
                                const std::vector<const SacPolicy*>& gru,
                                const std::vector<const SacPolicy*>& mlp) {
  if (seeds.empty()) throw InvalidArgument("compare_cores: at least one seed is required");
  if (gru.size() != seeds.size() || mlp.size() != seeds.size()) {
    throw ShapeError("compare_policies: one policy per core and seed is required");
  }
  CoreComparison table;
  table.seeds = seeds;
  for (CoreType core : {CoreType::kGru, CoreType::kMlp}) {
    const auto& policies = core == CoreType::kGru ? gru : mlp;
    for (std::size_t h : horizons) {
      CoreComparisonRow row;
      row.core = core;
      row.horizon = h;
      for (const SacPolicy* p : policies) {
        row.per_seed.push_back(
            rollout_mae(*p, config, h, config.eval.episodes, config.eval.seed));
      }
      row.median_mae = median(row.per_seed);
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

CoreComparison compare_cores(const RunConfig& config, const std::vector<std::size_t>& horizons,
                             const std::vector<std::uint64_t>& seeds,
                             const std::function<void(const std::string&)>& progress) {
  if (seeds.empty()) throw InvalidArgument("compare_cores: at least one seed is required");
  std::vector<SacPolicy> gru, mlp;
  for (CoreType core : {CoreType::kGru, CoreType::kMlp}) {
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = config;
      cfg.network.core = core;
      cfg.trainer.seed = seed;
      const EnvFactory factory = [&cfg](std::uint64_t id) {
        return PlatoonEnv(cfg.scenario, cfg.weights, cfg.uncertainty, id);
      };
      TrainResult trained = train(factory, cfg.net_sizes(), cfg.trainer);
      if (progress) {
        progress("trained core " + to_string(core) + " seed " + std::to_string(seed) + " in " +
                 std::to_string(trained.seconds) + " s");
      }
      (core == CoreType::kGru ? gru : mlp).emplace_back(std::move(trained.learners));
    }
  }
  std::vector<const SacPolicy*> gp, mp;
  for (const auto& p : gru) gp.push_back(&p);
  for (const auto& p : mlp) mp.push_back(&p);
  return compare_policies(config, horizons, seeds, gp, mp);
}

}  // namespace platoon
