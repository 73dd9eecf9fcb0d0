#include "platoon/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "platoon/errors.hpp"

namespace platoon {

using nlohmann::json;

namespace {

// Reads fields out of one JSON object, remembering which keys were used so
// that leftovers can be reported.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("invalid value for '" + sub(key) + "': " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(j_.contains(key) ? j_.at(key) : empty(), sub(key));
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + sub(it.key().c_str()) + "'");
    }
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json state_json(const VehicleState& s) { return json::array({s.x, s.y, s.phi, s.v}); }

VehicleState state_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw ConfigError("initial state must have 4 entries [x, y, phi, v]");
  return {v[0], v[1], v[2], v[3]};
}

void read_scenario(Reader r, ScenarioConfig& s) {
  r.get("n_vehicles", s.n_vehicles);
  r.get("horizon", s.horizon);
  r.get("dt", s.dt);
  r.get("lane_count", s.lane_count);
  r.get("lane_width", s.lane_width);
  r.get("d_min", s.d_min);
  r.get("seed", s.seed);
  r.get("maneuver_start", s.maneuver_start);
  r.get("maneuver_stagger", s.maneuver_stagger);
  r.get("maneuver_window", s.maneuver_window);
  r.get("lookahead_steps", s.lookahead_steps);
  r.get("neighbor_slots", s.neighbor_slots);
  r.get("target_lane", s.target_lane);
  json states = json::array();
  r.get("initial_states", states);
  s.initial_states.clear();
  for (const auto& st : states) s.initial_states.push_back(state_from(st));

  Reader g = r.child("geometry");
  g.get("length", s.geometry.length);
  g.get("width", s.geometry.width);
  g.get("lf", s.geometry.lf);
  g.get("lr", s.geometry.lr);
  g.finish();

  s.limits = DynamicsLimits::standard(s.dt);
  Reader l = r.child("limits");
  l.get("z_min", s.limits.z_min);
  l.get("z_max", s.limits.z_max);
  l.get("u_min", s.limits.u_min);
  l.get("u_max", s.limits.u_max);
  l.get("du_min", s.limits.du_min);
  l.get("du_max", s.limits.du_max);
  l.finish();

  Reader o = r.child("obstacle");
  o.get("probability", s.obstacle.probability);
  o.get("spawn_time", s.obstacle.spawn_time);
  o.get("lane", s.obstacle.lane);
  o.get("gap", s.obstacle.gap);
  o.get("length", s.obstacle.length);
  o.get("width", s.obstacle.width);
  o.get("replan_window", s.obstacle.replan_window);
  o.finish();

  r.get("rcac_width_scaled", s.margins.rcac_width_scaled);
  r.finish();
}

void read_weights(Reader r, CostWeights& w) {
  r.get("q_z", w.q_z);
  r.get("q_u", w.q_u);
  r.get("q_du", w.q_du);
  r.get("sigma1", w.sigma1);
  r.get("sigma2", w.sigma2);
  r.get("collision_penalty", w.collision_penalty);
  r.finish();
}

void read_uncertainty(Reader r, UncertaintyConfig& u) {
  Reader p = r.child("perception");
  p.get("d_max", u.perception.d_max);
  p.get("rho_length_scale", u.perception.rho_length_scale);
  p.get("weather_factor", u.perception.weather_factor);
  p.get("deviation_scales", u.perception.deviation_scales);
  p.get("epsilon_chance", u.perception.epsilon_chance);
  p.finish();

  Reader c = r.child("channel");
  c.get("n_antennas", u.channel.n_antennas);
  c.get("epsilon_csi", u.channel.epsilon_csi);
  c.get("tx_power", u.channel.tx_power);
  c.get("noise_power", u.channel.noise_power);
  c.get("power_alloc", u.channel.power_alloc);
  c.get("gamma_threshold", u.channel.gamma_threshold);
  c.get("sigma0", u.channel.sigma0);
  c.get("analytic_rayleigh", u.channel.analytic_rayleigh);
  c.finish();

  Reader f = r.child("fusion");
  f.get("enabled", u.fusion.enabled);
  std::string weight = u.fusion.weight == FusionWeight::kSigma ? "sigma" : "one_minus_p";
  f.get("weight", weight);
  if (weight == "sigma") {
    u.fusion.weight = FusionWeight::kSigma;
  } else if (weight == "one_minus_p") {
    u.fusion.weight = FusionWeight::kOneMinusP;
  } else {
    throw ConfigError("uncertainty.fusion.weight must be 'sigma' or 'one_minus_p'");
  }
  f.get("outage_samples", u.fusion.outage_samples);
  f.finish();
  r.finish();
}

void read_trainer(Reader r, TrainerConfig& t) {
  r.get("gamma", t.gamma);
  r.get("tau", t.tau);
  r.get("alpha", t.alpha);
  r.get("batch_size", t.batch_size);
  r.get("actor_lr", t.actor_lr);
  r.get("critic_lr", t.critic_lr);
  r.get("max_iterations", t.max_iterations);
  r.get("update_interval", t.update_interval);
  r.get("updates_per_step", t.updates_per_step);
  r.get("warmup", t.warmup);
  r.get("buffer_capacity", t.buffer_capacity);
  r.get("seed", t.seed);
  std::string mode = to_string(t.hidden_mode);
  r.get("hidden_mode", mode);
  t.hidden_mode = parse_hidden_mode(mode);
  r.get("use_target_actor", t.use_target_actor);
  r.get("shared_parameters", t.shared_parameters);
  std::string opt = to_string(t.optimizer);
  r.get("optimizer", opt);
  t.optimizer = parse_optimizer(opt);
  r.get("adam_beta1", t.adam_beta1);
  r.get("adam_beta2", t.adam_beta2);
  r.get("adam_epsilon", t.adam_epsilon);
  r.get("grad_clip", t.grad_clip);
  r.get("reward_scale", t.reward_scale);
  r.get("random_warmup", t.random_warmup);
  r.get("initial_log_std", t.initial_log_std);
  r.get("actor_output_init_scale", t.actor_output_init_scale);
  r.finish();
}

}  // namespace

void RunConfig::resolve() {
  scenario.resolve();
  weights.validate();
  uncertainty.validate();
  trainer.validate();
  net_sizes().validate();
}

NetSizes RunConfig::net_sizes() const {
  NetSizes s = network;
  s.obs_size = scenario.observation_size();
  return s;
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  Reader root(j, "");
  ScenarioConfig scenario;
  scenario.initial_states.clear();
  scenario.target_lane.clear();
  read_scenario(root.child("scenario"), scenario);
  c.scenario = scenario;
  read_weights(root.child("weights"), c.weights);
  read_uncertainty(root.child("uncertainty"), c.uncertainty);
  read_trainer(root.child("trainer"), c.trainer);

  Reader n = root.child("network");
  n.get("hidden_size", c.network.hidden_size);
  n.get("head_widths", c.network.head_widths);
  n.get("action_size", c.network.action_size);
  n.finish();
  std::string core = to_string(c.network.core);
  root.get("core_type", core);
  c.network.core = parse_core_type(core);

  Reader e = root.child("eval");
  e.get("episodes", c.eval.episodes);
  e.get("seed", c.eval.seed);
  e.finish();
  if (c.eval.episodes == 0) throw ConfigError("eval.episodes must be >= 1");

  std::string out = c.output_dir.string();
  root.get("output_dir", out);
  c.output_dir = out;
  root.finish();

  c.resolve();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  const auto& s = c.scenario;
  json states = json::array();
  for (const auto& st : s.initial_states) states.push_back(state_json(st));
  json scenario = {
      {"n_vehicles", s.n_vehicles},
      {"horizon", s.horizon},
      {"dt", s.dt},
      {"lane_count", s.lane_count},
      {"lane_width", s.lane_width},
      {"d_min", s.d_min},
      {"seed", s.seed},
      {"maneuver_start", s.maneuver_start},
      {"maneuver_stagger", s.maneuver_stagger},
      {"maneuver_window", s.maneuver_window},
      {"lookahead_steps", s.lookahead_steps},
      {"neighbor_slots", s.slots()},
      {"target_lane", s.target_lane},
      {"initial_states", states},
      {"geometry",
       {{"length", s.geometry.length},
        {"width", s.geometry.width},
        {"lf", s.geometry.lf},
        {"lr", s.geometry.lr}}},
      {"limits",
       {{"z_min", s.limits.z_min},
        {"z_max", s.limits.z_max},
        {"u_min", s.limits.u_min},
        {"u_max", s.limits.u_max},
        {"du_min", s.limits.du_min},
        {"du_max", s.limits.du_max}}},
      {"obstacle",
       {{"probability", s.obstacle.probability},
        {"spawn_time", s.obstacle.spawn_time},
        {"lane", s.obstacle.lane},
        {"gap", s.obstacle.gap},
        {"length", s.obstacle.length},
        {"width", s.obstacle.width},
        {"replan_window", s.obstacle.replan_window}}},
      {"rcac_width_scaled", s.margins.rcac_width_scaled},
  };
  const auto& w = c.weights;
  json weights = {{"q_z", w.q_z},       {"q_u", w.q_u},       {"q_du", w.q_du},
                  {"sigma1", w.sigma1}, {"sigma2", w.sigma2}, {"collision_penalty", w.collision_penalty}};
  const auto& u = c.uncertainty;
  json uncertainty = {
      {"perception",
       {{"d_max", u.perception.d_max},
        {"rho_length_scale", u.perception.rho_length_scale},
        {"weather_factor", u.perception.weather_factor},
        {"deviation_scales", u.perception.deviation_scales},
        {"epsilon_chance", u.perception.epsilon_chance}}},
      {"channel",
       {{"n_antennas", u.channel.n_antennas},
        {"epsilon_csi", u.channel.epsilon_csi},
        {"tx_power", u.channel.tx_power},
        {"noise_power", u.channel.noise_power},
        {"power_alloc", u.channel.power_alloc},
        {"gamma_threshold", u.channel.gamma_threshold},
        {"sigma0", u.channel.sigma0},
        {"analytic_rayleigh", u.channel.analytic_rayleigh}}},
      {"fusion",
       {{"enabled", u.fusion.enabled},
        {"weight", u.fusion.weight == FusionWeight::kSigma ? "sigma" : "one_minus_p"},
        {"outage_samples", u.fusion.outage_samples}}},
  };
  const auto& t = c.trainer;
  json trainer = {
      {"gamma", t.gamma},
      {"tau", t.tau},
      {"alpha", t.alpha},
      {"batch_size", t.batch_size},
      {"actor_lr", t.actor_lr},
      {"critic_lr", t.critic_lr},
      {"max_iterations", t.max_iterations},
      {"update_interval", t.update_interval},
      {"updates_per_step", t.updates_per_step},
      {"warmup", t.warmup},
      {"buffer_capacity", t.buffer_capacity},
      {"seed", t.seed},
      {"hidden_mode", to_string(t.hidden_mode)},
      {"use_target_actor", t.use_target_actor},
      {"shared_parameters", t.shared_parameters},
      {"optimizer", to_string(t.optimizer)},
      {"adam_beta1", t.adam_beta1},
      {"adam_beta2", t.adam_beta2},
      {"adam_epsilon", t.adam_epsilon},
      {"grad_clip", t.grad_clip},
      {"reward_scale", t.reward_scale},
      {"random_warmup", t.random_warmup},
      {"initial_log_std", t.initial_log_std},
      {"actor_output_init_scale", t.actor_output_init_scale},
  };
  return {
      {"scenario", scenario},
      {"weights", weights},
      {"uncertainty", uncertainty},
      {"trainer", trainer},
      {"network",
       {{"hidden_size", c.network.hidden_size},
        {"head_widths", c.network.head_widths},
        {"action_size", c.network.action_size}}},
      {"core_type", to_string(c.network.core)},
      {"eval", {{"episodes", c.eval.episodes}, {"seed", c.eval.seed}}},
      {"output_dir", c.output_dir.string()},
  };
}

}  // namespace platoon
