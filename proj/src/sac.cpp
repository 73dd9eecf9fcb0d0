#include "platoon/sac.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"

#include "platoon/errors.hpp"

namespace platoon {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

template <class Net>
NetVars forward_impl(Tape& tape, Net& net, Var x, Var h_prev) {
  if (x.cols() != net.input_size || h_prev.cols() != net.hidden_size ||
      x.rows() != h_prev.rows()) {
    throw ShapeError("network_forward: input or hidden shape mismatch");
  }
  NetVars out;
  if (net.core == CoreType::kGru) {
    out.hidden = gru_forward(tape, net.store, net.gru, h_prev, x);
    out.out = mlp_forward(tape, net.store, net.head, out.hidden);
  } else {
    const Var features =
        relu(linear(x, tape.param(net.store, net.dense.weight), tape.param(net.store, net.dense.bias)));
    out.hidden = h_prev;
    out.out = mlp_forward(tape, net.store, net.head, features);
  }
  return out;
}

template <class Net>
PolicyVars policy_impl(Tape& tape, Net& actor, Var obs, Var h_prev) {
  const NetVars nv = network_forward(tape, actor, obs, h_prev);
  const std::size_t a = actor.output_size / 2;
  PolicyVars pv;
  pv.mean = slice_cols(nv.out, 0, a);
  pv.log_std = clamp(slice_cols(nv.out, a, a), kLogStdMin, kLogStdMax);
  pv.hidden = nv.hidden;
  return pv;
}

}  // namespace

std::string to_string(CoreType core) { return core == CoreType::kGru ? "gru" : "mlp"; }

CoreType parse_core_type(const std::string& name) {
  if (name == "gru") return CoreType::kGru;
  if (name == "mlp") return CoreType::kMlp;
  throw ConfigError("unknown core type '" + name + "' (expected gru or mlp)");
}

std::string to_string(HiddenMode mode) {
  return mode == HiddenMode::kStoredHidden ? "stored-hidden" : "reset-zero";
}

HiddenMode parse_hidden_mode(const std::string& name) {
  if (name == "stored-hidden") return HiddenMode::kStoredHidden;
  if (name == "reset-zero") return HiddenMode::kResetZero;
  throw ConfigError("unknown hidden mode '" + name + "' (expected stored-hidden or reset-zero)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

void NetSizes::validate() const {
  if (obs_size == 0 || action_size == 0 || hidden_size == 0) {
    throw ConfigError("network sizes must be positive");
  }
  for (std::size_t w : head_widths) {
    if (w == 0) throw ConfigError("network head widths must be positive");
  }
}

Network Network::make(const std::string& prefix, std::size_t input_size, std::size_t hidden_size,
                      const std::vector<std::size_t>& head_widths, std::size_t output_size,
                      CoreType core) {
  Network net;
  net.core = core;
  net.input_size = input_size;
  net.hidden_size = hidden_size;
  net.output_size = output_size;
  if (core == CoreType::kGru) {
    net.gru = GruParams::declare(net.store, prefix + "gru.", input_size, hidden_size);
  } else {
    net.dense = LinearParams::declare(net.store, prefix + "dense.", input_size, hidden_size);
  }
  net.head = MlpParams::declare(net.store, prefix + "head.", hidden_size, head_widths, output_size);
  return net;
}

NetVars network_forward(Tape& tape, Network& net, Var x, Var h_prev) {
  return forward_impl(tape, net, x, h_prev);
}

NetVars network_forward(Tape& tape, const Network& net, Var x, Var h_prev) {
  return forward_impl(tape, net, x, h_prev);
}

PolicyVars policy_forward(Tape& tape, Network& actor, Var obs, Var h_prev) {
  return policy_impl(tape, actor, obs, h_prev);
}

PolicyVars policy_forward(Tape& tape, const Network& actor, Var obs, Var h_prev) {
  return policy_impl(tape, actor, obs, h_prev);
}

PolicyOutput policy_forward(const Network& actor, const Matrix& obs, const Matrix& h_prev) {
  Tape tape;
  const PolicyVars pv = policy_forward(tape, actor, tape.constant(obs), tape.constant(h_prev));
  return {pv.mean.value(), pv.log_std.value(), pv.hidden.value()};
}

namespace {
const double kActionBound = std::nextafter(1.0, 0.0);
}  // namespace

SampledAction squash_action(const PolicyOutput& out, const Matrix& eps) {
  if (!eps.same_shape(out.mean) || !out.log_std.same_shape(out.mean)) {
    throw ShapeError("squash_action: noise shape mismatch");
  }
  SampledAction s;
  s.action = Matrix(out.mean.rows(), out.mean.cols());
  s.pre_squash = Matrix(out.mean.rows(), out.mean.cols());
  s.log_prob = Matrix(out.mean.rows(), 1);
  for (std::size_t r = 0; r < out.mean.rows(); ++r) {
    double lp = 0.0;
    for (std::size_t c = 0; c < out.mean.cols(); ++c) {
      const double u = out.mean(r, c) + std::exp(out.log_std(r, c)) * eps(r, c);
      s.pre_squash(r, c) = u;
      // tanh rounds to +-1 for |u| > ~19; keep actions strictly inside.
      s.action(r, c) = std::clamp(std::tanh(u), -kActionBound, kActionBound);
      // log(1 - tanh^2 u) = 2 (log 2 - u - softplus(-2u))
      const double log_jac = 2.0 * (std::numbers::ln2 - u - std::log1p(std::exp(-2.0 * u)));
      const double safe_log_jac =
          std::isfinite(log_jac) ? log_jac : 2.0 * (std::numbers::ln2 - std::abs(u));
      lp += -0.5 * eps(r, c) * eps(r, c) - out.log_std(r, c) - kHalfLog2Pi - safe_log_jac;
    }
    s.log_prob(r, 0) = lp;
  }
  return s;
}

SampledAction sample_action(const PolicyOutput& out, Rng& rng, bool deterministic) {
  Matrix eps(out.mean.rows(), out.mean.cols());
  if (!deterministic) {
    for (double& e : eps.values()) e = standard_normal(rng);
  }
  return squash_action(out, eps);
}

CriticOutput critic_forward(const Network& critic, const Matrix& obs, const Matrix& action,
                            const Matrix& h_prev) {
  Tape tape;
  const Var x = concat_cols(tape.constant(obs), tape.constant(action));
  const NetVars nv = network_forward(tape, critic, x, tape.constant(h_prev));
  return {nv.out.value(), nv.hidden.value()};
}

void soft_update(const ParamStore& source, ParamStore& target, double tau) {
  bool same = source.size() == target.size();
  for (std::size_t b = 0; same && b < source.size(); ++b) {
    same = source.block(b).value.same_shape(target.block(b).value);
  }
  if (!same) throw ShapeError("soft_update: parameter shapes differ");
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("soft_update: tau must lie in [0, 1]");
  for (std::size_t b = 0; b < source.size(); ++b) {
    const auto& src = source.block(b).value.values();
    auto& dst = target.block(b).value.values();
    if (tau == 1.0) {
      dst = src;
      continue;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = tau * src[i] + (1.0 - tau) * dst[i];
  }
}

void TrainerConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("trainer.gamma must lie in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("trainer.tau must lie in (0, 1]");
  if (!(alpha >= 0.0)) throw ConfigError("trainer.alpha must be >= 0");
  if (batch_size == 0) throw ConfigError("trainer.batch_size must be >= 1");
  if (!(actor_lr >= 0.0) || !(critic_lr >= 0.0)) {
    throw ConfigError("trainer learning rates must be >= 0");
  }
  if (update_interval == 0) throw ConfigError("trainer.update_interval must be >= 1");
  if (updates_per_step == 0) throw ConfigError("trainer.updates_per_step must be >= 1");
  if (buffer_capacity < batch_size) {
    throw ConfigError("trainer.buffer_capacity must hold at least one batch");
  }
  if (!(grad_clip >= 0.0)) throw ConfigError("trainer.grad_clip must be >= 0");
  if (!(reward_scale > 0.0)) throw ConfigError("trainer.reward_scale must be > 0");
  if (!(initial_log_std >= kLogStdMin && initial_log_std <= kLogStdMax)) {
    throw ConfigError("trainer.initial_log_std must lie in [-20, 2]");
  }
  if (!(actor_output_init_scale > 0.0)) {
    throw ConfigError("trainer.actor_output_init_scale must be > 0");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 &&
        adam_epsilon > 0.0)) {
    throw ConfigError("trainer Adam coefficients out of range");
  }
}

Optimizer::Optimizer(const TrainerConfig& cfg, const ParamStore& store)
    : kind_(cfg.optimizer),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      epsilon_(cfg.adam_epsilon),
      clip_(cfg.grad_clip) {
  if (kind_ == OptimizerKind::kAdam) {
    for (const auto& b : store.blocks()) {
      m_.emplace_back(b.value.rows(), b.value.cols());
      v_.emplace_back(b.value.rows(), b.value.cols());
    }
  }
}

void Optimizer::step(ParamStore& store, double lr) {
  double scale = 1.0;
  if (clip_ > 0.0) {
    double sq = 0.0;
    for (const auto& b : store.blocks()) {
      for (double g : b.grad.values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_) scale = clip_ / norm;
  }
  if (kind_ == OptimizerKind::kSgd) {
    for (auto& b : store.blocks()) {
      auto& w = b.value.values();
      const auto& g = b.grad.values();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * scale * g[i];
    }
    return;
  }
  if (m_.size() != store.size()) throw StateError("optimizer used with a different store");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t bi = 0; bi < store.size(); ++bi) {
    auto& w = store.block(bi).value.values();
    const auto& g = store.block(bi).grad.values();
    auto& m = m_[bi].values();
    auto& v = v_[bi].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = scale * g[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
    }
  }
}

SacLearner::SacLearner(const NetSizes& sizes, const TrainerConfig& cfg, Rng& init_rng,
                       const std::string& prefix)
    : sizes_(sizes), cfg_(cfg) {
  sizes_.validate();
  cfg_.validate();
  const std::size_t critic_in = sizes_.obs_size + sizes_.action_size;
  actor = Network::make(prefix + "actor.", sizes_.obs_size, sizes_.hidden_size,
                        sizes_.head_widths, 2 * sizes_.action_size, sizes_.core);
  q1 = Network::make(prefix + "q1.", critic_in, sizes_.hidden_size, sizes_.head_widths, 1,
                     sizes_.core);
  q2 = Network::make(prefix + "q2.", critic_in, sizes_.hidden_size, sizes_.head_widths, 1,
                     sizes_.core);
  init_params(actor.store, InitScheme::kUniformFanIn, init_rng);
  init_params(q1.store, InitScheme::kUniformFanIn, init_rng);
  init_params(q2.store, InitScheme::kUniformFanIn, init_rng);
  {
    const LinearParams& out = actor.head.layers.back();
    for (double& w : actor.store.block(out.weight).value.values()) w *= cfg_.actor_output_init_scale;
    Matrix& b = actor.store.block(out.bias).value;
    for (std::size_t c = sizes_.action_size; c < 2 * sizes_.action_size; ++c) {
      b[c] = cfg_.initial_log_std;
    }
  }
  auto target_of = [&](const Network& src, const std::string& name) {
    Network t = Network::make(prefix + name, src.input_size, src.hidden_size, sizes_.head_widths,
                              src.output_size, sizes_.core);
    soft_update(src.store, t.store, 1.0);
    return t;
  };
  actor_target = target_of(actor, "actor_target.");
  q1_target = target_of(q1, "q1_target.");
  q2_target = target_of(q2, "q2_target.");
  actor_opt_ = Optimizer(cfg_, actor.store);
  q1_opt_ = Optimizer(cfg_, q1.store);
  q2_opt_ = Optimizer(cfg_, q2.store);
}

RecurrentState SacLearner::zero_state(std::size_t rows) const {
  const std::size_t h = sizes_.hidden_size;
  return {Matrix(rows, h), Matrix(rows, h), Matrix(rows, h)};
}

ActResult SacLearner::act(const Matrix& obs, const RecurrentState& hidden, Rng& rng,
                          bool deterministic, bool track_critics) const {
  const PolicyOutput out = policy_forward(actor, obs, hidden.actor);
  SampledAction s = sample_action(out, rng, deterministic);
  ActResult r;
  r.next_hidden.actor = out.hidden;
  if (track_critics) {
    r.next_hidden.q1 = critic_forward(q1, obs, s.action, hidden.q1).hidden;
    r.next_hidden.q2 = critic_forward(q2, obs, s.action, hidden.q2).hidden;
  } else {
    r.next_hidden.q1 = hidden.q1;
    r.next_hidden.q2 = hidden.q2;
  }
  r.action = std::move(s.action);
  r.log_prob = std::move(s.log_prob);
  return r;
}

const Matrix& SacLearner::state_or_zero(const Matrix& stored, std::size_t rows, std::size_t cols,
                                        Matrix& scratch) const {
  if (cfg_.hidden_mode == HiddenMode::kStoredHidden && stored.rows() == rows &&
      stored.cols() == cols) {
    return stored;
  }
  if (cfg_.hidden_mode == HiddenMode::kStoredHidden && !stored.empty()) {
    throw ShapeError("batch hidden state shape mismatch");
  }
  scratch = Matrix(rows, cols);
  return scratch;
}

Matrix SacLearner::bellman_target(const Batch& batch, Rng& rng) const {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgument("bellman_target: empty batch");
  if (batch.reward.rows() != n || batch.done.rows() != n || batch.next_obs.rows() != n) {
    throw ShapeError("bellman_target: batch columns disagree in length");
  }
  const std::size_t h = sizes_.hidden_size;
  Matrix za, z1, z2;
  const Matrix& ha = state_or_zero(batch.next_hidden.actor, n, h, za);
  const Matrix& h1 = state_or_zero(batch.next_hidden.q1, n, h, z1);
  const Matrix& h2 = state_or_zero(batch.next_hidden.q2, n, h, z2);

  const Network& policy = cfg_.use_target_actor ? actor_target : actor;
  const SampledAction next = sample_action(policy_forward(policy, batch.next_obs, ha), rng);
  const Matrix v1 = critic_forward(q1_target, batch.next_obs, next.action, h1).value;
  const Matrix v2 = critic_forward(q2_target, batch.next_obs, next.action, h2).value;

  Matrix y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double soft_q = std::min(v1(i, 0), v2(i, 0)) - cfg_.alpha * next.log_prob(i, 0);
    const double cont = 1.0 - batch.done(i, 0);
    y(i, 0) = batch.reward(i, 0);
    if (cfg_.gamma != 0.0 && cont != 0.0) y(i, 0) += cfg_.gamma * cont * soft_q;
  }
  return y;
}

std::pair<double, double> SacLearner::critic_loss(const Batch& batch, const Matrix& targets,
                                                  bool with_grad, double* nearest_kink) {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgument("critic_loss: empty batch");
  if (targets.rows() != n || targets.cols() != 1) throw ShapeError("critic_loss: target shape");
  const std::size_t h = sizes_.hidden_size;
  Matrix z1, z2;
  const Matrix& h1 = state_or_zero(batch.hidden.q1, n, h, z1);
  const Matrix& h2 = state_or_zero(batch.hidden.q2, n, h, z2);

  Tape tape;
  const Var x = concat_cols(tape.constant(batch.obs), tape.constant(batch.action));
  const Var y = tape.constant(targets);
  const Var l1 = mean(square(sub(network_forward(tape, q1, x, tape.constant(h1)).out, y)));
  const Var l2 = mean(square(sub(network_forward(tape, q2, x, tape.constant(h2)).out, y)));
  if (with_grad) tape.backward(add(l1, l2));
  if (nearest_kink) *nearest_kink = tape.nearest_kink();
  return {l1.value()(0, 0), l2.value()(0, 0)};
}

std::pair<double, double> SacLearner::update_critics(const Batch& batch, const Matrix& targets) {
  q1.store.zero_grad();
  q2.store.zero_grad();
  const auto losses = critic_loss(batch, targets, true);
  q1_opt_.step(q1.store, cfg_.critic_lr);
  q2_opt_.step(q2.store, cfg_.critic_lr);
  return losses;
}

double SacLearner::actor_loss(const Batch& batch, const Matrix& eps, bool with_grad,
                              double* nearest_kink) {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgument("actor_loss: empty batch");
  const std::size_t h = sizes_.hidden_size;
  if (eps.rows() != n || eps.cols() != sizes_.action_size) throw ShapeError("actor_loss: noise");
  Matrix za, z1, z2;
  const Matrix& ha = state_or_zero(batch.hidden.actor, n, h, za);
  const Matrix& h1 = state_or_zero(batch.hidden.q1, n, h, z1);
  const Matrix& h2 = state_or_zero(batch.hidden.q2, n, h, z2);

  Tape tape;
  const Var obs = tape.constant(batch.obs);
  const PolicyVars pv = policy_forward(tape, actor, obs, tape.constant(ha));
  const Var u = add(pv.mean, mul(exp(pv.log_std), tape.constant(eps)));
  const Var a = tanh(u);

  // log pi = sum(-eps^2/2 - log 2pi / 2) - sum(log_std + log(1 - tanh^2 u))
  Matrix base(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < eps.cols(); ++c) s += -0.5 * eps(r, c) * eps(r, c) - kHalfLog2Pi;
    base(r, 0) = s;
  }
  const Var log_prob =
      add(tape.constant(base), scale(sum_cols(add(pv.log_std, log_one_minus_tanh_sq(u))), -1.0));

  const Network& c1 = q1;
  const Network& c2 = q2;
  const Var x = concat_cols(obs, a);
  const Var v1 = network_forward(tape, c1, x, tape.constant(h1)).out;
  const Var v2 = network_forward(tape, c2, x, tape.constant(h2)).out;
  const Var loss = mean(sub(scale(log_prob, cfg_.alpha), minimum(v1, v2)));
  if (with_grad) tape.backward(loss);
  if (nearest_kink) *nearest_kink = tape.nearest_kink();
  return loss.value()(0, 0);
}

double SacLearner::update_actor(const Batch& batch, Rng& rng) {
  Matrix eps(batch.size(), sizes_.action_size);
  for (double& e : eps.values()) e = standard_normal(rng);
  actor.store.zero_grad();
  const double loss = actor_loss(batch, eps, true);
  actor_opt_.step(actor.store, cfg_.actor_lr);
  return loss;
}

void SacLearner::soft_update_targets() {
  soft_update(actor.store, actor_target.store, cfg_.tau);
  soft_update(q1.store, q1_target.store, cfg_.tau);
  soft_update(q2.store, q2_target.store, cfg_.tau);
}

namespace {

nlohmann::json sizes_json(const NetSizes& s) {
  return {{"obs_size", s.obs_size},       {"action_size", s.action_size},
          {"hidden_size", s.hidden_size}, {"head_widths", s.head_widths},
          {"core", to_string(s.core)}};
}

void append_blocks(Checkpoint& ckpt, const ParamStore& store) {
  for (const auto& b : store.blocks()) ckpt.blocks.emplace_back(b.name, b.value);
}

void restore_blocks(ParamStore& store, const Checkpoint& ckpt) {
  for (auto& b : store.blocks()) {
    const Matrix* found = nullptr;
    for (const auto& [name, value] : ckpt.blocks) {
      if (name == b.name) found = &value;
    }
    if (found == nullptr) throw CheckpointError("checkpoint lacks parameter block '" + b.name + "'");
    if (!found->same_shape(b.value)) {
      throw CheckpointError("checkpoint block '" + b.name + "' has shape " +
                            std::to_string(found->rows()) + "x" + std::to_string(found->cols()) +
                            ", expected " + std::to_string(b.value.rows()) + "x" +
                            std::to_string(b.value.cols()));
    }
    b.value = *found;
  }
}

}  // namespace

Checkpoint to_checkpoint(const std::vector<const SacLearner*>& learners, std::uint64_t step,
                         const std::string& extra_metadata) {
  if (learners.empty()) throw InvalidArgument("to_checkpoint: no learners");
  Checkpoint ckpt;
  ckpt.step = step;
  nlohmann::json meta;
  meta["networks"] = sizes_json(learners.front()->sizes());
  meta["learners"] = learners.size();
  meta["extra"] = nlohmann::json::parse(extra_metadata);
  ckpt.metadata = meta.dump();
  for (const SacLearner* l : learners) {
    for (const Network* net :
         {&l->actor, &l->q1, &l->q2, &l->actor_target, &l->q1_target, &l->q2_target}) {
      append_blocks(ckpt, net->store);
    }
  }
  return ckpt;
}

Checkpoint to_checkpoint(const SacLearner& learner, std::uint64_t step,
                         const std::string& extra_metadata) {
  return to_checkpoint(std::vector<const SacLearner*>{&learner}, step, extra_metadata);
}

NetSizes checkpoint_sizes(const Checkpoint& checkpoint) {
  try {
    const auto meta = nlohmann::json::parse(checkpoint.metadata);
    const auto& n = meta.at("networks");
    NetSizes s;
    s.obs_size = n.at("obs_size").get<std::size_t>();
    s.action_size = n.at("action_size").get<std::size_t>();
    s.hidden_size = n.at("hidden_size").get<std::size_t>();
    s.head_widths = n.at("head_widths").get<std::vector<std::size_t>>();
    s.core = parse_core_type(n.at("core").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata unreadable: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
}

void load_checkpoint(SacLearner& learner, const Checkpoint& checkpoint) {
  for (Network* net : {&learner.actor, &learner.q1, &learner.q2, &learner.actor_target,
                       &learner.q1_target, &learner.q2_target}) {
    restore_blocks(net->store, checkpoint);
  }
}

}  // namespace platoon
