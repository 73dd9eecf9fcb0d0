#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "platoon/autodiff.hpp"
#include "platoon/checkpoint.hpp"
#include "platoon/nn.hpp"
#include "platoon/random.hpp"

namespace platoon {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

enum class CoreType { kGru, kMlp };
std::string to_string(CoreType core);
CoreType parse_core_type(const std::string& name);

enum class HiddenMode { kStoredHidden, kResetZero };
std::string to_string(HiddenMode mode);
HiddenMode parse_hidden_mode(const std::string& name);

enum class OptimizerKind { kSgd, kAdam };
std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct NetSizes {
  std::size_t obs_size = 0;
  std::size_t action_size = 2;
  std::size_t hidden_size = 64;
  std::vector<std::size_t> head_widths{256, 256};
  CoreType core = CoreType::kGru;

  void validate() const;
};

/// A core (GRU cell, or a ReLU layer for the feed-forward ablation) followed by
/// an MLP head. The feed-forward core passes the hidden state through
/// unchanged, so it stays zero.
struct Network {
  CoreType core = CoreType::kGru;
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  std::size_t output_size = 0;
  ParamStore store;
  GruParams gru;
  LinearParams dense;
  MlpParams head;

  static Network make(const std::string& prefix, std::size_t input_size, std::size_t hidden_size,
                      const std::vector<std::size_t>& head_widths, std::size_t output_size,
                      CoreType core);
};

struct NetVars {
  Var out;
  Var hidden;
};

NetVars network_forward(Tape& tape, Network& net, Var x, Var h_prev);
NetVars network_forward(Tape& tape, const Network& net, Var x, Var h_prev);

/// Rows are samples.
struct PolicyOutput {
  Matrix mean;
  Matrix log_std;  // clamped to [kLogStdMin, kLogStdMax]
  Matrix hidden;
};

struct PolicyVars {
  Var mean;
  Var log_std;
  Var hidden;
};

PolicyVars policy_forward(Tape& tape, Network& actor, Var obs, Var h_prev);
PolicyVars policy_forward(Tape& tape, const Network& actor, Var obs, Var h_prev);
PolicyOutput policy_forward(const Network& actor, const Matrix& obs, const Matrix& h_prev);

struct SampledAction {
  Matrix action;    // tanh(u), rows x action_size
  Matrix log_prob;  // rows x 1
  Matrix pre_squash;
};

/// a = tanh(mu + sigma * eps) with eps standard normal; deterministic mode
/// returns tanh(mu).
SampledAction sample_action(const PolicyOutput& out, Rng& rng, bool deterministic = false);
/// Same with the noise supplied.
SampledAction squash_action(const PolicyOutput& out, const Matrix& eps);

struct CriticOutput {
  Matrix value;  // rows x 1
  Matrix hidden;
};

CriticOutput critic_forward(const Network& critic, const Matrix& obs, const Matrix& action,
                            const Matrix& h_prev);

/// Element-wise target <- tau * source + (1 - tau) * target.
void soft_update(const ParamStore& source, ParamStore& target, double tau);

struct TrainerConfig {
  double gamma = 0.99;
  double tau = 0.001;
  double alpha = 0.2;
  std::size_t batch_size = 64;
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  std::size_t max_iterations = 100000;  // environment steps
  std::size_t update_interval = 1;      // environment steps between update rounds
  std::size_t updates_per_step = 1;     // gradient updates per round
  std::size_t warmup = 1000;            // transitions stored before updates start
  std::size_t buffer_capacity = 10000;
  std::uint64_t seed = 0;
  HiddenMode hidden_mode = HiddenMode::kStoredHidden;
  bool use_target_actor = false;
  bool shared_parameters = true;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 0.0;     // global norm; 0 disables
  double reward_scale = 1.0;  // applied to rewards entering the replay buffer
  bool random_warmup = false;  // uniform actions until warmup is reached
  // Actor initialization: log_std output bias, and a factor on the final
  // layer's weights (small values start the policy near mean 0 everywhere).
  double initial_log_std = 0.0;
  double actor_output_init_scale = 1.0;

  void validate() const;
};

/// Plain SGD or Adam over one ParamStore.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const TrainerConfig& cfg, const ParamStore& store);
  void step(ParamStore& store, double lr);

 private:
  OptimizerKind kind_ = OptimizerKind::kSgd;
  double beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8, clip_ = 0.0;
  std::uint64_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Hidden states of the actor and both critics, one row per sample.
struct RecurrentState {
  Matrix actor;
  Matrix q1;
  Matrix q2;
};

struct Batch {
  Matrix obs;
  Matrix action;
  Matrix reward;  // n x 1
  Matrix next_obs;
  Matrix done;  // n x 1
  RecurrentState hidden;
  RecurrentState next_hidden;

  std::size_t size() const { return obs.rows(); }
};

struct ActResult {
  Matrix action;
  Matrix log_prob;
  RecurrentState next_hidden;
};

/// Actor, twin critics and their targets, with one optimizer per trained
/// network.
class SacLearner {
 public:
  /// `prefix` is prepended to every block name (used for per-agent learners).
  SacLearner(const NetSizes& sizes, const TrainerConfig& cfg, Rng& init_rng,
             const std::string& prefix = "");

  const NetSizes& sizes() const { return sizes_; }
  const TrainerConfig& config() const { return cfg_; }
  TrainerConfig& mutable_config() { return cfg_; }

  RecurrentState zero_state(std::size_t rows) const;

  /// Chooses actions for a batch of agents and advances their hidden states.
  /// Critic hidden states are advanced with the chosen action when
  /// `track_critics` is set.
  ActResult act(const Matrix& obs, const RecurrentState& hidden, Rng& rng, bool deterministic,
                bool track_critics = true) const;

  /// y = r + gamma (1 - done) (min Q'(s', a') - alpha log pi(a'|s')), a'
  /// sampled fresh at the next observation.
  Matrix bellman_target(const Batch& batch, Rng& rng) const;

  /// Batch-mean squared errors of both critics; accumulates their gradients
  /// when `with_grad` is set.
  std::pair<double, double> critic_loss(const Batch& batch, const Matrix& targets, bool with_grad,
                                        double* nearest_kink = nullptr);
  std::pair<double, double> update_critics(const Batch& batch, const Matrix& targets);

  /// mean(alpha log pi(a|s) - min(Q1, Q2)(s, a)) with a = tanh(mu + sigma eps).
  double actor_loss(const Batch& batch, const Matrix& eps, bool with_grad,
                    double* nearest_kink = nullptr);
  double update_actor(const Batch& batch, Rng& rng);

  void soft_update_targets();

  Network actor, q1, q2;
  Network actor_target, q1_target, q2_target;

 private:
  const Matrix& state_or_zero(const Matrix& stored, std::size_t rows, std::size_t cols,
                              Matrix& scratch) const;

  NetSizes sizes_;
  TrainerConfig cfg_;
  Optimizer actor_opt_, q1_opt_, q2_opt_;
};

/// Checkpoint of every network of every learner; metadata records the layout.
Checkpoint to_checkpoint(const std::vector<const SacLearner*>& learners, std::uint64_t step,
                         const std::string& extra_metadata = "{}");
Checkpoint to_checkpoint(const SacLearner& learner, std::uint64_t step,
                         const std::string& extra_metadata = "{}");
/// Throws CheckpointError when names or shapes differ from the learner.
void load_checkpoint(SacLearner& learner, const Checkpoint& checkpoint);
/// Layout recorded in a checkpoint's metadata.
NetSizes checkpoint_sizes(const Checkpoint& checkpoint);

}  // namespace platoon
