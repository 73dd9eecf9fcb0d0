#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>

#include "../support/oracles.hpp"
#include "platoon/errors.hpp"
#include "platoon/sac.hpp"

using namespace platoon;

namespace {

NetSizes small_sizes(CoreType core = CoreType::kGru) {
  NetSizes s;
  s.obs_size = 5;
  s.hidden_size = 4;
  s.head_widths = {6, 6};
  s.core = core;
  return s;
}

void zero(ParamStore& s) {
  for (auto& b : s.blocks()) b.value.fill(0.0);
}

// Every parameter zero except the output bias: the network is the constant c.
void make_constant(Network& net, double c) {
  zero(net.store);
  net.store.block(net.head.layers.back().bias).value.fill(c);
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1, double hi = 1) {
  Matrix m(r, c);
  for (auto& v : m.values()) v = uniform(rng, lo, hi);
  return m;
}

Batch random_batch(const NetSizes& s, std::size_t n, Rng& rng) {
  Batch b;
  b.obs = random_matrix(n, s.obs_size, rng);
  b.action = random_matrix(n, s.action_size, rng, -0.99, 0.99);
  b.reward = random_matrix(n, 1, rng, -2, 0);
  b.next_obs = random_matrix(n, s.obs_size, rng);
  b.done = Matrix(n, 1);
  for (std::size_t i = 0; i < n; i += 3) b.done[i] = 1.0;
  for (RecurrentState* h : {&b.hidden, &b.next_hidden}) {
    h->actor = random_matrix(n, s.hidden_size, rng);
    h->q1 = random_matrix(n, s.hidden_size, rng);
    h->q2 = random_matrix(n, s.hidden_size, rng);
  }
  return b;
}

// Zero biases put ReLU pre-activations exactly on the kink whenever a whole
// layer is inactive for a sample; small random biases avoid that.
void jitter_biases(SacLearner& l, Rng& rng) {
  for (Network* n : {&l.actor, &l.q1, &l.q2})
    for (auto& b : n->store.blocks())
      if (b.kind == ParamBlock::Kind::kBias)
        for (auto& v : b.value.values()) v = uniform(rng, -0.1, 0.1);
}

std::uint64_t hash_store(const ParamStore& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& b : s.blocks()) {
    for (double v : b.value.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 1099511628211ULL;
    }
  }
  return h;
}

struct Fixture {
  NetSizes sizes = small_sizes();
  TrainerConfig cfg;
  Rng rng = make_rng(70);
  SacLearner learner{sizes, cfg, rng};
};

}  // namespace

TEST(Policy, ZeroParametersGiveZeroMeanAndLogStd) {
  Fixture f;
  zero(f.learner.actor.store);
  const PolicyOutput out = policy_forward(f.learner.actor, random_matrix(3, 5, f.rng), Matrix(3, 4));
  EXPECT_EQ(out.mean, Matrix(3, 2));
  EXPECT_EQ(out.log_std, Matrix(3, 2));
  EXPECT_EQ(out.hidden, Matrix(3, 4));
}

TEST(Policy, LogStdIsClamped) {
  Fixture f;
  zero(f.learner.actor.store);
  Matrix& bias = f.learner.actor.store.block(f.learner.actor.head.layers.back().bias).value;
  bias[2] = 5.0;
  bias[3] = -30.0;
  const PolicyOutput out = policy_forward(f.learner.actor, Matrix(1, 5), Matrix(1, 4));
  EXPECT_EQ(out.log_std[0], kLogStdMax);
  EXPECT_EQ(out.log_std[1], kLogStdMin);
}

TEST(Policy, InitialLogStdAndOutputScale) {
  TrainerConfig cfg;
  cfg.initial_log_std = -1.5;
  cfg.actor_output_init_scale = 1e-3;
  Rng r1 = make_rng(70), r2 = make_rng(70);
  SacLearner plain(small_sizes(), TrainerConfig{}, r1);
  SacLearner scaled(small_sizes(), cfg, r2);
  const Matrix obs = random_matrix(4, 5, r1);
  const PolicyOutput a = policy_forward(plain.actor, obs, Matrix(4, 4));
  const PolicyOutput b = policy_forward(scaled.actor, obs, Matrix(4, 4));
  for (std::size_t i = 0; i < b.mean.size(); ++i) {
    EXPECT_NEAR(b.mean[i], 1e-3 * a.mean[i], 1e-12);
    EXPECT_NEAR(b.log_std[i], -1.5 + 1e-3 * a.log_std[i], 1e-12);
  }
  // Only the actor is touched.
  EXPECT_EQ(plain.q1.store.block(0).value, scaled.q1.store.block(0).value);
}

TEST(Policy, DeterministicAcrossCalls) {
  Fixture f;
  const Matrix obs = random_matrix(2, 5, f.rng), h = random_matrix(2, 4, f.rng);
  const PolicyOutput a = policy_forward(f.learner.actor, obs, h);
  const PolicyOutput b = policy_forward(f.learner.actor, obs, h);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.hidden, b.hidden);
}

TEST(Sample, StandardNormalAtZeroNoise) {
  PolicyOutput out{Matrix(1, 2), Matrix(1, 2), Matrix()};
  const SampledAction s = squash_action(out, Matrix(1, 2));
  EXPECT_EQ(s.action, Matrix(1, 2));
  EXPECT_NEAR(s.log_prob[0], 2 * -0.91894, 2e-5);
}

TEST(Sample, ActionsStayStrictlyInside) {
  PolicyOutput out{Matrix(1, 2, std::vector<double>{60.0, -60.0}), Matrix(1, 2), Matrix()};
  Rng rng = make_rng(1);
  for (int i = 0; i < 100; ++i) {
    const SampledAction s = sample_action(out, rng);
    EXPECT_LT(s.action[0], 1.0);
    EXPECT_GT(s.action[1], -1.0);
    EXPECT_TRUE(std::isfinite(s.log_prob[0]));
  }
}

TEST(Sample, DeterministicModeIsTanhOfMean) {
  PolicyOutput out{Matrix(1, 2, std::vector<double>{0.3, -1.2}), Matrix(1, 2, 1.0), Matrix()};
  Rng rng = make_rng(2);
  const SampledAction s = sample_action(out, rng, true);
  EXPECT_EQ(s.action[0], std::tanh(0.3));
  EXPECT_EQ(s.action[1], std::tanh(-1.2));
}

TEST(Sample, LogProbMatchesDensityAndIntegratesToOne) {
  Rng rng = make_rng(3);
  const std::size_t n = 400000;
  for (int trial = 0; trial < 8; ++trial) {
    const double mu = uniform(rng, -1, 1), sigma = std::exp(uniform(rng, -1.0, 0.4));
    PolicyOutput out{Matrix(n, 1, mu), Matrix(n, 1, std::log(sigma)), Matrix()};
    Matrix eps(n, 1);
    const double da = 2.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = -1.0 + (static_cast<double>(i) + 0.5) * da;
      eps[i] = (std::atanh(a) - mu) / sigma;
    }
    const SampledAction s = squash_action(out, eps);
    double mass = 0;
    for (std::size_t i = 0; i < n; i += 997) {
      EXPECT_NEAR(s.log_prob[i], oracle::squashed_log_density(s.action[i], mu, sigma), 1e-7);
    }
    for (std::size_t i = 0; i < n; ++i) mass += std::exp(s.log_prob[i]) * da;
    EXPECT_NEAR(mass, 1.0, 0.01) << "mu " << mu << " sigma " << sigma;
  }
}

TEST(Critic, ZeroParamsGiveZeroAndTwinsDiffer) {
  Fixture f;
  const Matrix obs = random_matrix(4, 5, f.rng), act = random_matrix(4, 2, f.rng);
  const Matrix h = random_matrix(4, 4, f.rng);
  const Matrix v1 = critic_forward(f.learner.q1, obs, act, h).value;
  const Matrix v2 = critic_forward(f.learner.q2, obs, act, h).value;
  EXPECT_NE(v1, v2);
  Network z = f.learner.q1;
  zero(z.store);
  EXPECT_EQ(critic_forward(z, obs, act, Matrix(4, 4)).value, Matrix(4, 1));
  EXPECT_THROW(critic_forward(z, obs, Matrix(4, 3), h), ShapeError);
}

TEST(Bellman, MyopicTargetsEqualRewards) {
  Fixture f;
  f.learner.mutable_config().gamma = 0.0;
  const Batch b = random_batch(f.sizes, 9, f.rng);
  EXPECT_EQ(f.learner.bellman_target(b, f.rng), b.reward);
}

TEST(Bellman, HandValueAndTerminalCutoff) {
  Fixture f;
  f.learner.mutable_config().alpha = 0.0;
  make_constant(f.learner.q1_target, 2.0);
  make_constant(f.learner.q2_target, 3.0);
  Batch b = random_batch(f.sizes, 2, f.rng);
  b.reward.fill(1.0);
  b.done[0] = 0.0;
  b.done[1] = 1.0;
  const Matrix y = f.learner.bellman_target(b, f.rng);
  EXPECT_NEAR(y[0], 2.98, 1e-12);
  EXPECT_EQ(y[1], 1.0);
}

TEST(Bellman, UsesMinimumOfTargetCritics) {
  Fixture f;
  f.learner.mutable_config().alpha = 0.0;
  for (auto [c1, c2] : {std::pair{1.0, 2.0}, std::pair{2.0, 1.0}}) {
    make_constant(f.learner.q1_target, c1);
    make_constant(f.learner.q2_target, c2);
    Batch b = random_batch(f.sizes, 5, f.rng);
    b.done.fill(0.0);
    const Matrix y = f.learner.bellman_target(b, f.rng);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], b.reward[i] + 0.99 * 1.0, 1e-12);
  }
}

TEST(Bellman, EmptyBatchRejected) {
  Fixture f;
  Batch b;
  EXPECT_THROW(f.learner.bellman_target(b, f.rng), InvalidArgument);
}

TEST(SoftUpdate, EndpointsAndDefaultRate) {
  ParamStore src, dst;
  src.add("w", 2, 2);
  dst.add("v", 2, 2);
  src.block(0).value.fill(1.0);
  soft_update(src, dst, 0.0);
  EXPECT_EQ(dst.block(0).value, Matrix(2, 2, 0.0));
  soft_update(src, dst, 0.001);
  EXPECT_EQ(dst.block(0).value[0], 0.001);
  soft_update(src, dst, 1.0);
  EXPECT_EQ(dst.block(0).value, src.block(0).value);
  ParamStore bad;
  bad.add("w", 3, 2);
  EXPECT_THROW(soft_update(src, bad, 0.5), ShapeError);
}

TEST(GradCheck, CriticLossBothCores) {
  for (CoreType core : {CoreType::kGru, CoreType::kMlp}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng = make_rng(800 + seed);
      SacLearner l(small_sizes(core), TrainerConfig{}, rng);
      jitter_biases(l, rng);
      const Batch b = random_batch(l.sizes(), 6, rng);
      const Matrix targets = random_matrix(6, 1, rng, -2, 0);
      for (int which = 0; which < 2; ++which) {
        ParamStore& store = which == 0 ? l.q1.store : l.q2.store;
        auto loss = [&](ParamStore&, bool g) {
          const auto [a, c] = l.critic_loss(b, targets, g);
          return which == 0 ? a : c;
        };
        const auto r = grad_check(loss, store);
        EXPECT_TRUE(r.passed) << to_string(core) << " seed " << seed << " " << r.max_rel_error;
      }
    }
  }
}

TEST(GradCheck, ActorLossBothCores) {
  for (CoreType core : {CoreType::kGru, CoreType::kMlp}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng = make_rng(900 + seed);
      SacLearner l(small_sizes(core), TrainerConfig{}, rng);
      jitter_biases(l, rng);
      const Batch b = random_batch(l.sizes(), 6, rng);
      Matrix eps(6, 2);
      for (auto& e : eps.values()) e = standard_normal(rng);
      auto loss = [&](ParamStore&, bool g) { return l.actor_loss(b, eps, g); };
      const auto r = grad_check(loss, l.actor.store);
      EXPECT_TRUE(r.passed) << to_string(core) << " seed " << seed << " " << r.max_rel_error;
    }
  }
}

TEST(Actor, FlatObjectiveGivesZeroGradient) {
  Fixture f;
  f.learner.mutable_config().alpha = 0.0;
  make_constant(f.learner.q1, 1.0);
  make_constant(f.learner.q2, 1.0);
  const Batch b = random_batch(f.sizes, 8, f.rng);
  Matrix eps(8, 2);
  for (auto& e : eps.values()) e = standard_normal(f.rng);
  f.learner.actor.store.zero_grad();
  f.learner.actor_loss(b, eps, true);
  for (const auto& blk : f.learner.actor.store.blocks())
    for (double g : blk.grad.values()) EXPECT_EQ(g, 0.0) << blk.name;
}

TEST(Actor, EntropyOnlyObjectiveRaisesLogStd) {
  Fixture f;
  f.learner.mutable_config().actor_lr = 1e-2;
  zero(f.learner.q1.store);
  zero(f.learner.q2.store);
  // Start well below the entropy-maximizing spread of the squashed Gaussian.
  Matrix& bias = f.learner.actor.store.block(f.learner.actor.head.layers.back().bias).value;
  bias[2] = bias[3] = -1.5;
  const Batch b = random_batch(f.sizes, 16, f.rng);
  auto mean_log_std = [&] {
    const PolicyOutput o = policy_forward(f.learner.actor, b.obs, b.hidden.actor);
    double s = 0;
    for (double v : o.log_std.values()) s += v;
    return s / static_cast<double>(o.log_std.size());
  };
  const double before = mean_log_std();
  for (int i = 0; i < 50; ++i) f.learner.update_actor(b, f.rng);
  EXPECT_GT(mean_log_std(), before + 0.01);
}

TEST(Critic, LossDecreasesOnFrozenBatch) {
  Fixture f;
  f.learner.mutable_config().critic_lr = 1e-3;
  const Batch b = random_batch(f.sizes, 32, f.rng);
  const Matrix targets = f.learner.bellman_target(b, f.rng);
  const auto first = f.learner.critic_loss(b, targets, false);
  for (int i = 0; i < 100; ++i) f.learner.update_critics(b, targets);
  const auto last = f.learner.critic_loss(b, targets, false);
  EXPECT_LT(last.first, first.first);
  EXPECT_LT(last.second, first.second);
}

TEST(Critic, FixedPointLeavesParamsUnchanged) {
  Fixture f;
  // Twin critics with equal parameters and equal hidden states.
  for (std::size_t i = 0; i < f.learner.q1.store.size(); ++i)
    f.learner.q2.store.block(i).value = f.learner.q1.store.block(i).value;
  Batch b = random_batch(f.sizes, 8, f.rng);
  b.hidden.q2 = b.hidden.q1;
  const Matrix targets = critic_forward(f.learner.q1, b.obs, b.action, b.hidden.q1).value;
  const std::uint64_t before = hash_store(f.learner.q1.store);
  const auto losses = f.learner.update_critics(b, targets);
  EXPECT_EQ(losses.first, 0.0);
  EXPECT_EQ(losses.second, 0.0);
  EXPECT_EQ(hash_store(f.learner.q1.store), before);
}

TEST(Critic, ZeroLearningRateLeavesParamsUnchanged) {
  Fixture f;
  f.learner.mutable_config().critic_lr = 0.0;
  f.learner.mutable_config().actor_lr = 0.0;
  const Batch b = random_batch(f.sizes, 8, f.rng);
  const std::uint64_t q1 = hash_store(f.learner.q1.store), a = hash_store(f.learner.actor.store);
  f.learner.update_critics(b, f.learner.bellman_target(b, f.rng));
  f.learner.update_actor(b, f.rng);
  EXPECT_EQ(hash_store(f.learner.q1.store), q1);
  EXPECT_EQ(hash_store(f.learner.actor.store), a);
}

TEST(Targets, ChangeOnlyThroughSoftUpdate) {
  Fixture f;
  f.learner.mutable_config().critic_lr = 1e-2;
  f.learner.mutable_config().actor_lr = 1e-2;
  const Batch b = random_batch(f.sizes, 8, f.rng);
  auto hashes = [&] {
    return std::vector<std::uint64_t>{hash_store(f.learner.q1_target.store),
                                      hash_store(f.learner.q2_target.store),
                                      hash_store(f.learner.actor_target.store)};
  };
  const auto before = hashes();
  for (int i = 0; i < 5; ++i) {
    f.learner.update_critics(b, f.learner.bellman_target(b, f.rng));
    f.learner.update_actor(b, f.rng);
  }
  EXPECT_EQ(hashes(), before);
  f.learner.soft_update_targets();
  EXPECT_NE(hashes()[0], before[0]);
}

TEST(Learner, ActStaysInBoundsAndAdvancesHidden) {
  Fixture f;
  const Matrix obs = random_matrix(3, 5, f.rng);
  const RecurrentState h0 = f.learner.zero_state(3);
  const ActResult r = f.learner.act(obs, h0, f.rng, false);
  for (double a : r.action.values()) {
    EXPECT_GT(a, -1.0);
    EXPECT_LT(a, 1.0);
  }
  EXPECT_NE(r.next_hidden.actor, h0.actor);
  EXPECT_NE(r.next_hidden.q1, h0.q1);
  Rng r1 = make_rng(5), r2 = make_rng(5);
  EXPECT_EQ(f.learner.act(obs, h0, r1, false).action, f.learner.act(obs, h0, r2, false).action);
}

TEST(Learner, ResetZeroModeIgnoresStoredHidden) {
  NetSizes sizes = small_sizes();
  TrainerConfig cfg;
  cfg.hidden_mode = HiddenMode::kResetZero;
  cfg.gamma = 0.5;
  Rng rng = make_rng(71);
  SacLearner l(sizes, cfg, rng);
  Batch b = random_batch(sizes, 4, rng);
  Batch z = b;
  for (RecurrentState* h : {&z.hidden, &z.next_hidden}) {
    h->actor.fill(0.0);
    h->q1.fill(0.0);
    h->q2.fill(0.0);
  }
  Rng a = make_rng(9), c = make_rng(9);
  EXPECT_EQ(l.bellman_target(b, a), l.bellman_target(z, c));
  const Matrix t(4, 1, -1.0);
  EXPECT_EQ(l.critic_loss(b, t, false), l.critic_loss(z, t, false));
}

TEST(Learner, CheckpointRoundTrip) {
  Fixture f;
  const Checkpoint c = to_checkpoint(f.learner, 42);
  EXPECT_EQ(checkpoint_sizes(c).hidden_size, f.sizes.hidden_size);
  EXPECT_EQ(checkpoint_sizes(c).head_widths, f.sizes.head_widths);
  Rng other = make_rng(99);
  SacLearner l(f.sizes, f.cfg, other);
  EXPECT_NE(hash_store(l.actor.store), hash_store(f.learner.actor.store));
  load_checkpoint(l, c);
  EXPECT_EQ(hash_store(l.actor.store), hash_store(f.learner.actor.store));
  EXPECT_EQ(hash_store(l.q2_target.store), hash_store(f.learner.q2_target.store));

  NetSizes wide = f.sizes;
  wide.hidden_size = 8;
  SacLearner mismatched(wide, f.cfg, other);
  EXPECT_THROW(load_checkpoint(mismatched, c), CheckpointError);
}

TEST(Config, Validation) {
  TrainerConfig c;
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.alpha = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.initial_log_std = 3.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.actor_output_init_scale = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_core_type("mlp"), CoreType::kMlp);
  EXPECT_THROW(parse_core_type("lstm"), ConfigError);
}
