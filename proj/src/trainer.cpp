#include "platoon/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "platoon/errors.hpp"

namespace platoon {

std::string training_log_header() {
  return "step,episode,return,critic_loss1,critic_loss2,actor_loss,alpha,success,collision,updates";
}

std::string format_training_row(const TrainingLogRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%llu,%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%zu",
                static_cast<unsigned long long>(r.step),
                static_cast<unsigned long long>(r.episode), r.episode_return, r.critic_loss1,
                r.critic_loss2, r.actor_loss, r.alpha, r.success ? 1 : 0, r.collision ? 1 : 0,
                r.updates);
  return buf;
}

Checkpoint TrainResult::checkpoint(const std::string& metadata) const {
  std::vector<const SacLearner*> ptrs;
  for (const auto& l : learners) ptrs.push_back(&l);
  return to_checkpoint(ptrs, steps, metadata);
}

std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t episode) {
  return seed * 1000003ULL + episode;
}

namespace {

std::vector<double> row_of(const Matrix& m, std::size_t r) {
  const auto s = m.row(r);
  return {s.begin(), s.end()};
}

Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols());
  for (std::size_t r = 0; r < count; ++r) {
    std::copy(m.row(begin + r).begin(), m.row(begin + r).end(), out.row(r).begin());
  }
  return out;
}

void put_rows(Matrix& dst, std::size_t begin, const Matrix& src) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy(src.row(r).begin(), src.row(r).end(), dst.row(begin + r).begin());
  }
}

Matrix stack_obs(const std::vector<Observation>& obs) {
  Matrix m(obs.size(), obs.front().size());
  for (std::size_t r = 0; r < obs.size(); ++r) std::copy(obs[r].begin(), obs[r].end(), m.row(r).begin());
  return m;
}

}  // namespace

TrainResult train(const EnvFactory& make_env, NetSizes sizes, const TrainerConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  PlatoonEnv env = make_env(0);
  const std::size_t K = env.n_vehicles();
  sizes.obs_size = env.observation_size();

  Rng init_rng = make_rng(cfg.seed, 1);
  Rng rng = make_rng(cfg.seed, 2);

  TrainResult result;
  const std::size_t n_learners = cfg.shared_parameters ? 1 : K;
  for (std::size_t i = 0; i < n_learners; ++i) {
    const std::string prefix = cfg.shared_parameters ? "" : "agent" + std::to_string(i) + ".";
    result.learners.emplace_back(sizes, cfg, init_rng, prefix);
  }
  std::vector<ReplayBuffer> buffers(n_learners, ReplayBuffer(cfg.buffer_capacity));
  // Agent k acts with learner `owner(k)`; rows [first(i), first(i) + count(i))
  // of the joint batch belong to learner i.
  auto owner = [&](std::size_t k) { return cfg.shared_parameters ? 0 : k; };
  auto first = [&](std::size_t i) { return cfg.shared_parameters ? 0 : i; };
  auto count = [&](std::size_t) { return cfg.shared_parameters ? K : 1; };

  std::ofstream log_file;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    log_file.open(*options.out_dir / "training_log.csv");
    if (!log_file) throw IoError("cannot write " + (*options.out_dir / "training_log.csv").string());
    log_file << training_log_header() << '\n';
  }

  auto fail = [&](const std::string& what) {
    if (options.out_dir) {
      write_checkpoint(*options.out_dir / "checkpoint_diagnostic.bin",
                       result.checkpoint(options.checkpoint_metadata));
    }
    throw NumericError(what + " at step " + std::to_string(result.steps));
  };

  const std::size_t h = sizes.hidden_size;
  std::uint64_t episode = 0;
  while (result.steps < cfg.max_iterations) {
    auto obs = env.reset(episode_seed(cfg.seed, episode));
    if (env.done()) throw StateError("scenario starts in a collision");
    RecurrentState hidden{Matrix(K, h), Matrix(K, h), Matrix(K, h)};
    std::vector<double> returns(K, 0.0);
    double sum_l1 = 0.0, sum_l2 = 0.0, sum_la = 0.0;
    std::size_t updates = 0;

    bool done = false;
    while (!done && result.steps < cfg.max_iterations) {
      const Matrix obs_m = stack_obs(obs);
      Matrix actions(K, sizes.action_size);
      RecurrentState next{Matrix(K, h), Matrix(K, h), Matrix(K, h)};
      const bool warm = cfg.random_warmup && buffers[0].size() < cfg.warmup;
      for (std::size_t i = 0; i < n_learners; ++i) {
        const SacLearner& l = result.learners[i];
        const std::size_t b = first(i), c = count(i);
        const Matrix o = rows_of(obs_m, b, c);
        const PolicyOutput po = policy_forward(l.actor, o, rows_of(hidden.actor, b, c));
        Matrix a = sample_action(po, rng).action;
        if (warm) {
          for (double& v : a.values()) v = uniform(rng, -1.0, 1.0);
        }
        put_rows(actions, b, a);
        put_rows(next.actor, b, po.hidden);
        put_rows(next.q1, b, critic_forward(l.q1, o, a, rows_of(hidden.q1, b, c)).hidden);
        put_rows(next.q2, b, critic_forward(l.q2, o, a, rows_of(hidden.q2, b, c)).hidden);
      }

      std::vector<Action> env_actions(K);
      for (std::size_t k = 0; k < K; ++k) env_actions[k] = {actions(k, 0), actions(k, 1)};
      StepResult step = env.step(env_actions);
      ++result.steps;

      for (std::size_t k = 0; k < K; ++k) {
        returns[k] += step.rewards[k];
        Transition t;
        t.obs = obs[k];
        t.action = row_of(actions, k);
        t.reward = step.rewards[k] * cfg.reward_scale;
        t.next_obs = step.observations[k];
        t.done = step.terminal;
        t.h_actor = row_of(hidden.actor, k);
        t.h_q1 = row_of(hidden.q1, k);
        t.h_q2 = row_of(hidden.q2, k);
        t.next_h_actor = row_of(next.actor, k);
        t.next_h_q1 = row_of(next.q1, k);
        t.next_h_q2 = row_of(next.q2, k);
        buffers[owner(k)].push(std::move(t));
      }

      if (result.steps % cfg.update_interval == 0) {
        for (std::size_t round = 0; round < cfg.updates_per_step; ++round) {
          for (std::size_t i = 0; i < n_learners; ++i) {
            if (buffers[i].size() < std::max(cfg.warmup, cfg.batch_size)) continue;
            SacLearner& l = result.learners[i];
            const Batch batch = buffers[i].sample(cfg.batch_size, rng);
            const Matrix y = l.bellman_target(batch, rng);
            const auto [l1, l2] = l.update_critics(batch, y);
            const double la = l.update_actor(batch, rng);
            if (!std::isfinite(l1) || !std::isfinite(l2) || !std::isfinite(la)) {
              fail("non-finite loss");
            }
            l.soft_update_targets();
            sum_l1 += l1;
            sum_l2 += l2;
            sum_la += la;
            ++updates;
            ++result.updates;
          }
        }
      }

      obs = std::move(step.observations);
      hidden = std::move(next);
      done = step.done;
    }

    TrainingLogRow row;
    row.step = result.steps;
    row.episode = episode;
    double total = 0.0;
    for (double r : returns) total += r;
    row.episode_return = total / static_cast<double>(K);
    if (updates > 0) {
      row.critic_loss1 = sum_l1 / static_cast<double>(updates);
      row.critic_loss2 = sum_l2 / static_cast<double>(updates);
      row.actor_loss = sum_la / static_cast<double>(updates);
    }
    row.alpha = cfg.alpha;
    row.success = is_success(env.record());
    row.collision = env.record().collision;
    row.updates = updates;
    result.log.push_back(row);
    if (log_file.is_open()) log_file << format_training_row(row) << '\n';
    if (options.on_episode) options.on_episode(row);
    ++episode;
  }

  if (options.out_dir) {
    write_checkpoint(*options.out_dir / "checkpoint.bin",
                     result.checkpoint(options.checkpoint_metadata));
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace platoon
