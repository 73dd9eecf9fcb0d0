#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "platoon/config.hpp"
#include "platoon/errors.hpp"
#include "platoon/harness.hpp"
#include "platoon/kernels.hpp"
#include "platoon/trainer.hpp"

namespace fs = std::filesystem;
using namespace platoon;

namespace {

constexpr int kUsageError = 2;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> core;
  std::optional<std::size_t> episodes;
  std::vector<std::size_t> horizons;
  std::string checkpoint;
  std::string policy = "sac";
  std::size_t n_seeds = 3;
  std::size_t start_step = 0;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) {
      throw ConfigError("config file not found: " + o.config_path);
    }
    cfg = load_run_config(o.config_path);
  }
  if (o.core) cfg.network.core = parse_core_type(*o.core);
  if (o.out) cfg.output_dir = *o.out;
  if (o.episodes) {
    if (*o.episodes == 0) throw ConfigError("--episodes must be >= 1");
    cfg.eval.episodes = *o.episodes;
  }
  cfg.resolve();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

EnvFactory factory_for(const RunConfig& cfg) {
  return [cfg](std::uint64_t id) {
    return PlatoonEnv(cfg.scenario, cfg.weights, cfg.uncertainty, id);
  };
}

fs::path checkpoint_path(const Options& o, const RunConfig& cfg) {
  return o.checkpoint.empty() ? cfg.output_dir / "checkpoint.bin" : fs::path(o.checkpoint);
}

int cmd_train(const Options& o) {
  RunConfig cfg = resolve_config(o);
  if (o.seed) cfg.trainer.seed = *o.seed;
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.json", to_json(cfg).dump(2) + "\n");
  TrainOptions opts;
  opts.out_dir = cfg.output_dir;
  opts.checkpoint_metadata = nlohmann::json{{"config", to_json(cfg)}}.dump();
  opts.on_episode = [](const TrainingLogRow& r) {
    if (r.episode % 50 == 0) {
      std::fprintf(stderr, "episode %llu step %llu return %.3f success %d\n",
                   static_cast<unsigned long long>(r.episode),
                   static_cast<unsigned long long>(r.step), r.episode_return, r.success ? 1 : 0);
    }
  };
  const TrainResult result = train(factory_for(cfg), cfg.net_sizes(), cfg.trainer, opts);
  std::printf("trained %llu steps, %zu episodes, %llu updates in %.1f s; wrote %s\n",
              static_cast<unsigned long long>(result.steps), result.log.size(),
              static_cast<unsigned long long>(result.updates), result.seconds,
              (cfg.output_dir / "checkpoint.bin").string().c_str());
  return 0;
}

std::unique_ptr<Policy> make_policy(const Options& o, const RunConfig& cfg) {
  if (o.policy == "sac") {
    return std::make_unique<SacPolicy>(load_learners(cfg, checkpoint_path(o, cfg)));
  }
  if (o.policy == "tracking") return std::make_unique<TrackingPolicy>();
  if (o.policy == "colliding") return std::make_unique<CollidingPolicy>();
  throw ConfigError("unknown policy '" + o.policy + "' (expected sac, tracking or colliding)");
}

int cmd_eval(const Options& o) {
  RunConfig cfg = resolve_config(o);
  if (o.seed) cfg.eval.seed = *o.seed;
  const auto policy = make_policy(o, cfg);
  const EvalResult result = run_episodes(*policy, cfg, cfg.eval.episodes, cfg.eval.seed);
  fs::create_directories(cfg.output_dir);
  const std::string metrics = metrics_json(result.metrics).dump(2) + "\n";
  write_text(cfg.output_dir / "metrics.json", metrics);
  write_text(cfg.output_dir / "timing.json",
             nlohmann::json{{"avg_compute_time_per_step", result.metrics.avg_compute_time_per_step}}
                     .dump(2) +
                 "\n");
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    export_trace(result.records[i], cfg.output_dir / ("trace_" + std::to_string(i) + ".csv"));
  }
  std::cout << metrics;
  std::printf("avg_compute_time_per_step %.6e s\n", result.metrics.avg_compute_time_per_step);
  return 0;
}

int cmd_predict(const Options& o) {
  RunConfig cfg = resolve_config(o);
  if (o.seed) cfg.eval.seed = *o.seed;
  cfg.scenario.obstacle.probability = 0.0;
  const std::size_t horizon = o.horizons.empty() ? 20 : o.horizons.front();
  if (horizon == 0) throw ConfigError("--horizon-h must be >= 1");
  if (o.start_step + horizon > cfg.scenario.horizon) {
    throw ConfigError("--start-step + --horizon-h exceeds the episode horizon");
  }
  SacPolicy policy(load_learners(cfg, checkpoint_path(o, cfg)));
  PlatoonEnv env(cfg.scenario, cfg.weights, cfg.uncertainty, 0);
  auto obs = env.reset(episode_seed(cfg.eval.seed, 0));
  policy.reset(env.n_vehicles());
  while (env.time() < o.start_step && !env.done()) obs = env.step(policy.act(env, obs)).observations;
  if (env.done()) throw StateError("episode ended before the start step");

  SacPolicy branch = policy;
  const auto predicted = autoregressive_rollout(branch, capture_context(env), horizon);
  fs::create_directories(cfg.output_dir);
  std::ofstream out(cfg.output_dir / "prediction.csv");
  out << "h,k,x,y,phi,v,ref_x,ref_y\n";
  double mae_sum = 0.0;
  for (std::size_t k = 0; k < env.n_vehicles(); ++k) {
    std::vector<VehicleState> pred, ref;
    for (std::size_t h = 0; h < horizon; ++h) {
      const VehicleState& p = predicted[h][k];
      const VehicleState& r = env.references()[k].at(env.time() + h + 1);
      pred.push_back(p);
      ref.push_back(r);
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", h + 1, k,
                    p.x, p.y, p.phi, p.v, r.x, r.y);
      out << buf;
    }
    const double mae = prediction_mae(pred, ref);
    mae_sum += mae;
    std::printf("vehicle %zu: position MAE over %zu steps = %.6f m\n", k, horizon, mae);
  }
  std::printf("mean position MAE = %.6f m\n", mae_sum / static_cast<double>(env.n_vehicles()));
  return 0;
}

int cmd_compare(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const std::uint64_t first = o.seed.value_or(cfg.trainer.seed);
  if (o.n_seeds == 0) throw ConfigError("--seeds must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.n_seeds; ++i) seeds.push_back(first + i);
  const auto horizons = o.horizons.empty() ? kDefaultHorizons : o.horizons;
  const CoreComparison table = compare_cores(
      cfg, horizons, seeds, [](const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); });
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "compare_cores.csv", table.to_csv());
  write_text(cfg.output_dir / "compare_cores.json", table.to_json().dump(2) + "\n");
  std::cout << table.to_csv();
  return 0;
}

int cmd_inspect(const Options& o) {
  std::cout << to_json(resolve_config(o)).dump(2) << "\n";
  return 0;
}

void apply_thread_env() {
  if (const char* env = std::getenv("PLATOON_SIM_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) {
      throw ConfigError(std::string("PLATOON_SIM_THREADS must be a positive integer, got '") +
                        env + "'");
    }
    kernels::set_thread_count(static_cast<int>(n));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Platoon lane-change simulator and recurrent soft actor-critic trainer"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--core", o.core, "Network core")->check(CLI::IsMember({"gru", "mlp"}));
    sub->add_option("--episodes", o.episodes, "Evaluation episodes");
    sub->add_option("--horizon-h", o.horizons, "Prediction horizon(s) H");
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint (default <out>/checkpoint.bin)");
  };

  CLI::App* train = app.add_subcommand("train", "Train a policy");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a policy and export traces");
  CLI::App* predict = app.add_subcommand("predict", "Autoregressive rollout against the reference");
  CLI::App* compare = app.add_subcommand("compare-cores", "Prediction MAE of GRU vs MLP cores");
  CLI::App* inspect = app.add_subcommand("inspect-config", "Print the resolved configuration");
  for (CLI::App* sub : {train, eval, predict, compare, inspect}) add_common(sub);
  eval->add_option("--policy", o.policy, "sac, tracking or colliding")
      ->check(CLI::IsMember({"sac", "tracking", "colliding"}));
  predict->add_option("--start-step", o.start_step, "Step at which the rollout starts");
  compare->add_option("--seeds", o.n_seeds, "Number of training seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    apply_thread_env();
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*predict) return cmd_predict(o);
    if (*compare) return cmd_compare(o);
    if (*inspect) return cmd_inspect(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kUsageError;
}
