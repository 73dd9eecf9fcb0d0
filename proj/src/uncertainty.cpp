#include "platoon/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "platoon/errors.hpp"
#include "platoon/kernels.hpp"

namespace platoon {

ConfidenceScore::ConfidenceScore(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw InvalidArgument("confidence score must lie in [0, 1], got " + std::to_string(value));
  }
}

void PerceptionConfig::validate() const {
  if (!(d_max >= 0.0)) throw ConfigError("perception.d_max must be >= 0");
  if (!(rho_length_scale > 0.0)) throw ConfigError("perception.rho_length_scale must be > 0");
  if (!(weather_factor > 0.0 && weather_factor <= 1.0)) {
    throw ConfigError("perception.weather_factor must lie in (0, 1]");
  }
  for (double s : deviation_scales) {
    if (!(s >= 0.0)) throw ConfigError("perception.deviation_scales must be >= 0");
  }
  if (!(epsilon_chance > 0.0 && epsilon_chance < 1.0)) {
    throw ConfigError("perception.epsilon_chance must lie in (0, 1)");
  }
}

void ChannelConfig::validate() const {
  if (n_antennas == 0) throw ConfigError("channel.n_antennas must be >= 1");
  if (!(epsilon_csi >= 0.0 && epsilon_csi <= 1.0)) {
    throw ConfigError("channel.epsilon_csi must lie in [0, 1]");
  }
  if (!(tx_power > 0.0 && noise_power > 0.0)) {
    throw ConfigError("channel.tx_power and channel.noise_power must be > 0");
  }
  if (!(power_alloc >= 0.0 && power_alloc <= 1.0)) {
    throw ConfigError("channel.power_alloc must lie in [0, 1]");
  }
  if (!(gamma_threshold >= 0.0)) throw ConfigError("channel.gamma_threshold must be >= 0");
  if (!(sigma0 >= 0.0)) throw ConfigError("channel.sigma0 must be >= 0");
  for (const auto& p : precoders) {
    if (p.size() != n_antennas) throw ConfigError("channel.precoders entries must have M elements");
  }
}

std::vector<ComplexVector> ChannelConfig::precoder_set(std::size_t n_fv) const {
  if (!precoders.empty()) {
    if (precoders.size() < n_fv) {
      throw ConfigError("channel.precoders has " + std::to_string(precoders.size()) +
                        " entries, need " + std::to_string(n_fv));
    }
    return {precoders.begin(), precoders.begin() + static_cast<std::ptrdiff_t>(n_fv)};
  }
  std::vector<ComplexVector> out(n_fv, ComplexVector(n_antennas));
  const double norm = 1.0 / std::sqrt(static_cast<double>(n_antennas));
  for (std::size_t f = 0; f < n_fv; ++f) {
    for (std::size_t m = 0; m < n_antennas; ++m) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(f * m) /
                           static_cast<double>(n_antennas);
      out[f][m] = std::polar(norm, angle);
    }
  }
  return out;
}

void UncertaintyConfig::validate() const {
  perception.validate();
  channel.validate();
  if (fusion.outage_samples == 0) throw ConfigError("fusion.outage_samples must be >= 1");
}

ChannelState initial_channel(const ChannelConfig& cfg, std::size_t n_fv, Rng& rng) {
  ChannelState state;
  state.coefficients.assign(n_fv, ComplexVector(cfg.n_antennas));
  for (auto& g : state.coefficients) {
    for (auto& c : g) c = complex_normal(rng);
  }
  return state;
}

ChannelState evolve_channel(const ChannelState& prev, const ChannelConfig& cfg, Rng& rng) {
  const double eps = cfg.epsilon_csi;
  const double innovation = std::sqrt(std::max(0.0, 1.0 - eps * eps));
  ChannelState next = prev;
  for (auto& g : next.coefficients) {
    for (auto& c : g) {
      // Draw even when eps == 1 so stream positions do not depend on eps.
      const Complex e = complex_normal(rng);
      c = eps == 1.0 ? c : eps * c + innovation * e;
    }
  }
  return next;
}

namespace {

double gain(std::span<const Complex> g, std::span<const Complex> p) {
  Complex acc{0.0, 0.0};
  for (std::size_t i = 0; i < g.size(); ++i) acc += std::conj(g[i]) * p[i];
  return std::norm(acc);
}

// Interferers of follower fv: every other follower's precoder.
std::vector<ComplexVector> interferers_of(const std::vector<ComplexVector>& precoders,
                                          std::size_t fv) {
  std::vector<ComplexVector> out;
  for (std::size_t i = 0; i < precoders.size(); ++i) {
    if (i != fv) out.push_back(precoders[i]);
  }
  return out;
}

double outage_from_draws(const std::vector<ComplexVector>& draws, const ComplexVector& own,
                         const std::vector<ComplexVector>& interferers,
                         const ChannelConfig& cfg) {
  std::vector<double> values(draws.size());
  const auto n = static_cast<std::int64_t>(draws.size());
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count()) \
    if (kernels::thread_count() > 1 && n >= 4096)
  for (std::int64_t i = 0; i < n; ++i) values[i] = sinr(draws[i], own, interferers, cfg);
  const auto below = kernels::thread_count() > 1
                         ? kernels::parallel::count_below(values, cfg.gamma_threshold)
                         : kernels::serial::count_below(values, cfg.gamma_threshold);
  return static_cast<double>(below) / static_cast<double>(draws.size());
}

}  // namespace

double sinr(std::span<const Complex> channel, std::span<const Complex> own_precoder,
            std::span<const ComplexVector> interferer_precoders, const ChannelConfig& cfg) {
  if (channel.size() != own_precoder.size()) {
    throw ShapeError("sinr: channel and precoder dimensions differ");
  }
  const double scale = cfg.power_alloc * cfg.tx_power;
  const double signal = gain(channel, own_precoder) * scale;
  double interference = 0.0;
  for (const auto& p : interferer_precoders) {
    if (p.size() != channel.size()) throw ShapeError("sinr: interferer precoder dimension");
    interference += gain(channel, p) * scale;
  }
  return signal / (interference + cfg.noise_power);
}

double outage_probability(const ChannelConfig& cfg, std::size_t n_samples, Rng& rng,
                          std::size_t fv, std::size_t n_fv) {
  if (n_samples == 0) throw InvalidArgument("outage_probability: n_samples must be >= 1");
  if (n_fv == 0) n_fv = std::max<std::size_t>(1, std::max(cfg.precoders.size(), fv + 1));
  const auto precoders = cfg.precoder_set(n_fv);
  const auto interferers = interferers_of(precoders, fv);

  if (cfg.analytic_rayleigh && interferers.empty()) {
    // g^H p ~ CN(0, |p|^2): the SINR is exponential with mean rho Pt |p|^2 / xi^2.
    double p_norm = 0.0;
    for (const auto& c : precoders[fv]) p_norm += std::norm(c);
    const double mean = cfg.power_alloc * cfg.tx_power * p_norm / cfg.noise_power;
    if (mean <= 0.0) return cfg.gamma_threshold > 0.0 ? 1.0 : 0.0;
    return 1.0 - std::exp(-cfg.gamma_threshold / mean);
  }

  std::vector<ComplexVector> draws(n_samples, ComplexVector(cfg.n_antennas));
  for (auto& g : draws) {
    for (auto& c : g) c = complex_normal(rng);
  }
  return outage_from_draws(draws, precoders[fv], interferers, cfg);
}

double conditional_outage_probability(const ComplexVector& current, const ChannelConfig& cfg,
                                      std::size_t n_samples, Rng& rng, std::size_t fv,
                                      std::size_t n_fv) {
  if (n_samples == 0) throw InvalidArgument("outage_probability: n_samples must be >= 1");
  const auto precoders = cfg.precoder_set(n_fv);
  const auto interferers = interferers_of(precoders, fv);
  const double eps = cfg.epsilon_csi;
  const double innovation = std::sqrt(std::max(0.0, 1.0 - eps * eps));
  std::vector<ComplexVector> draws(n_samples, current);
  for (auto& g : draws) {
    for (auto& c : g) c = eps * c + innovation * complex_normal(rng);
  }
  return outage_from_draws(draws, precoders[fv], interferers, cfg);
}

double outage_time(double sigma0, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("outage_time: p must lie in [0, 1]");
  return sigma0 * p;
}

ConfidenceScore perception_confidence(double distance, const PerceptionConfig& cfg) {
  if (!(distance >= 0.0)) throw InvalidArgument("perception_confidence: negative distance");
  return ConfidenceScore(cfg.weather_factor * std::exp(-distance / cfg.rho_length_scale));
}

PerceptionDeviation sample_perception_deviation(ConfidenceScore rho, const PerceptionConfig& cfg,
                                                Rng& rng) {
  const double spread = 1.0 - rho.value();
  std::array<double, 4> draw{};
  for (double& d : draw) d = standard_normal(rng);
  if (spread == 0.0) return {};
  return {cfg.deviation_scales[0] * spread * draw[0], cfg.deviation_scales[1] * spread * draw[1],
          cfg.deviation_scales[2] * spread * draw[2], cfg.deviation_scales[3] * spread * draw[3]};
}

FusionResult fuse_confidence(std::span<const ConfidenceScore> scores, double weight) {
  if (scores.empty()) throw InvalidArgument("fuse_confidence: empty score list");
  if (!(weight >= 0.0)) throw InvalidArgument("fuse_confidence: negative weight");
  std::size_t best = 0;
  double best_value = weight * scores[0].value();
  for (std::size_t l = 1; l < scores.size(); ++l) {
    const double v = weight * scores[l].value();
    if (v > best_value) {
      best = l;
      best_value = v;
    }
  }
  return {ConfidenceScore(std::min(1.0, best_value)), best};
}

double dynamic_safe_distance(double d_min, double d_max, ConfidenceScore rho_effective) {
  return d_min + (1.0 - rho_effective.value()) * d_max;
}

UncertaintyModel::UncertaintyModel(UncertaintyConfig cfg, std::size_t n_vehicles, double d_min,
                                   Rng& rng)
    : cfg_(std::move(cfg)), n_vehicles_(n_vehicles), d_min_(d_min) {
  cfg_.validate();
  const std::size_t n_fv = n_vehicles_ > 0 ? n_vehicles_ - 1 : 0;
  precoders_ = cfg_.channel.precoder_set(n_fv);
  channel_ = initial_channel(cfg_.channel, n_fv, rng);
}

UncertaintyFrame UncertaintyModel::refresh(std::span<const VehicleState> objects, Rng& rng) {
  const std::size_t K = n_vehicles_;
  const std::size_t n_obj = objects.size();
  const std::size_t n_fv = K > 0 ? K - 1 : 0;
  const auto& ch = cfg_.channel;

  UncertaintyFrame frame;
  frame.n_observers = K;
  frame.n_objects = n_obj;

  // Channels, outage, and link state. The leader has no downlink.
  channel_ = evolve_channel(channel_, ch, rng);
  frame.outage_prob.assign(K, 0.0);
  frame.sigma_t.assign(K, 0.0);
  frame.link_live.assign(K, true);
  for (std::size_t f = 0; f < n_fv; ++f) {
    const auto& g = channel_.coefficients[f];
    const double p =
        conditional_outage_probability(g, ch, cfg_.fusion.outage_samples, rng, f, n_fv);
    frame.outage_prob[f + 1] = p;
    frame.sigma_t[f + 1] = outage_time(ch.sigma0, p);
    const auto interferers = interferers_of(precoders_, f);
    frame.link_live[f + 1] = sinr(g, precoders_[f], interferers, ch) >= ch.gamma_threshold;
  }

  // Local detections.
  const std::size_t n_pairs = K * n_obj;
  frame.confidence.assign(n_pairs, ConfidenceScore(1.0));
  frame.deviation.assign(n_pairs, PerceptionDeviation{});
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < n_obj; ++j) {
      if (j == k) continue;
      const double dist =
          std::hypot(objects[j].x - objects[k].x, objects[j].y - objects[k].y);
      const auto rho = perception_confidence(dist, cfg_.perception);
      frame.confidence[frame.index(k, j)] = rho;
      frame.deviation[frame.index(k, j)] = sample_perception_deviation(rho, cfg_.perception, rng);
    }
  }

  // Fusion and safe distances.
  frame.fused_confidence = frame.confidence;
  frame.fused_source.assign(n_pairs, 0);
  frame.effective_deviation = frame.deviation;
  frame.safe_distance.assign(n_pairs, d_min_);
  frame.fused.assign(n_pairs, false);
  for (std::size_t k = 0; k < K; ++k) {
    const double weight = cfg_.fusion.weight == FusionWeight::kSigma
                              ? frame.sigma_t[k]
                              : 1.0 - frame.outage_prob[k];
    for (std::size_t j = 0; j < n_obj; ++j) {
      if (j == k) continue;
      const std::size_t idx = frame.index(k, j);
      frame.fused_source[idx] = k;
      std::vector<std::size_t> sources{k};
      if (cfg_.fusion.enabled && frame.link_live[k]) {
        for (std::size_t l = 0; l < K; ++l) {
          if (l != k && l != j && frame.link_live[l]) sources.push_back(l);
        }
      }
      ConfidenceScore effective = frame.confidence[idx];
      if (sources.size() > 1) {
        std::sort(sources.begin(), sources.end());
        std::vector<ConfidenceScore> scores;
        scores.reserve(sources.size());
        for (std::size_t l : sources) scores.push_back(frame.confidence[frame.index(l, j)]);
        const auto fusion = fuse_confidence(scores, weight);
        const std::size_t src = sources[fusion.source];
        effective = fusion.score;
        frame.fused[idx] = true;
        frame.fused_source[idx] = src;
        frame.effective_deviation[idx] = frame.deviation[frame.index(src, j)];
      }
      frame.fused_confidence[idx] = effective;
      frame.safe_distance[idx] =
          dynamic_safe_distance(d_min_, cfg_.perception.d_max, effective);
    }
  }
  return frame;
}

}  // namespace platoon
