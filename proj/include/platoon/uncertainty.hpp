#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "platoon/dynamics.hpp"
#include "platoon/random.hpp"

namespace platoon {

using Complex = std::complex<double>;
using ComplexVector = std::vector<Complex>;

/// Detector reliability in [0, 1].
class ConfidenceScore {
 public:
  ConfidenceScore() = default;
  explicit ConfidenceScore(double value);
  double value() const { return value_; }
  bool operator==(const ConfidenceScore&) const = default;

 private:
  double value_ = 1.0;
};

struct PerceptionConfig {
  double d_max = 2.0;               // maximum detection error (m)
  double rho_length_scale = 100.0;  // confidence decay length (m)
  double weather_factor = 1.0;      // in (0, 1]
  std::array<double, 4> deviation_scales{0.5, 0.5, 0.02, 0.5};
  double epsilon_chance = 1e-5;  // chance-constraint level; recorded, not enforced

  void validate() const;
};

struct PerceptionDeviation {
  double dx = 0.0;
  double dy = 0.0;
  double dphi = 0.0;
  double dv = 0.0;
};

struct ChannelConfig {
  std::size_t n_antennas = 4;
  double epsilon_csi = 0.9;
  double tx_power = 1.0;     // W
  double noise_power = 0.1;  // W
  double power_alloc = 0.5;
  std::vector<ComplexVector> precoders;  // per FV; empty selects DFT columns
  double gamma_threshold = 1.0;          // linear SINR threshold
  double sigma0 = 0.02;                  // per-round transmission time (s)
  bool analytic_rayleigh = false;        // closed form when there is no interference

  void validate() const;
  /// Configured precoders, or unit-norm DFT columns when none are set.
  std::vector<ComplexVector> precoder_set(std::size_t n_fv) const;
};

struct ChannelState {
  std::vector<ComplexVector> coefficients;  // one M-vector per FV
};

/// Fresh CN(0, I) coefficients for `n_fv` followers.
ChannelState initial_channel(const ChannelConfig& cfg, std::size_t n_fv, Rng& rng);

/// Gauss-Markov imperfect-CSI evolution g_t = eps g_{t-1} + sqrt(1 - eps^2) e.
ChannelState evolve_channel(const ChannelState& prev, const ChannelConfig& cfg, Rng& rng);

/// |g^H p|^2 rho Pt / (sum_i |g^H p_i|^2 rho Pt + xi^2).
double sinr(std::span<const Complex> channel, std::span<const Complex> own_precoder,
            std::span<const ComplexVector> interferer_precoders, const ChannelConfig& cfg);

/// Pr(SINR < gamma_threshold) for follower `fv` over independent Rayleigh draws.
double outage_probability(const ChannelConfig& cfg, std::size_t n_samples, Rng& rng,
                          std::size_t fv = 0, std::size_t n_fv = 0);

/// Outage probability of the next slot given the current CSI estimate: the
/// channel is advanced one Gauss-Markov step per sample.
double conditional_outage_probability(const ComplexVector& current, const ChannelConfig& cfg,
                                      std::size_t n_samples, Rng& rng, std::size_t fv,
                                      std::size_t n_fv);

double outage_time(double sigma0, double p);

ConfidenceScore perception_confidence(double distance, const PerceptionConfig& cfg);

PerceptionDeviation sample_perception_deviation(ConfidenceScore rho, const PerceptionConfig& cfg,
                                                Rng& rng);

struct FusionResult {
  ConfidenceScore score;
  std::size_t source = 0;
};

/// Max-score fusion: max_l weight * rho_l, ties to the lowest index.
FusionResult fuse_confidence(std::span<const ConfidenceScore> scores, double weight);

double dynamic_safe_distance(double d_min, double d_max, ConfidenceScore rho_effective);

enum class FusionWeight {
  kSigma,       // sigma_t = sigma0 * P
  kOneMinusP,   // 1 - P
};

struct FusionConfig {
  bool enabled = true;
  FusionWeight weight = FusionWeight::kSigma;
  std::size_t outage_samples = 64;
};

struct UncertaintyConfig {
  PerceptionConfig perception;
  ChannelConfig channel;
  FusionConfig fusion;

  void validate() const;
};

/// Per-step perception and communication picture. Observers are the vehicles;
/// objects are the vehicles followed by any static obstacles. Pair quantities
/// are stored observer-major.
struct UncertaintyFrame {
  std::size_t n_observers = 0;
  std::size_t n_objects = 0;

  std::vector<ConfidenceScore> confidence;       // local detector score
  std::vector<PerceptionDeviation> deviation;    // local detector deviation
  std::vector<ConfidenceScore> fused_confidence; // score actually used
  std::vector<std::size_t> fused_source;         // observer whose box is used
  std::vector<PerceptionDeviation> effective_deviation;
  std::vector<double> safe_distance;
  std::vector<bool> fused;  // true when the fused (V2V) case applied

  std::vector<double> outage_prob;  // per observer
  std::vector<double> sigma_t;      // per observer
  std::vector<bool> link_live;      // per observer

  std::size_t index(std::size_t observer, std::size_t object) const {
    return observer * n_objects + object;
  }
};

/// Stateful driver of the uncertainty chain for one environment. Vehicle 0 is
/// the leader; vehicles 1..K-1 are followers with a downlink channel.
class UncertaintyModel {
 public:
  UncertaintyModel() = default;
  UncertaintyModel(UncertaintyConfig cfg, std::size_t n_vehicles, double d_min, Rng& rng);

  /// Channels evolve, outage is estimated, confidences are computed, fused,
  /// and turned into safe distances, in that order.
  UncertaintyFrame refresh(std::span<const VehicleState> objects, Rng& rng);

  const ChannelState& channel() const { return channel_; }
  const UncertaintyConfig& config() const { return cfg_; }

 private:
  UncertaintyConfig cfg_;
  std::size_t n_vehicles_ = 0;
  double d_min_ = 10.0;
  std::vector<ComplexVector> precoders_;
  ChannelState channel_;
};

}  // namespace platoon
