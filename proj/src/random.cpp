#include "platoon/random.hpp"

#include <cmath>

namespace platoon {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
  return Rng(seq);
}

double standard_normal(Rng& rng) {
  // A fresh distribution per draw keeps the stream position a pure function of
  // the number of draws (no cached second variate).
  std::normal_distribution<double> normal(0.0, 1.0);
  return normal(rng);
}

double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

std::complex<double> complex_normal(Rng& rng) {
  const double scale = std::sqrt(0.5);
  const double re = standard_normal(rng);
  const double im = standard_normal(rng);
  return {scale * re, scale * im};
}

}  // namespace platoon
