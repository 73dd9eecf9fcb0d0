#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace platoon {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream id); used to give each environment,
/// worker, and subsystem its own reproducible generator.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

double standard_normal(Rng& rng);
double uniform(Rng& rng, double lo, double hi);

/// Circularly-symmetric complex normal with unit variance, CN(0, 1).
std::complex<double> complex_normal(Rng& rng);

}  // namespace platoon
