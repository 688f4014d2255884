#pragma once

// Linear combinations of independent normals: Z = sum c_i X_i with
// X_i ~ N(a_i mu_i, A_i^2 sigma_i^2). Closed form plus a seeded sampler.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "advamd/error.hpp"
#include "advamd/random.hpp"

namespace advamd {

struct NormalSpec {
  double c = 1.0;      // combination weight
  double a = 1.0;      // mean multiplier
  double mu = 0.0;     // base mean
  double A = 1.0;      // std multiplier
  double sigma = 1.0;  // base std, > 0

  double mean() const { return a * mu; }
  double stddev() const { return std::abs(A) * sigma; }
  double variance() const { return A * A * sigma * sigma; }
};

struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;
};

inline void validate_components(const std::vector<NormalSpec>& comps) {
  require(!comps.empty(), ErrorCode::EmptyList, "need at least one component");
  for (const auto& s : comps)
    require(std::isfinite(s.sigma) && s.sigma > 0.0, ErrorCode::InvalidArgument, "component sigma must be > 0");
}

// Components are assumed independent.
inline MeanVar combine_normals(const std::vector<NormalSpec>& comps) {
  validate_components(comps);
  MeanVar out;
  for (const auto& s : comps) {
    out.mean += s.c * s.a * s.mu;
    out.variance += s.c * s.c * s.A * s.A * s.sigma * s.sigma;
  }
  return out;
}

inline constexpr std::size_t kMinMonteCarloSamples = 10000;

// Sample mean and unbiased variance of n draws of Z (Welford).
inline MeanVar monte_carlo_check(const std::vector<NormalSpec>& comps, std::size_t n, std::uint64_t seed) {
  validate_components(comps);
  require(n >= kMinMonteCarloSamples, ErrorCode::InvalidArgument, "monte carlo needs n >= 10000");
  Rng rng(seed);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    double z = 0.0;
    for (const auto& s : comps) z += s.c * rng.normal(s.mean(), s.stddev());
    const double d = z - mean;
    mean += d / static_cast<double>(k);
    m2 += d * (z - mean);
  }
  return {mean, m2 / static_cast<double>(n - 1)};
}

// Random component set for property checks: c, a, mu in [-2,2], A in [0.5,2], sigma in [0.1,2].
inline std::vector<NormalSpec> random_components(std::size_t count, Rng& rng) {
  std::vector<NormalSpec> out(count);
  for (auto& s : out) {
    s.c = rng.uniform(-2.0, 2.0);
    s.a = rng.uniform(-2.0, 2.0);
    s.mu = rng.uniform(-2.0, 2.0);
    s.A = rng.uniform(0.5, 2.0);
    s.sigma = rng.uniform(0.1, 2.0);
  }
  return out;
}

}  // namespace advamd
