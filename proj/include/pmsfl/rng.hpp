#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "pmsfl/error.hpp"

namespace pmsfl {

// Seeded random stream. Every stochastic operation in the library takes one
// of these explicitly; nothing draws from hidden global state. Sub-streams
// are derived from (seed, tags) so a full run is a pure function of the
// master seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives an independent stream from a master seed and up to three tags
  // (e.g. client id, round index, purpose). Mixing is splitmix64-style so
  // nearby tags land far apart in state space.
  static Rng derive(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    std::uint64_t x = master;
    x = mix(x ^ (0x9e3779b97f4a7c15ULL + a));
    x = mix(x ^ (0xbf58476d1ce4e5b9ULL + b));
    x = mix(x ^ (0x94d049bb133111ebULL + c));
    return Rng(x);
  }

  // Stable tag for purpose strings (FNV-1a).
  static std::uint64_t tag(std::string_view name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char ch : name) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
    return h;
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) fail(ErrorCode::kDomain, "uniform_index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(engine_);
  }

  // Laplace(0, scale) via inverse CDF.
  double laplace(double scale) {
    const double u = uniform01() - 0.5;
    return -scale * ((u < 0.0) ? -1.0 : 1.0) * std::log1p(-2.0 * std::abs(u));
  }

  double gamma(double alpha) {
    std::gamma_distribution<double> dist(alpha, 1.0);
    return dist(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace pmsfl
