#pragma once

// Seeded generators for the property tests. Every test builds its own Gen
// from a fixed seed so failures replay exactly.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fkplab/types.hpp"

namespace fkplab::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  /// Log-uniform on [lo, hi], lo > 0.
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  Point point(int n, double lo, double hi) { return {uniform(lo, hi), n == 2 ? uniform(lo, hi) : 0.0}; }
  BallQuery ball(int n, double lo, double hi, double r_lo, double r_hi) {
    const Point c = point(n, lo, hi);
    return {c, log_uniform(r_lo, r_hi)};
  }
  std::vector<BallQuery> balls(int count, int n, double lo, double hi, double r_lo, double r_hi) {
    std::vector<BallQuery> out;
    for (int i = 0; i < count; ++i) out.push_back(ball(n, lo, hi, r_lo, r_hi));
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

/// Relative difference with an absolute floor.
inline double rel_diff(double a, double b, double floor = 1e-300) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace fkplab::testing
