#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "rvo/error.hpp"
#include "rvo/rng.hpp"

namespace rvo {

/// Base failure probability per unit sequence, recovery failure probability
/// and the number of independent recovery attempts.
struct FailureModel {
  double p0 = 0.0;
  double pr = 0.0;
  int n = 0;
};

inline void validate(const FailureModel& m) {
  if (!(m.p0 >= 0.0 && m.p0 <= 1.0)) throw Error(ErrorCode::InvalidArgument, "p0 must lie in [0, 1]");
  if (!(m.pr >= 0.0 && m.pr <= 1.0)) throw Error(ErrorCode::InvalidArgument, "pr must lie in [0, 1]");
  if (m.n < 0) throw Error(ErrorCode::InvalidArgument, "n must be non-negative");
}

/// Probability that the base system fails and every recovery attempt fails.
inline double dual_failure_probability(const FailureModel& m) {
  validate(m);
  return m.p0 * std::pow(m.pr, m.n);
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
  bool contains(double x) const { return x >= low && x <= high; }
};

/// Wilson score interval for a binomial proportion (z = 1.96 for 95%).
inline Interval wilson_interval(std::uint64_t successes, std::uint64_t trials, double z = 1.959963984540054) {
  if (trials == 0) throw Error(ErrorCode::InvalidArgument, "trials must be positive");
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  Interval ci{std::max(0.0, centre - half), std::min(1.0, centre + half)};
  if (successes == 0) ci.low = 0.0;
  if (successes == trials) ci.high = 1.0;
  return ci;
}

struct MonteCarloResult {
  std::uint64_t trials = 0;
  std::uint64_t failures = 0;
  double rate = 0.0;
  Interval ci;  // 95%
};

/// Simulates `trials` independent units. Every draw is keyed by (seed,
/// trial, attempt), so trials can be evaluated in any order or split across
/// workers without changing the result.
inline MonteCarloResult monte_carlo_failure_rate(const FailureModel& m, std::uint64_t trials, std::uint64_t seed) {
  validate(m);
  if (trials == 0) throw Error(ErrorCode::InvalidArgument, "trials must be at least 1");
  const std::uint64_t key = derive_seed(seed, "monte_carlo");
  MonteCarloResult r;
  r.trials = trials;
  for (std::uint64_t t = 0; t < trials; ++t) {
    if (!(hashed_uniform(key, t, 0) < m.p0)) continue;
    bool recovered = false;
    for (int a = 1; a <= m.n && !recovered; ++a) recovered = !(hashed_uniform(key, t, static_cast<std::uint64_t>(a)) < m.pr);
    if (!recovered) ++r.failures;
  }
  r.rate = static_cast<double>(r.failures) / static_cast<double>(trials);
  r.ci = wilson_interval(r.failures, trials);
  return r;
}

/// 1 - (dual failure rate) / (base failure rate).
inline double failure_reduction(std::uint64_t base_failures, std::uint64_t base_trials, std::uint64_t dual_failures,
                                std::uint64_t dual_trials) {
  if (base_trials == 0 || dual_trials == 0) throw Error(ErrorCode::InvalidArgument, "trial counts must be positive");
  if (base_failures == 0) throw Error(ErrorCode::InvalidArgument, "base failures must be positive");
  if (base_failures > base_trials || dual_failures > dual_trials)
    throw Error(ErrorCode::InvalidArgument, "failures exceed trials");
  const double base = static_cast<double>(base_failures) / static_cast<double>(base_trials);
  const double dual = static_cast<double>(dual_failures) / static_cast<double>(dual_trials);
  return 1.0 - dual / base;
}

}  // namespace rvo
