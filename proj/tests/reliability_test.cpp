#include <gtest/gtest.h>

#include <chrono>

#include "rvo/reliability/reliability.hpp"

using namespace rvo;

TEST(DualFailureProbability, Examples) {
  EXPECT_DOUBLE_EQ(dual_failure_probability({0.1, 0.1, 1}), 0.01);
  EXPECT_DOUBLE_EQ(dual_failure_probability({0.1, 0.37, 0}), 0.1);
  EXPECT_DOUBLE_EQ(dual_failure_probability({1.0, 1.0, 5}), 1.0);
  EXPECT_DOUBLE_EQ(dual_failure_probability({0.2, 0.5, 3}), 0.2 * 0.125);
}

TEST(DualFailureProbability, RejectsInvalidModels) {
  for (const FailureModel m : {FailureModel{-0.1, 0.5, 1}, FailureModel{0.5, 1.5, 1}, FailureModel{0.5, 0.5, -1}}) {
    try {
      dual_failure_probability(m);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
    }
  }
}

TEST(DualFailureProbability, Monotone) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const FailureModel m{rng.uniform(), rng.uniform(), static_cast<int>(rng.below(6))};
    const double p = dual_failure_probability(m);
    EXPECT_LE(dual_failure_probability({m.p0, m.pr, m.n + 1}), p);
    EXPECT_GE(dual_failure_probability({std::min(1.0, m.p0 + rng.uniform(0, 0.2)), m.pr, m.n}), p);
    EXPECT_GE(dual_failure_probability({m.p0, std::min(1.0, m.pr + rng.uniform(0, 0.2)), m.n}), p);
  }
}

TEST(MonteCarlo, OnePercentModelWithinBand) {
  const auto t0 = std::chrono::steady_clock::now();
  const MonteCarloResult r = monte_carlo_failure_rate({0.1, 0.1, 1}, 100000, 42);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GE(r.rate, 0.007);
  EXPECT_LE(r.rate, 0.013);
  EXPECT_TRUE(r.ci.contains(0.01));
  EXPECT_LT(s, 1.0);
}

TEST(MonteCarlo, DegenerateModelsAreExact) {
  EXPECT_EQ(monte_carlo_failure_rate({0.0, 0.7, 2}, 10000, 1).failures, 0u);
  EXPECT_EQ(monte_carlo_failure_rate({1.0, 1.0, 3}, 10000, 1).rate, 1.0);
  EXPECT_EQ(monte_carlo_failure_rate({1.0, 0.5, 0}, 10000, 1).rate, 1.0);
}

TEST(MonteCarlo, DeterministicPerSeed) {
  const FailureModel m{0.3, 0.4, 2};
  EXPECT_EQ(monte_carlo_failure_rate(m, 20000, 9).failures, monte_carlo_failure_rate(m, 20000, 9).failures);
  EXPECT_NE(monte_carlo_failure_rate(m, 20000, 9).failures, monte_carlo_failure_rate(m, 20000, 10).failures);
}

TEST(MonteCarlo, RandomModelsMostlyInsideTheirIntervals) {
  Rng rng(7);
  int inside = 0;
  for (int i = 0; i < 50; ++i) {
    const FailureModel m{rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0), 1 + static_cast<int>(rng.below(3))};
    const MonteCarloResult r = monte_carlo_failure_rate(m, 100000, 1000 + i);
    inside += r.ci.contains(dual_failure_probability(m)) ? 1 : 0;
  }
  EXPECT_GE(inside, 47);
}

TEST(MonteCarlo, ZeroTrialsRejected) {
  EXPECT_THROW(monte_carlo_failure_rate({0.1, 0.1, 1}, 0, 1), Error);
}

TEST(WilsonInterval, KnownValues) {
  // 10 of 100 at 95%: [0.0552, 0.1744].
  const Interval ci = wilson_interval(10, 100);
  EXPECT_NEAR(ci.low, 0.05523, 1e-4);
  EXPECT_NEAR(ci.high, 0.17437, 1e-4);
  EXPECT_EQ(wilson_interval(0, 50).low, 0.0);
  EXPECT_EQ(wilson_interval(50, 50).high, 1.0);
}

TEST(FailureReduction, TableValues) {
  EXPECT_NEAR(failure_reduction(154, 610, 18, 610), 1.0 - 18.0 / 154.0, 1e-15);
  EXPECT_NEAR(failure_reduction(154, 610, 18, 610), 0.883, 5e-4);
  EXPECT_NEAR(failure_reduction(154, 610, 24, 610), 0.844, 5e-4);
  EXPECT_DOUBLE_EQ(failure_reduction(7, 20, 7, 20), 0.0);
  EXPECT_DOUBLE_EQ(failure_reduction(10, 100, 5, 50), 0.0);
  EXPECT_THROW(failure_reduction(0, 10, 0, 10), Error);
  EXPECT_THROW(failure_reduction(11, 10, 0, 10), Error);
}
