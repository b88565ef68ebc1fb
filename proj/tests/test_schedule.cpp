#include <gtest/gtest.h>

#include <cmath>

#include "conlab/common.hpp"
#include "conlab/schedule.hpp"
#include "oracles.hpp"

using namespace conlab;

TEST(Schedule, LinearSigmaValues) {
  const auto s = Schedule::linear(0.01, 5.0);
  EXPECT_DOUBLE_EQ(s.sigma2(0.5), 0.25);
  EXPECT_DOUBLE_EQ(s.sigma2(0.01), 1e-4);
  EXPECT_DOUBLE_EQ(s.g2(0.5), 1.0);
  EXPECT_DOUBLE_EQ(s.g2(2.0), 4.0);
}

TEST(Schedule, GeometricSigmaAtT) {
  // sigma(1) = 0.01 * (5 / 0.01)^1 = 5
  const auto s = Schedule::geometric(0.01, 5.0, 0.001, 1.0);
  EXPECT_NEAR(s.sigma2(1.0), 25.0, 1e-12);
}

TEST(Schedule, OutOfRangeNamesBound) {
  const auto s = Schedule::linear(0.01, 5.0);
  try {
    s.sigma2(0.001);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("t0"), std::string::npos);
  }
  try {
    s.g2(6.0);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("T="), std::string::npos);
  }
}

TEST(Schedule, RejectsBadBounds) {
  EXPECT_THROW(Schedule::linear(0.0, 1.0), DomainError);
  EXPECT_THROW(Schedule::linear(2.0, 1.0), DomainError);
  EXPECT_THROW(Schedule::geometric(1.0, 0.5, 0.01, 1.0), DomainError);
}

class ScheduleFd : public ::testing::TestWithParam<Schedule> {};

TEST_P(ScheduleFd, G2MatchesCentralDifferenceOnGrid) {
  const auto s = GetParam();
  const double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    const double t = s.t0() + h + (s.T() - s.t0() - 2 * h) * i / 99.0;
    const double fd = oracle::fd_derivative([&](double u) { return s.sigma2(u); }, t, h);
    EXPECT_LE(std::abs(s.g2(t) - fd) / std::max(1.0, s.g2(t)), 1e-6) << "t=" << t;
    EXPECT_GT(s.g2(t), 0.0);
  }
}

TEST_P(ScheduleFd, SigmaIncreasingAndPure) {
  const auto s = GetParam();
  double prev = 0;
  for (int i = 0; i < 100; ++i) {
    const double t = s.t0() + (s.T() - s.t0()) * i / 99.0;
    const double v = s.sigma(t);
    EXPECT_GT(v, prev);
    prev = v;
    EXPECT_EQ(s.sigma2(t), s.sigma2(t));
    EXPECT_EQ(s.g2(t), s.g2(t));
  }
}

INSTANTIATE_TEST_SUITE_P(Forms, ScheduleFd,
                         ::testing::Values(Schedule::linear(0.01, 5.0),
                                           Schedule::geometric(0.01, 5.0, 0.01, 1.0)));
