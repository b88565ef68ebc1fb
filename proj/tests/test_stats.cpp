#include <gtest/gtest.h>

#include <cmath>

#include "conlab/rng.hpp"
#include "conlab/stats.hpp"
#include "oracles.hpp"

using namespace conlab;

TEST(Summarize, MatchesTwoPassFormula) {
  auto rng = rng_substream(3, 0);
  std::vector<Vec> xs;
  for (int i = 0; i < 257; ++i) xs.push_back(Vec::Constant(2, 10.0) + Vec{{rng.normal(), 2 * rng.normal()}});
  Vec mean = Vec::Zero(2);
  for (auto& x : xs) mean += x;
  mean /= xs.size();
  Vec var = Vec::Zero(2);
  for (auto& x : xs) var += (x - mean).array().square().matrix();
  var /= (xs.size() - 1);
  const auto est = summarize(xs, 10, 0.5);
  EXPECT_LE((est.mean - mean).norm(), 1e-12);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(est.stderr_[j], std::sqrt(var[j] / xs.size()), 1e-12);
  EXPECT_EQ(est.n_paths, 257u);
  EXPECT_EQ(est.n_steps, 10);
  EXPECT_EQ(est.lambda, 0.5);
}

TEST(Summarize, IdenticalSamplesGiveExactZero) {
  std::vector<Vec> xs(33, Vec{{0.1, -7.3, 1e8}});
  const auto est = summarize(xs);
  EXPECT_EQ(est.mean, xs[0]);
  EXPECT_EQ(est.stderr_.maxCoeff(), 0.0);
  EXPECT_THROW(summarize(std::vector<Vec>{}), UsageError);
}

TEST(Spearman, AgreesWithBruteForceIncludingTies) {
  auto rng = rng_substream(4, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(15), b(15);
    for (int i = 0; i < 15; ++i) {
      a[i] = std::floor(4 * rng.uniform());
      b[i] = a[i] + rng.normal();
    }
    EXPECT_NEAR(spearman(a, b), oracle::spearman_brute(a, b), 1e-12);
  }
  std::vector<double> up{1, 2, 3, 4}, down{9, 5, 2, 0};
  EXPECT_DOUBLE_EQ(spearman(up, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman(up, down), -1.0);
}

TEST(SlicedWasserstein, ZeroForSameSampleAndShiftIn1d) {
  auto rng = rng_substream(5, 0);
  std::vector<Vec> a, b;
  for (int i = 0; i < 500; ++i) {
    a.push_back(Vec::Constant(1, rng.normal()));
    b.push_back(a.back().array() + 0.3);
  }
  EXPECT_EQ(sliced_wasserstein(a, a, 8, 1), 0.0);
  EXPECT_NEAR(sliced_wasserstein(a, b, 8, 1), 0.3, 1e-12);
}

TEST(SlicedWasserstein, ShiftIn2dAveragesProjectedShift) {
  // Brute force: mean |<dir, shift>| over the same directions is what we get.
  auto rng = rng_substream(6, 0);
  std::vector<Vec> a, b;
  const Vec shift{{1.0, 0.0}};
  for (int i = 0; i < 200; ++i) {
    a.push_back(Vec{{rng.normal(), rng.normal()}});
    b.push_back(a.back() + shift);
  }
  const double sw = sliced_wasserstein(a, b, 4000, 2);
  EXPECT_NEAR(sw, 2.0 / M_PI, 0.02);  // E|cos| over uniform angles
}
