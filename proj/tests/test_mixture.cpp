#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "conlab/field.hpp"
#include "conlab/mixture.hpp"
#include "oracles.hpp"

using namespace conlab;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

GaussianMixture two_mode_1d() {
  return GaussianMixture({0.5, 0.5}, {v1(-2), v1(2)}, {v1(0.25), v1(0.25)});
}

GaussianMixture mixture_2d() {
  return GaussianMixture({0.4, 0.6}, {v2(-1.0, -0.5), v2(1.0, 0.8)}, {v2(0.3, 0.2), v2(0.25, 0.4)});
}

}  // namespace

TEST(Mixture, ValidatesInputs) {
  EXPECT_THROW(GaussianMixture({0.5, 0.4}, {v1(0), v1(1)}, {v1(1), v1(1)}), DomainError);
  EXPECT_THROW(GaussianMixture({1.0}, {v1(0)}, {v1(0.0)}), DomainError);
  EXPECT_THROW(GaussianMixture({0.5, 0.5}, {v1(0), v2(1, 1)}, {v1(1), v1(1)}), ShapeError);
  EXPECT_THROW(GaussianMixture({}, {}, {}), ShapeError);
}

TEST(LogQt, SingleGaussianClosedForm) {
  const auto gm = GaussianMixture::standard_normal_1d();
  EXPECT_NEAR(log_qt_at_var(gm, v1(0), 3.0), -0.5 * std::log(2 * std::numbers::pi * 4), 1e-12);
  EXPECT_NEAR(log_qt_at_var(gm, v1(0), 3.0), -1.6120857137646178, 1e-12);
  EXPECT_NEAR(log_qt_at_var(gm, v1(2), 3.0), -2.1120857137646178, 1e-12);
}

TEST(LogQt, TwoModeMatchesBruteForceSum) {
  const auto gm = two_mode_1d();
  const double oracle_value =
      std::log(oracle::mixture_density(gm.weights(), gm.means(), gm.variances(), 0.0, v1(0)));
  EXPECT_NEAR(log_qt_at_var(gm, v1(0), 0.0), oracle_value, 1e-12);
  // Far field stays finite thanks to log-sum-exp.
  EXPECT_TRUE(std::isfinite(log_qt_at_var(gm, v1(80), 1e-4)));
}

TEST(LogQt, RejectsWrongDimension) {
  EXPECT_THROW(log_qt_at_var(two_mode_1d(), v2(0, 0), 1.0), ShapeError);
  EXPECT_THROW(score_at_var(two_mode_1d(), v2(0, 0), 1.0), ShapeError);
}

TEST(Score, ClosedFormAndSymmetry) {
  EXPECT_NEAR(score_at_var(GaussianMixture::standard_normal_1d(), v1(2), 3.0)[0], -0.5, 1e-15);
  EXPECT_EQ(score_at_var(two_mode_1d(), v1(0), 0.7)[0], 0.0);
}

TEST(Score, MatchesFdOfLogQt) {
  const auto gm = two_mode_1d();
  const Vec x = v1(1.0);
  const double h = 1e-4 * (1 + 1.0);
  const Vec fd = oracle::fd_gradient([&](const Vec& y) { return log_qt_at_var(gm, y, 1.0); }, x, h);
  const Vec s = score_at_var(gm, x, 1.0);
  EXPECT_LE(oracle::rel_err(s[0], fd[0]), 1e-6);

  const auto gm2 = mixture_2d();
  CounterRng rng(3, 0);
  for (int i = 0; i < 50; ++i) {
    const Vec y = v2(3 * rng.uniform() - 1.5, 3 * rng.uniform() - 1.5);
    const double var = 0.01 + 2 * rng.uniform();
    const Vec g = oracle::fd_gradient([&](const Vec& z) { return log_qt_at_var(gm2, z, var); }, y,
                                      1e-4 * (1 + y.cwiseAbs().maxCoeff()));
    const Vec sc = score_at_var(gm2, y, var);
    EXPECT_LE((sc - g).norm() / std::max(1.0, sc.norm()), 1e-6);
  }
}

TEST(ScoreDerivatives, LinearCaseAndTrace) {
  const auto d = score_derivatives_at_var(GaussianMixture::standard_normal_1d(), v1(1.3), 3.0);
  EXPECT_NEAR(d.jacobian(0, 0), -0.25, 1e-15);
  EXPECT_LE(std::abs(d.divergence - d.jacobian.trace()), 1e-12);
}

TEST(ScoreDerivatives, JacobianMatchesFdOfScore) {
  const auto gm = two_mode_1d();
  const Vec x = v1(0.7);
  const auto d = score_derivatives_at_var(gm, x, 0.5);
  const Mat fd =
      oracle::fd_jacobian([&](const Vec& y) { return score_at_var(gm, y, 0.5); }, x, 1e-4 * 1.7);
  EXPECT_LE(std::abs(d.jacobian(0, 0) - fd(0, 0)) / std::max(1.0, std::abs(fd(0, 0))), 1e-5);

  const auto gm2 = mixture_2d();
  CounterRng rng(4, 0);
  for (int i = 0; i < 100; ++i) {
    const Vec y = v2(4 * rng.uniform() - 2, 4 * rng.uniform() - 2);
    const double var = 0.01 + 3 * rng.uniform();
    const auto der = score_derivatives_at_var(gm2, y, var);
    const Mat j = oracle::fd_jacobian([&](const Vec& z) { return score_at_var(gm2, z, var); }, y,
                                      1e-4 * (1 + y.cwiseAbs().maxCoeff()));
    EXPECT_LE((der.jacobian - j).cwiseAbs().maxCoeff() / std::max(1.0, j.cwiseAbs().maxCoeff()),
              1e-5);
    EXPECT_LE((der.jacobian - der.jacobian.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(der.score_sq, score_at_var(gm2, y, var).squaredNorm(), 1e-12);
  }
}

// Lap q / q = div s + ||s||^2, checked against second differences of q itself.
TEST(ScoreDerivatives, HeatIdentity) {
  const auto gm2 = mixture_2d();
  CounterRng rng(5, 0);
  for (int i = 0; i < 40; ++i) {
    const Vec y = v2(3 * rng.uniform() - 1.5, 3 * rng.uniform() - 1.5);
    const double var = 0.05 + 2 * rng.uniform();
    auto q = [&](const Vec& z) {
      return oracle::mixture_density(gm2.weights(), gm2.means(), gm2.variances(), var, z);
    };
    const double h = 1e-3;
    double lap = 0;
    for (int j = 0; j < 2; ++j) {
      Vec p = y, m = y;
      p[j] += h;
      m[j] -= h;
      lap += (q(p) - 2 * q(y) + q(m)) / (h * h);
    }
    const auto der = score_derivatives_at_var(gm2, y, var);
    const double analytic = der.divergence + der.score_sq;
    EXPECT_LE(oracle::rel_err(lap / q(y), analytic), 1e-4) << "var=" << var;
  }
}

TEST(Denoiser, ClosedFormsAndTweedie) {
  const auto sched = Schedule::linear(0.01, 5.0);
  const auto gm = GaussianMixture::standard_normal_1d();
  // sigma^2 = 3 at t = sqrt(3): h = x / (1 + sigma^2)
  EXPECT_NEAR(denoiser(gm, sched, v1(4), std::sqrt(3.0))[0], 1.0, 1e-12);
  EXPECT_EQ(denoiser(two_mode_1d(), sched, v1(0), 1.0)[0], 0.0);

  // two-mode case at sigma^2 = 1 (t = 1): x + sigma^2 * FD score
  const auto tm = two_mode_1d();
  const Vec fd =
      oracle::fd_gradient([&](const Vec& y) { return log_qt_at_var(tm, y, 1.0); }, v1(1), 2e-4);
  EXPECT_NEAR(denoiser(tm, sched, v1(1), 1.0)[0], 1.0 + fd[0], 1e-6);

  const auto gm2 = mixture_2d();
  CounterRng rng(6, 0);
  for (int i = 0; i < 100; ++i) {
    const Vec x = v2(8 * rng.uniform() - 4, 8 * rng.uniform() - 4);
    const double t = 0.01 + 4.99 * rng.uniform();
    const Vec lhs = denoiser(gm2, sched, x, t);
    const Vec rhs = x + sched.sigma2(t) * score(gm2, sched, x, t);
    EXPECT_LE((lhs - rhs).norm(), 1e-12 * (1 + x.norm()));
  }
}

TEST(Denoiser, NearIdentityAtT0) {
  const auto sched = Schedule::linear(0.01, 5.0);
  const auto gm = mixture_2d();
  for (double a : {-2.0, -0.5, 0.3, 1.7}) {
    const Vec x = v2(a, -a / 2);
    const Vec s = score(gm, sched, x, sched.t0());
    EXPECT_LE((denoiser(gm, sched, x, sched.t0()) - x).norm(), sched.sigma2(sched.t0()) * s.norm() + 1e-15);
  }
}

TEST(SampleData, MomentsDeterminismAndDegenerate) {
  const auto samples = sample_data(GaussianMixture::standard_normal_1d(), 100000, 11);
  double m = 0, s2 = 0;
  for (const auto& x : samples) m += x[0];
  m /= samples.size();
  for (const auto& x : samples) s2 += (x[0] - m) * (x[0] - m);
  s2 /= samples.size() - 1;
  EXPECT_LT(std::abs(m), 3.0 / std::sqrt(1e5));
  EXPECT_LT(std::abs(s2 - 1.0), 0.05);

  const auto again = sample_data(GaussianMixture::standard_normal_1d(), 100000, 11);
  for (std::size_t i = 0; i < samples.size(); ++i) ASSERT_EQ(samples[i][0], again[i][0]);

  const auto point = sample_data(GaussianMixture::single(v1(7), v1(1e-18)), 1000, 1);
  for (const auto& x : point) EXPECT_NEAR(x[0], 7.0, 1e-8);

  EXPECT_THROW(sample_data(GaussianMixture::standard_normal_1d(), 0, 1), DomainError);
}

TEST(SampleData, ComponentFrequencies) {
  const auto gm = GaussianMixture({0.2, 0.8}, {v1(-10), v1(10)}, {v1(1), v1(1)});
  const auto samples = sample_data(gm, 50000, 3);
  int left = 0;
  for (const auto& x : samples) left += x[0] < 0;
  EXPECT_NEAR(left / 50000.0, 0.2, 4 * std::sqrt(0.16 / 50000));
}

TEST(PerturbForward, VarianceAndDeterminism) {
  const auto sched = Schedule::linear(0.01, 5.0);
  const Vec x0 = v1(1.5);
  const double t = 1.3;
  auto rng = rng_substream(8, 0);
  const int n = 100000;
  double m = 0, s2 = 0;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) draws[i] = perturb_forward(x0, sched, t, rng)[0];
  for (double d : draws) m += d;
  m /= n;
  for (double d : draws) s2 += (d - m) * (d - m);
  s2 /= n - 1;
  EXPECT_LT(std::abs(s2 / sched.sigma2(t) - 1.0), 0.05);

  auto a = rng_substream(8, 1), b = rng_substream(8, 1);
  EXPECT_EQ(perturb_forward(x0, sched, t, a)[0], perturb_forward(x0, sched, t, b)[0]);

  auto c = rng_substream(8, 2);
  for (int i = 0; i < 100; ++i)
    EXPECT_LE(std::abs(perturb_forward(x0, sched, sched.t0(), c)[0] - 1.5), 5 * sched.t0());
}

TEST(Fields, TweedieAdaptersRoundTrip) {
  const auto sched = Schedule::linear(0.01, 5.0);
  const auto gm = mixture_2d();
  auto s = truth_score(gm, sched);
  auto h = std::make_shared<DenoiserFromScore>(s, sched);
  auto s_back = std::make_shared<ScoreFromDenoiser>(h, sched);
  const Vec x = v2(0.4, -0.9);
  EXPECT_LE(((*s_back)(x, 1.2) - (*s)(x, 1.2)).norm(), 1e-12);
  EXPECT_LE((s_back->jacobian(x, 1.2) - s->jacobian(x, 1.2)).norm(), 1e-10);
  auto truth_h = truth_denoiser(gm, sched);
  EXPECT_LE((truth_h->jacobian(x, 0.7) - h->jacobian(x, 0.7)).norm(), 1e-12);
}
