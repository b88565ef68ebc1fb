#include <gtest/gtest.h>

#include <cmath>

#include "conlab/dynamics.hpp"
#include "conlab/field.hpp"
#include "conlab/mixture.hpp"

using namespace conlab;

namespace {

const Schedule kSched = Schedule::linear(0.01, 5.0);

FieldPtr gaussian_score() { return truth_score(GaussianMixture::standard_normal_1d(), kSched); }

double closed_form_ode(double x, double t_start, double t_end) {
  return x * std::sqrt((1 + kSched.sigma2(t_end)) / (1 + kSched.sigma2(t_start)));
}

Vec v1(double a) { return Vec::Constant(1, a); }

}  // namespace

TEST(Grid, EndpointsAndMonotone) {
  const auto g = uniform_grid(2.0, 0.5, 7);
  ASSERT_EQ(g.size(), 8u);
  EXPECT_EQ(g.front(), 2.0);
  EXPECT_EQ(g.back(), 0.5);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LT(g[i], g[i - 1]);
  EXPECT_THROW(uniform_grid(1.0, 0.5, 0), DomainError);
}

TEST(LambdaSde, OdeLimitMatchesClosedForm) {
  auto rng = rng_substream(1, 0);
  const auto traj = simulate_lambda_sde(*gaussian_score(), kSched, v1(3.0), 4.0, 0.5, 0.0, 4096, rng);
  const double exact = closed_form_ode(3.0, 4.0, 0.5);
  EXPECT_LE(std::abs(traj.endpoint()[0] - exact) / std::abs(exact), 1e-3);
  EXPECT_EQ(traj.times.size(), traj.states.size());
  EXPECT_EQ(traj.times.front(), 4.0);
  EXPECT_EQ(traj.times.back(), 0.5);
  EXPECT_FALSE(traj.seed.has_value());
}

TEST(LambdaSde, DeterministicAtLambdaZero) {
  auto a = rng_substream(1, 0);
  auto b = rng_substream(999, 5);
  const auto ta = simulate_lambda_sde(*gaussian_score(), kSched, v1(1.2), 2.0, 0.1, 0.0, 100, a);
  const auto tb = simulate_lambda_sde(*gaussian_score(), kSched, v1(1.2), 2.0, 0.1, 0.0, 100, b);
  for (std::size_t i = 0; i < ta.states.size(); ++i) ASSERT_EQ(ta.states[i][0], tb.states[i][0]);
  EXPECT_EQ(a.normals_drawn(), 0u);
}

TEST(LambdaSde, ConsumesExactlyStepsTimesDim) {
  Vec x(2);
  x << 0.3, -0.2;
  auto rng = rng_substream(3, 0);
  simulate_lambda_sde(*zero_field(2), kSched, x, 1.0, 0.5, 0.7, 33, rng);
  EXPECT_EQ(rng.normals_drawn(), 66u);
}

TEST(LambdaSde, MatchesEulerPfOdeBitwise) {
  Vec x(2);
  x << 0.8, -1.1;
  const GaussianMixture gm({0.3, 0.7}, {Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)},
                           {Vec::Constant(2, 0.2), Vec::Constant(2, 0.5)});
  auto field = truth_score(gm, kSched);
  auto rng = rng_substream(0, 0);
  const auto traj = simulate_lambda_sde(*field, kSched, x, 3.0, 0.2, 0.0, 64, rng);
  const auto ode = pf_ode_trajectory(*field, kSched, x, 3.0, 0.2, 64, Solver::EulerMaruyama);
  ASSERT_EQ(traj.states.size(), ode.states.size());
  for (std::size_t i = 0; i < ode.states.size(); ++i)
    for (int j = 0; j < 2; ++j) ASSERT_EQ(traj.states[i][j], ode.states[i][j]);
  EXPECT_EQ(pf_ode_solve(*field, kSched, x, 3.0, 0.2, 64, Solver::EulerMaruyama), traj.endpoint());
}

TEST(LambdaSde, ReverseSdePreservesGaussianMarginal) {
  // x(T) ~ q_T; the endpoint at t_end should follow q_{t_end} = N(0, 1 + sigma^2).
  const auto field = gaussian_score();
  const std::size_t n = 10000;
  const int steps = 512;
  const double t_end = 0.5;
  std::vector<double> ends(n), fine(n), coarse(n);
  parallel_for(n, [&](std::size_t p) {
    auto rng = rng_substream(77, p);
    const Vec start = v1(std::sqrt(1 + kSched.sigma2(kSched.T())) * rng.normal());
    auto rng_c = rng;
    ends[p] = lambda_sde_endpoint(*field, kSched, start, kSched.T(), t_end, 1.0, steps, rng)[0];
    const auto [f, c] =
        lambda_sde_coupled_endpoints(*field, kSched, start, kSched.T(), t_end, 1.0, steps, rng_c);
    fine[p] = f[0] * f[0];
    coarse[p] = c[0] * c[0];
  });
  double m = 0, m2 = 0, bias = 0;
  for (std::size_t p = 0; p < n; ++p) {
    m += ends[p];
    m2 += ends[p] * ends[p];
    bias += coarse[p] - fine[p];
  }
  m /= n;
  m2 /= n;
  bias = std::abs(bias / n);
  const double var_target = 1 + kSched.sigma2(t_end);
  EXPECT_LE(std::abs(m), 3 * std::sqrt(var_target / n));
  const double stderr_m2 = var_target * std::sqrt(2.0 / n);
  EXPECT_LE(std::abs(m2 - var_target), 3 * stderr_m2 + bias) << "bias=" << bias;
}

TEST(LambdaSde, Errors) {
  auto rng = rng_substream(0, 0);
  EXPECT_THROW(simulate_lambda_sde(*gaussian_score(), kSched, v1(0), 0.5, 1.0, 1.0, 10, rng),
               DomainError);
  EXPECT_THROW(simulate_lambda_sde(*gaussian_score(), kSched, v1(0), 1.0, 0.5, -1.0, 10, rng),
               DomainError);
  // Outward-pushing linear field blows up; error names the step.
  auto blowup = linear_field(Mat::Constant(1, 1, 1e4));
  try {
    simulate_lambda_sde(*blowup, kSched, v1(1.0), 5.0, 0.01, 0.0, 10, rng);
    FAIL();
  } catch (const IntegrationError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(PfOde, HeunClosedForm) {
  const double exact = closed_form_ode(2.5, 5.0, 0.01);
  const double got = pf_ode_solve(*gaussian_score(), kSched, v1(2.5), 5.0, 0.01, 256)[0];
  EXPECT_LE(std::abs(got - exact) / std::abs(exact), 1e-4);
}

TEST(PfOde, ZeroFieldIsFrozen) {
  Vec x(3);
  x << 1.0, -2.0, 0.25;
  EXPECT_EQ(pf_ode_solve(*zero_field(3), kSched, x, 4.0, 0.3, 17), x);
}

TEST(PfOde, RoundTripReturnsToStart) {
  const GaussianMixture gm({0.5, 0.5}, {v1(-1.5), v1(1.5)}, {v1(0.25), v1(0.25)});
  auto field = truth_score(gm, kSched);
  for (double x0 : {-2.0, 0.3, 1.1}) {
    const Vec mid = pf_ode_solve(*field, kSched, v1(x0), 2.0, 0.2, 2048);
    const Vec back = pf_ode_solve(*field, kSched, mid, 0.2, 2.0, 2048);
    EXPECT_LE(std::abs(back[0] - x0), 1e-6 * (1 + std::abs(x0)));
  }
}

TEST(PfOde, DegenerateIntervalIsIdentity) {
  EXPECT_EQ(pf_ode_solve(*gaussian_score(), kSched, v1(0.7), 1.0, 1.0, 1)[0], 0.7);
}

TEST(Convergence, HeunIsSecondOrder) {
  ConvergenceCase c;
  const auto pts = convergence_probe(c, ProbeMethod::HeunOde, {16, 32, 64, 128});
  const double slope = fitted_order(pts);
  EXPECT_GE(slope, 1.8);
  EXPECT_LE(slope, 2.2);
}

TEST(Convergence, EulerOdeErrorHalvesWithSteps) {
  ConvergenceCase c;
  const auto pts = convergence_probe(c, ProbeMethod::EulerOde, {64, 128, 256});
  EXPECT_NEAR(pts[0].error / pts[1].error, 2.0, 0.15);
  EXPECT_NEAR(pts[1].error / pts[2].error, 2.0, 0.1);
}

TEST(Convergence, EulerMaruyamaWeakOrderOne) {
  ConvergenceCase c;
  c.n_paths = 200000;
  const auto pts = convergence_probe(c, ProbeMethod::EulerMaruyamaWeak, {8, 16, 32, 64});
  const double slope = fitted_order(pts);
  EXPECT_GE(slope, 0.7);
  EXPECT_LE(slope, 1.3);
}
