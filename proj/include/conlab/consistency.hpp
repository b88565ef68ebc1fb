#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "conlab/common.hpp"
#include "conlab/dynamics.hpp"
#include "conlab/field.hpp"
#include "conlab/residuals.hpp"
#include "conlab/schedule.hpp"
#include "conlab/stats.hpp"

namespace conlab {

// All Monte-Carlo checkers run path i on rng_substream(seed, i) and reduce in
// path order, so results do not depend on thread count.

/// E[x(t0) | X_t = x] under the lambda-SDE driven by s = (h - x) / sigma^2.
McEstimate sde_denoised_mean(const FieldPtr& h, const Schedule& sched, const Vec& x, double t,
                             double lambda, std::size_t n_paths, int n_steps, std::uint64_t seed);

struct MartingaleGap {
  Vec gap;                // h(x,t) - E[h(x(t'),t') | X_t = x]
  McEstimate estimate;    // of h(x(t'),t')
  double regularizer = 0; // 1/2 ||gap||^2
};

MartingaleGap martingale_gap(const FieldPtr& h, const Schedule& sched, const Vec& x, double t,
                             double t_prime, double lambda, std::size_t n_paths, int n_steps,
                             std::uint64_t seed);

/// Step-halving estimate of the discretization bias of martingale_gap at
/// n_steps: fine (2 n_steps) and coarse (n_steps) paths share Brownian
/// increments; the first-order Richardson bias of the coarse run is
/// 2 (E_coarse - E_fine).
struct BiasEstimate {
  Vec bias;        // 2 * mean(coarse - fine)
  Vec stderr_;     // of the bias vector
  double norm() const { return bias.norm(); }
};

BiasEstimate martingale_gap_bias(const FieldPtr& h, const Schedule& sched, const Vec& x, double t,
                                 double t_prime, double lambda, std::size_t n_paths, int n_steps,
                                 std::uint64_t seed);

/// 1/2 ||f(x,t) - f(x(t'),t')||^2 with x(t') from the PF ODE under `score`.
double ode_consistency_gap(const FieldPtr& f, const FieldPtr& score, const Schedule& sched,
                           const Vec& x, double t, double t_prime, int n_steps,
                           Solver solver = Solver::Heun);

/// Diffusion coefficient G(t) for the drift test.
using DiffusionFn = std::function<double(double)>;

struct DriftTestResult {
  Vec effect;   // estimate of E[X(t')] - x
  Vec stderr_;
};

/// Simulates dX = F dt + G(t) dw backwards from t to t' with constant F, in
/// units of elapsed reverse time (so F = c gives E[X(t')] - x = c (t - t')).
DriftTestResult drift_test(const Vec& drift, const DiffusionFn& diffusion, const Vec& x, double t,
                           double t_prime, std::size_t n_paths, int n_steps, std::uint64_t seed);

struct LambdaVariance {
  double lambda;
  double variance;  // mean over coordinates of the target's sample variance
};

struct Theorem41Report {
  double cdm_regularizer = 0;   // martingale_gap at lambda = 0
  double ode_consistency = 0;   // 1/2-MSE ODE consistency on the same Euler grid
  double discrepancy = 0;
  double seed_variance = 0;     // variance of the lambda = 0 target across seeds
  double lambda0_stderr = 0;
  std::vector<LambdaVariance> lambda_sweep;  // in the order given
  bool equality_ok = false;
  bool deterministic_ok = false;
  bool sweep_ok = false;
  bool passed() const { return equality_ok && deterministic_ok && sweep_ok; }
};

struct Theorem41Config {
  double t = 1.0;
  double t_prime = 0.5;
  int n_steps = 64;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  std::vector<double> lambdas{1.0, 0.5, 0.25, 0.0};
  std::size_t sweep_paths = 2000;
  std::uint64_t sweep_seed = 11;
  double tolerance = 1e-12;
};

/// Checks that at lambda = 0 the CDM regularizer and the ODE-consistency loss
/// coincide and that the lambda = 0 target carries no randomness. When
/// `score` is null the SDE and ODE are both driven by the score induced by h.
Theorem41Report theorem41_check(const FieldPtr& h, const FieldPtr& score, const Schedule& sched,
                                const Vec& x, const Theorem41Config& cfg);

struct Theorem42Config {
  FieldPtr perturbation;  // p; defaults to p(x) = x when null
  // martingale-gap side
  std::size_t n_gap_points = 8;
  double t = 1.0;
  double t_prime = 0.5;
  double lambda = 1.0;
  std::size_t n_paths = 2000;
  int n_steps = 100;
  // residual side
  GridSpec residual_grid;
  double spatial_step = 1e-3;
  double time_step = 1e-4;
  std::uint64_t seed = 5;
  // thresholds
  double fpe_floor = 1e-4;
  double min_spearman_residual = 0.95;
  double min_spearman_gap = 0.9;
};

struct Theorem42Row {
  double eps = 0;
  double mean_residual = 0;  // normalized FPE residual
  double mean_gap = 0;       // mean ||martingale gap|| over gap points
  double gap_stderr = 0;     // mean of per-point max stderr
};

struct Theorem42Report {
  std::vector<Theorem42Row> rows;
  double spearman_residual = 0;
  double spearman_gap = 0;
  double zero_gap_bias = 0;       // step-halving bias at eps = 0
  double zero_gap_threshold = 0;  // 3 stderr + bias at eps = 0
  bool residual_floor_ok = false;
  bool gap_floor_ok = false;
  bool monotone_ok = false;
  bool passed() const { return residual_floor_ok && gap_floor_ok && monotone_ok; }
};

/// Perturbs the true score by eps * p, and for each eps reports the score FPE
/// residual and the martingale gap of the induced denoiser (driven by itself).
Theorem42Report theorem42_check(const std::vector<double>& eps_grid, const GaussianMixture& gm,
                                const Schedule& sched, const Theorem42Config& cfg);

}  // namespace conlab
