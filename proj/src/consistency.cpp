#include "conlab/consistency.hpp"

#include <cmath>
#include <string>

#include "conlab/rng.hpp"

namespace conlab {

namespace {

void check_pair(const Schedule& sched, double t, double t_prime) {
  sched.check_time(t);
  sched.check_time(t_prime);
  if (!(t_prime < t)) throw DomainError("need t_prime < t");
}

// Runs body(path, rng) for every path with its own substream and rewraps
// integration failures with the path index.
template <typename Body>
void for_each_path(std::size_t n_paths, std::uint64_t seed, Body&& body) {
  if (n_paths == 0) throw DomainError("n_paths must be at least 1");
  parallel_for(n_paths, [&](std::size_t p) {
    auto rng = rng_substream(seed, p);
    try {
      body(p, rng);
    } catch (const IntegrationError& e) {
      throw IntegrationError("path " + std::to_string(p) + ": " + e.what());
    }
  });
}

}  // namespace

McEstimate sde_denoised_mean(const FieldPtr& h, const Schedule& sched, const Vec& x, double t,
                             double lambda, std::size_t n_paths, int n_steps, std::uint64_t seed) {
  check_pair(sched, t, sched.t0());
  const ScoreFromDenoiser score(h, sched);
  std::vector<Vec> ends(n_paths);
  for_each_path(n_paths, seed, [&](std::size_t p, CounterRng& rng) {
    ends[p] = lambda_sde_endpoint(score, sched, x, t, sched.t0(), lambda, n_steps, rng);
  });
  return summarize(ends, n_steps, lambda);
}

MartingaleGap martingale_gap(const FieldPtr& h, const Schedule& sched, const Vec& x, double t,
                             double t_prime, double lambda, std::size_t n_paths, int n_steps,
                             std::uint64_t seed) {
  check_pair(sched, t, t_prime);
  const ScoreFromDenoiser score(h, sched);
  std::vector<Vec> targets(n_paths);
  for_each_path(n_paths, seed, [&](std::size_t p, CounterRng& rng) {
    const Vec end = lambda_sde_endpoint(score, sched, x, t, t_prime, lambda, n_steps, rng);
    targets[p] = (*h)(end, t_prime);
  });
  MartingaleGap out;
  out.estimate = summarize(targets, n_steps, lambda);
  out.gap = (*h)(x, t) - out.estimate.mean;
  out.regularizer = 0.5 * out.gap.squaredNorm();
  return out;
}

BiasEstimate martingale_gap_bias(const FieldPtr& h, const Schedule& sched, const Vec& x, double t,
                                 double t_prime, double lambda, std::size_t n_paths, int n_steps,
                                 std::uint64_t seed) {
  check_pair(sched, t, t_prime);
  const ScoreFromDenoiser score(h, sched);
  std::vector<Vec> diffs(n_paths);
  for_each_path(n_paths, seed, [&](std::size_t p, CounterRng& rng) {
    const auto [fine, coarse] =
        lambda_sde_coupled_endpoints(score, sched, x, t, t_prime, lambda, n_steps, rng);
    diffs[p] = 2.0 * ((*h)(coarse, t_prime) - (*h)(fine, t_prime));
  });
  const auto est = summarize(diffs);
  return BiasEstimate{est.mean, est.stderr_};
}

double ode_consistency_gap(const FieldPtr& f, const FieldPtr& score, const Schedule& sched,
                           const Vec& x, double t, double t_prime, int n_steps, Solver solver) {
  check_pair(sched, t, t_prime);
  const Vec end = pf_ode_solve(*score, sched, x, t, t_prime, n_steps, solver);
  return 0.5 * ((*f)(x, t) - (*f)(end, t_prime)).squaredNorm();
}

DriftTestResult drift_test(const Vec& drift, const DiffusionFn& diffusion, const Vec& x, double t,
                           double t_prime, std::size_t n_paths, int n_steps, std::uint64_t seed) {
  if (!(t_prime < t)) throw DomainError("need t_prime < t");
  if (drift.size() != x.size()) throw ShapeError("drift and state dimensions differ");
  const auto grid = uniform_grid(t, t_prime, n_steps);
  std::vector<Vec> effects(n_paths);
  for_each_path(n_paths, seed, [&](std::size_t p, CounterRng& rng) {
    Vec state = x;
    for (int k = 0; k < n_steps; ++k) {
      const double dt = grid[k] - grid[k + 1];
      const double scale = diffusion(grid[k]) * std::sqrt(dt);
      state += dt * drift;
      for (Eigen::Index j = 0; j < state.size(); ++j) state[j] += scale * rng.normal();
      if (!state.allFinite()) throw IntegrationError("diverged at step " + std::to_string(k));
    }
    effects[p] = state - x;
  });
  const auto est = summarize(effects, n_steps, 0.0);
  return DriftTestResult{est.mean, est.stderr_};
}

Theorem41Report theorem41_check(const FieldPtr& h, const FieldPtr& score, const Schedule& sched,
                                const Vec& x, const Theorem41Config& cfg) {
  Theorem41Report report;
  const FieldPtr drive = score ? score : std::make_shared<ScoreFromDenoiser>(h, sched);

  const auto cdm = martingale_gap(h, sched, x, cfg.t, cfg.t_prime, 0.0, 1, cfg.n_steps,
                                  cfg.seeds.empty() ? 0 : cfg.seeds[0]);
  report.cdm_regularizer = cdm.regularizer;
  report.ode_consistency =
      ode_consistency_gap(h, drive, sched, x, cfg.t, cfg.t_prime, cfg.n_steps, Solver::EulerMaruyama);
  report.discrepancy = std::abs(report.cdm_regularizer - report.ode_consistency);
  report.equality_ok = report.discrepancy <= cfg.tolerance;

  // lambda = 0 across seeds: targets must agree bit for bit.
  std::vector<Vec> per_seed;
  double worst_stderr = 0;
  for (auto seed : cfg.seeds) {
    const auto g = martingale_gap(h, sched, x, cfg.t, cfg.t_prime, 0.0, 4, cfg.n_steps, seed);
    per_seed.push_back(g.estimate.mean);
    worst_stderr = std::max(worst_stderr, g.estimate.max_stderr());
  }
  if (per_seed.size() > 1) {
    const auto across = summarize(per_seed);
    report.seed_variance = across.variance().mean();
  }
  report.lambda0_stderr = worst_stderr;
  report.deterministic_ok = report.seed_variance == 0.0 && worst_stderr == 0.0;

  for (double lambda : cfg.lambdas) {
    const auto g = martingale_gap(h, sched, x, cfg.t, cfg.t_prime, lambda, cfg.sweep_paths,
                                  cfg.n_steps, cfg.sweep_seed);
    report.lambda_sweep.push_back({lambda, g.estimate.variance().mean()});
  }
  // Ordered by decreasing lambda, variance must strictly decrease and vanish at 0.
  auto sorted = report.lambda_sweep;
  std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.lambda > b.lambda; });
  report.sweep_ok = !sorted.empty();
  for (std::size_t i = 1; i < sorted.size(); ++i)
    report.sweep_ok = report.sweep_ok && sorted[i].variance < sorted[i - 1].variance;
  if (!sorted.empty() && sorted.back().lambda == 0.0)
    report.sweep_ok = report.sweep_ok && sorted.back().variance == 0.0;
  return report;
}

Theorem42Report theorem42_check(const std::vector<double>& eps_grid, const GaussianMixture& gm,
                                const Schedule& sched, const Theorem42Config& cfg) {
  bool has_zero = false;
  for (double e : eps_grid) has_zero = has_zero || e == 0.0;
  if (!has_zero) throw UsageError("theorem42_check: eps grid must contain 0");

  const auto base = truth_score(gm, sched);
  const FieldPtr p = cfg.perturbation ? cfg.perturbation
                                      : linear_field(Mat::Identity(gm.dim(), gm.dim()));
  GridSpec grid = cfg.residual_grid;
  if (!grid.mixture) grid.mixture = gm;

  // Gap evaluation points ~ q_t, shared by every eps.
  std::vector<Vec> points;
  {
    auto rng = rng_substream(derive_seed(cfg.seed, "gap-points"), 0);
    for (std::size_t i = 0; i < cfg.n_gap_points; ++i)
      points.push_back(perturb_forward(sample_one(gm, rng), sched, cfg.t, rng));
  }
  const auto path_seed = [&](std::size_t i) { return derive_seed(cfg.seed, i); };

  Theorem42Report report;
  for (double eps : eps_grid) {
    const auto s_eps = std::make_shared<PerturbedField>(base, p, eps);
    const auto h_eps = std::make_shared<DenoiserFromScore>(s_eps, sched);
    Theorem42Row row;
    row.eps = eps;
    const auto probe = make_probe(s_eps, sched, s_eps->has_jacobian() ? DerivativeMode::Analytic
                                                                      : DerivativeMode::FiniteDifference,
                                  cfg.spatial_step, cfg.time_step);
    const auto res_rows = residual_grid_report(probe, grid);
    for (const auto& r : res_rows) row.mean_residual += r.mean_res;
    if (!res_rows.empty()) row.mean_residual /= static_cast<double>(res_rows.size());

    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto g = martingale_gap(h_eps, sched, points[i], cfg.t, cfg.t_prime, cfg.lambda,
                                    cfg.n_paths, cfg.n_steps, path_seed(i));
      row.mean_gap += g.gap.norm();
      row.gap_stderr += g.estimate.max_stderr();
    }
    row.mean_gap /= static_cast<double>(points.size());
    row.gap_stderr /= static_cast<double>(points.size());
    report.rows.push_back(row);

    if (eps == 0.0) {
      double bias = 0;
      for (std::size_t i = 0; i < points.size(); ++i)
        bias += martingale_gap_bias(h_eps, sched, points[i], cfg.t, cfg.t_prime, cfg.lambda,
                                    cfg.n_paths, cfg.n_steps, path_seed(i))
                    .norm();
      report.zero_gap_bias = bias / static_cast<double>(points.size());
      report.zero_gap_threshold = 3.0 * row.gap_stderr + report.zero_gap_bias;
      report.residual_floor_ok = row.mean_residual <= cfg.fpe_floor;
      report.gap_floor_ok = row.mean_gap <= report.zero_gap_threshold;
    }
  }

  std::vector<double> eps, res, gap;
  for (const auto& r : report.rows) {
    eps.push_back(r.eps);
    res.push_back(r.mean_residual);
    gap.push_back(r.mean_gap);
  }
  if (report.rows.size() >= 2) {
    report.spearman_residual = spearman(eps, res);
    report.spearman_gap = spearman(eps, gap);
  }
  report.monotone_ok = report.spearman_residual >= cfg.min_spearman_residual &&
                       report.spearman_gap >= cfg.min_spearman_gap;
  return report;
}

}  // namespace conlab
