#include "conlab/dynamics.hpp"

#include <cmath>
#include <string>

namespace conlab {

std::string to_string(Solver solver) {
  return solver == Solver::Heun ? "heun" : "euler-maruyama";
}

Solver solver_from_string(const std::string& name) {
  if (name == "heun") return Solver::Heun;
  if (name == "euler-maruyama" || name == "euler") return Solver::EulerMaruyama;
  throw ConfigError("unknown solver '" + name + "'");
}

std::vector<double> uniform_grid(double t_start, double t_end, int n_steps) {
  if (n_steps < 1) throw DomainError("n_steps must be at least 1");
  std::vector<double> grid(n_steps + 1);
  const double span = t_end - t_start;
  for (int k = 0; k < n_steps; ++k) grid[k] = t_start + span * (static_cast<double>(k) / n_steps);
  grid[n_steps] = t_end;
  return grid;
}

namespace {

void check_reverse_interval(const Schedule& sched, double t_start, double t_end) {
  sched.check_time(t_start);
  sched.check_time(t_end);
  if (!(t_end < t_start))
    throw DomainError("reverse integration needs t_end < t_start (got t_start=" +
                      std::to_string(t_start) + ", t_end=" + std::to_string(t_end) + ")");
}

void check_state(const Vec& x, int step) {
  if (!x.allFinite() || max_abs(x) > kDivergenceBound)
    throw IntegrationError("integration diverged at step " + std::to_string(step));
}

// Deterministic part of the lambda step; shared by the SDE and Euler PF ODE so
// the two agree bitwise at lambda = 0.
void drift_step(const VectorField& score, const Schedule& sched, Vec& x, double t, double t_next,
                double lambda) {
  const double coeff = 0.5 * (1.0 + lambda) * sched.g2(t) * (t - t_next);
  x += coeff * score(x, t);
}

void noise_step(const Schedule& sched, Vec& x, double t, double dt, double lambda,
                CounterRng& rng) {
  const double scale = lambda * sched.g(t) * std::sqrt(dt);
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += scale * rng.normal();
}

template <typename Observer>
Vec integrate_lambda(const VectorField& score, const Schedule& sched, Vec x,
                     const std::vector<double>& grid, double lambda, CounterRng& rng,
                     Observer&& observe) {
  const int n = static_cast<int>(grid.size()) - 1;
  for (int k = 0; k < n; ++k) {
    const double t = grid[k];
    const double t_next = grid[k + 1];
    drift_step(score, sched, x, t, t_next, lambda);
    if (lambda != 0.0) noise_step(sched, x, t, t - t_next, lambda, rng);
    check_state(x, k);
    observe(x);
  }
  return x;
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be >= 0");
}

}  // namespace

Trajectory simulate_lambda_sde(const VectorField& score, const Schedule& sched, const Vec& x_start,
                               double t_start, double t_end, double lambda, int n_steps,
                               CounterRng& rng) {
  check_reverse_interval(sched, t_start, t_end);
  check_lambda(lambda);
  Trajectory traj;
  traj.times = uniform_grid(t_start, t_end, n_steps);
  traj.lambda = lambda;
  traj.solver = Solver::EulerMaruyama;
  if (lambda != 0.0) {
    traj.seed = rng.seed();
    traj.stream_id = rng.stream_id();
  }
  traj.states.reserve(traj.times.size());
  traj.states.push_back(x_start);
  integrate_lambda(score, sched, x_start, traj.times, lambda, rng,
                   [&](const Vec& x) { traj.states.push_back(x); });
  return traj;
}

Vec lambda_sde_endpoint(const VectorField& score, const Schedule& sched, const Vec& x_start,
                        double t_start, double t_end, double lambda, int n_steps, CounterRng& rng) {
  check_reverse_interval(sched, t_start, t_end);
  check_lambda(lambda);
  return integrate_lambda(score, sched, x_start, uniform_grid(t_start, t_end, n_steps), lambda, rng,
                          [](const Vec&) {});
}

std::pair<Vec, Vec> lambda_sde_coupled_endpoints(const VectorField& score, const Schedule& sched,
                                                 const Vec& x_start, double t_start, double t_end,
                                                 double lambda, int n_coarse, CounterRng& rng) {
  check_reverse_interval(sched, t_start, t_end);
  check_lambda(lambda);
  const auto fine_grid = uniform_grid(t_start, t_end, 2 * n_coarse);
  const auto coarse_grid = uniform_grid(t_start, t_end, n_coarse);
  const auto d = x_start.size();
  Vec fine = x_start;
  Vec coarse = x_start;
  Vec eps_a(d), eps_b(d);
  for (int k = 0; k < n_coarse; ++k) {
    if (lambda != 0.0) {
      for (Eigen::Index j = 0; j < d; ++j) eps_a[j] = rng.normal();
      for (Eigen::Index j = 0; j < d; ++j) eps_b[j] = rng.normal();
    }
    for (int half = 0; half < 2; ++half) {
      const double t = fine_grid[2 * k + half];
      const double t_next = fine_grid[2 * k + half + 1];
      drift_step(score, sched, fine, t, t_next, lambda);
      if (lambda != 0.0)
        fine += (lambda * sched.g(t) * std::sqrt(t - t_next)) * (half == 0 ? eps_a : eps_b);
      check_state(fine, 2 * k + half);
    }
    const double t = coarse_grid[k];
    const double t_next = coarse_grid[k + 1];
    drift_step(score, sched, coarse, t, t_next, lambda);
    if (lambda != 0.0) {
      // W increment over the coarse step is the sum of the two fine increments.
      const double fine_dt = 0.5 * (t - t_next);
      coarse += (lambda * sched.g(t) * std::sqrt(fine_dt)) * (eps_a + eps_b);
    }
    check_state(coarse, k);
  }
  return {fine, coarse};
}

Vec pf_ode_heun_step(const VectorField& score, const Schedule& sched, const Vec& x, double t,
                     double t_next) {
  const double h = t_next - t;
  const Vec k1 = -0.5 * sched.g2(t) * score(x, t);
  const Vec predictor = x + h * k1;
  const Vec k2 = -0.5 * sched.g2(t_next) * score(predictor, t_next);
  return x + (0.5 * h) * (k1 + k2);
}

namespace {

template <typename Observer>
Vec integrate_pf_ode(const VectorField& score, const Schedule& sched, Vec x,
                     const std::vector<double>& grid, Solver method, Observer&& observe) {
  const int n = static_cast<int>(grid.size()) - 1;
  for (int k = 0; k < n; ++k) {
    if (method == Solver::Heun)
      x = pf_ode_heun_step(score, sched, x, grid[k], grid[k + 1]);
    else
      drift_step(score, sched, x, grid[k], grid[k + 1], 0.0);
    check_state(x, k);
    observe(x);
  }
  return x;
}

}  // namespace

Vec pf_ode_solve(const VectorField& score, const Schedule& sched, const Vec& x_start,
                 double t_start, double t_end, int n_steps, Solver method) {
  sched.check_time(t_start);
  sched.check_time(t_end);
  return integrate_pf_ode(score, sched, x_start, uniform_grid(t_start, t_end, n_steps), method,
                          [](const Vec&) {});
}

Trajectory pf_ode_trajectory(const VectorField& score, const Schedule& sched, const Vec& x_start,
                             double t_start, double t_end, int n_steps, Solver method) {
  sched.check_time(t_start);
  sched.check_time(t_end);
  Trajectory traj;
  traj.times = uniform_grid(t_start, t_end, n_steps);
  traj.lambda = 0.0;
  traj.solver = method;
  traj.states.push_back(x_start);
  integrate_pf_ode(score, sched, x_start, traj.times, method,
                   [&](const Vec& x) { traj.states.push_back(x); });
  return traj;
}

std::vector<ConvergencePoint> convergence_probe(const ConvergenceCase& c, ProbeMethod method,
                                                const std::vector<int>& step_counts) {
  const auto gm = GaussianMixture::single(Vec::Zero(1), Vec::Constant(1, c.data_variance));
  const TruthScore field(gm, c.schedule);
  const double v_start = c.data_variance + c.schedule.sigma2(c.t_start);
  const double v_end = c.data_variance + c.schedule.sigma2(c.t_end);
  const Vec x0 = Vec::Constant(1, c.x_start);

  std::vector<ConvergencePoint> out;
  for (std::size_t i = 0; i < step_counts.size(); ++i) {
    const int n = step_counts[i];
    const double dt = std::abs(c.t_start - c.t_end) / n;
    double error = 0.0;
    if (method == ProbeMethod::EulerMaruyamaWeak) {
      const double exact_mean = c.x_start * v_end / v_start;
      std::vector<double> endpoints(c.n_paths);
      const auto seed = derive_seed(c.seed, static_cast<std::uint64_t>(n));
      parallel_for(c.n_paths, [&](std::size_t p) {
        auto rng = rng_substream(seed, p);
        endpoints[p] = lambda_sde_endpoint(field, c.schedule, x0, c.t_start, c.t_end, 1.0, n, rng)[0];
      });
      error = std::abs(pairwise_sum(endpoints) / static_cast<double>(c.n_paths) - exact_mean);
    } else {
      const double exact = c.x_start * std::sqrt(v_end / v_start);
      const auto solver = method == ProbeMethod::HeunOde ? Solver::Heun : Solver::EulerMaruyama;
      error = std::abs(pf_ode_solve(field, c.schedule, x0, c.t_start, c.t_end, n, solver)[0] - exact);
    }
    out.push_back({dt, error});
  }
  return out;
}

double fitted_order(const std::vector<ConvergencePoint>& points) {
  if (points.size() < 2) throw UsageError("need at least two points to fit an order");
  double mx = 0, my = 0;
  for (const auto& p : points) {
    mx += std::log(p.dt);
    my += std::log(p.error);
  }
  mx /= points.size();
  my /= points.size();
  double sxy = 0, sxx = 0;
  for (const auto& p : points) {
    const double dx = std::log(p.dt) - mx;
    sxy += dx * (std::log(p.error) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace conlab
