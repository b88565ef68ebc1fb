#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "conlab/common.hpp"
#include "conlab/field.hpp"
#include "conlab/rng.hpp"
#include "conlab/schedule.hpp"

namespace conlab {

enum class Solver { EulerMaruyama, Heun };

std::string to_string(Solver solver);
Solver solver_from_string(const std::string& name);

/// A discretized path of the lambda-interpolated reverse dynamics.
struct Trajectory {
  std::vector<double> times;  // strictly decreasing
  std::vector<Vec> states;    // one per time
  double lambda = 0.0;
  Solver solver = Solver::EulerMaruyama;
  std::optional<std::uint64_t> seed;       // unset for deterministic paths
  std::optional<std::uint64_t> stream_id;  // substream that drove the noise

  const Vec& endpoint() const { return states.back(); }
};

/// n_steps + 1 nodes from t_start to t_end, uniform spacing, last node exactly t_end.
std::vector<double> uniform_grid(double t_start, double t_end, int n_steps);

/// ||x||_inf above this aborts integration.
inline constexpr double kDivergenceBound = 1e6;

/*!
 * Euler-Maruyama for dx = -((1+lambda)/2) g^2 s dt + lambda g dw, run
 * backwards from t_start to t_end < t_start. Per step of size dt > 0 from t
 * to t - dt:
 *
 *   x <- x + ((1+lambda)/2) g^2(t) s(x,t) dt + lambda g(t) sqrt(dt) eps
 *
 * Coefficients are taken at the left (later) time. At lambda = 0 the noise
 * term is skipped and no variates are drawn.
 */
Trajectory simulate_lambda_sde(const VectorField& score, const Schedule& sched, const Vec& x_start,
                               double t_start, double t_end, double lambda, int n_steps,
                               CounterRng& rng);

/// Same dynamics as simulate_lambda_sde, keeping only the endpoint.
Vec lambda_sde_endpoint(const VectorField& score, const Schedule& sched, const Vec& x_start,
                        double t_start, double t_end, double lambda, int n_steps, CounterRng& rng);

/// Endpoints of a fine path with 2 * n_coarse steps and a coarse path with
/// n_coarse steps sharing the same Brownian increments (the coarse increment
/// is the sum of the two fine ones). Used for step-halving bias estimates.
std::pair<Vec, Vec> lambda_sde_coupled_endpoints(const VectorField& score, const Schedule& sched,
                                                 const Vec& x_start, double t_start, double t_end,
                                                 double lambda, int n_coarse, CounterRng& rng);

/// Deterministic solve of the probability-flow ODE dx/dt = -1/2 g^2 s in
/// either direction. Heun is the explicit trapezoidal rule; Euler shares the
/// step of simulate_lambda_sde at lambda = 0 bit for bit.
Vec pf_ode_solve(const VectorField& score, const Schedule& sched, const Vec& x_start,
                 double t_start, double t_end, int n_steps, Solver method = Solver::Heun);

Trajectory pf_ode_trajectory(const VectorField& score, const Schedule& sched, const Vec& x_start,
                             double t_start, double t_end, int n_steps, Solver method = Solver::Heun);

/// One Heun step of the PF ODE from t to t_next.
Vec pf_ode_heun_step(const VectorField& score, const Schedule& sched, const Vec& x, double t,
                     double t_next);

// Order-of-accuracy probes on the single-Gaussian case, where the PF ODE
// endpoint is x sqrt((v + sigma^2(t')) / (v + sigma^2(t))) and the reverse
// SDE conditional mean is x (v + sigma^2(t')) / (v + sigma^2(t)).

enum class ProbeMethod { HeunOde, EulerOde, EulerMaruyamaWeak };

struct ConvergenceCase {
  double data_variance = 1.0;
  Schedule schedule = Schedule::linear();
  double x_start = 4.0;
  double t_start = 2.0;
  double t_end = 0.2;
  std::size_t n_paths = 400000;  // weak probe only
  std::uint64_t seed = 7;
};

struct ConvergencePoint {
  double dt;
  double error;
};

std::vector<ConvergencePoint> convergence_probe(const ConvergenceCase& c, ProbeMethod method,
                                                const std::vector<int>& step_counts);

/// Least-squares slope of log(error) against log(dt).
double fitted_order(const std::vector<ConvergencePoint>& points);

}  // namespace conlab
