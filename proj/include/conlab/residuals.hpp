#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "conlab/common.hpp"
#include "conlab/field.hpp"
#include "conlab/mixture.hpp"
#include "conlab/schedule.hpp"

namespace conlab {

enum class DerivativeMode { Analytic, FiniteDifference };

/*!
 * Differential-operator access to a VectorField.
 *
 * The time derivative is always a finite difference with step `time_step`
 * (central in the interior, second-order one-sided near t0 and T). Spatial
 * stencils use h = spatial_step * (1 + ||x||_inf).
 *
 * Analytic mode takes the Jacobian from the field and forms second spatial
 * derivatives with one central difference of that Jacobian. Finite-difference
 * mode builds the Jacobian and Laplacian from field values alone.
 */
struct FieldProbe {
  FieldPtr field;
  Schedule schedule;
  DerivativeMode mode = DerivativeMode::Analytic;
  double spatial_step = 1e-3;
  double time_step = 1e-4;

  double spatial_h(const Vec& x) const { return spatial_step * (1.0 + max_abs(x)); }

  Vec value(const Vec& x, double t) const { return (*field)(x, t); }
  Vec time_derivative(const Vec& x, double t) const;
  Mat jacobian(const Vec& x, double t) const;
  /// (Laplacian F)_i = sum_j d^2 F_i / dx_j^2
  Vec laplacian(const Vec& x, double t) const;
  /// grad_x (div F + ||F||^2), outer derivative by central differences.
  Vec grad_div_plus_sq(const Vec& x, double t) const;
};

FieldProbe make_probe(FieldPtr field, const Schedule& sched,
                      DerivativeMode mode = DerivativeMode::Analytic, double spatial_step = 1e-3,
                      double time_step = 1e-4);

enum class FpeForm { Gradient, Jacobian };

/// Score FPE residual. Gradient form: d_t s - 1/2 g^2 grad(div s + ||s||^2);
/// Jacobian form: d_t s - 1/2 g^2 Lap s - g^2 J_s s.
Vec score_fpe_residual(const FieldProbe& probe, const Vec& x, double t, FpeForm form);

/// Residual together with ||d_t s|| for scale-free reporting.
struct ResidualSample {
  Vec residual;
  double dt_norm = 0.0;
  double normalized() const { return residual.norm() / (1.0 + dt_norm); }
};

ResidualSample score_fpe_sample(const FieldProbe& probe, const Vec& x, double t, FpeForm form);

/// Denoiser PDE residual d_t h - 1/2 g^2 Lap h - g^2 J_h s. When score_field is
/// null, s = (h - x) / sigma^2(t).
Vec denoiser_pde_residual(const FieldProbe& probe, const FieldPtr& score_field, const Vec& x,
                          double t);

/// || gradient form - Jacobian form ||_inf
double fpe_form_agreement(const FieldProbe& probe, const Vec& x, double t);

enum class PointSampler { QtSamples, UniformBox };

struct GridSpec {
  PointSampler sampler = PointSampler::QtSamples;
  std::size_t n_points = 100;
  std::vector<double> t_list{0.1, 0.5, 1.0, 2.0};
  std::uint64_t seed = 0;
  std::optional<GaussianMixture> mixture;  // required for QtSamples
  double box_half_width = 3.0;             // UniformBox covers [-w, w]^D
  FpeForm form = FpeForm::Jacobian;
};

struct ResidualRow {
  double t = 0.0;
  std::size_t n = 0;
  double mean_res = 0.0;  // mean normalized residual norm
  double max_res = 0.0;
  double stencil_dx = 0.0;
  double stencil_dt = 0.0;
};

/// Evaluation points for time index `ti` of a grid (deterministic in the seed).
std::vector<Vec> grid_points(const GridSpec& spec, int dim, std::size_t ti, const Schedule& sched);

std::vector<ResidualRow> residual_grid_report(const FieldProbe& probe, const GridSpec& spec);

std::string residual_rows_csv(const std::vector<ResidualRow>& rows);

}  // namespace conlab
