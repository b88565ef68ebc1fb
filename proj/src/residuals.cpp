#include "conlab/residuals.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "conlab/rng.hpp"

namespace conlab {

FieldProbe make_probe(FieldPtr field, const Schedule& sched, DerivativeMode mode,
                      double spatial_step, double time_step) {
  if (!(spatial_step > 0.0) || !(time_step > 0.0))
    throw DomainError("probe steps must be positive");
  if (mode == DerivativeMode::Analytic && !field->has_jacobian())
    throw UsageError("analytic probe requested for a field without a Jacobian");
  return FieldProbe{std::move(field), sched, mode, spatial_step, time_step};
}

Vec FieldProbe::time_derivative(const Vec& x, double t) const {
  schedule.check_time(t);
  const double tau = time_step;
  const double t0 = schedule.t0();
  const double T = schedule.T();
  if (T - t0 < 2.0 * tau)
    throw DomainError("time stencil of width " + std::to_string(2.0 * tau) +
                      " does not fit in [t0, T]");
  if (t - tau >= t0 && t + tau <= T) return (value(x, t + tau) - value(x, t - tau)) / (2.0 * tau);
  if (t - tau < t0)
    return (-3.0 * value(x, t) + 4.0 * value(x, t + tau) - value(x, t + 2.0 * tau)) / (2.0 * tau);
  return (3.0 * value(x, t) - 4.0 * value(x, t - tau) + value(x, t - 2.0 * tau)) / (2.0 * tau);
}

Mat FieldProbe::jacobian(const Vec& x, double t) const {
  if (mode == DerivativeMode::Analytic) return field->jacobian(x, t);
  const auto d = x.size();
  const double h = spatial_h(x);
  Mat j(d, d);
  Vec xp = x, xm = x;
  for (Eigen::Index c = 0; c < d; ++c) {
    xp[c] = x[c] + h;
    xm[c] = x[c] - h;
    j.col(c) = (value(xp, t) - value(xm, t)) / (2.0 * h);
    xp[c] = xm[c] = x[c];
  }
  return j;
}

Vec FieldProbe::laplacian(const Vec& x, double t) const {
  const auto d = x.size();
  const double h = spatial_h(x);
  Vec lap = Vec::Zero(d);
  Vec xp = x, xm = x;
  if (mode == DerivativeMode::Analytic) {
    for (Eigen::Index c = 0; c < d; ++c) {
      xp[c] = x[c] + h;
      xm[c] = x[c] - h;
      lap += (field->jacobian(xp, t).col(c) - field->jacobian(xm, t).col(c)) / (2.0 * h);
      xp[c] = xm[c] = x[c];
    }
    return lap;
  }
  const Vec center = value(x, t);
  for (Eigen::Index c = 0; c < d; ++c) {
    xp[c] = x[c] + h;
    xm[c] = x[c] - h;
    lap += (value(xp, t) - 2.0 * center + value(xm, t)) / (h * h);
    xp[c] = xm[c] = x[c];
  }
  return lap;
}

Vec FieldProbe::grad_div_plus_sq(const Vec& x, double t) const {
  const auto d = x.size();
  const double h = spatial_h(x);
  auto phi = [&](const Vec& y) {
    // The inner Jacobian keeps the stencil width of the outer point.
    Mat j;
    if (mode == DerivativeMode::Analytic) {
      j = field->jacobian(y, t);
    } else {
      j.resize(d, d);
      Vec yp = y, ym = y;
      for (Eigen::Index c = 0; c < d; ++c) {
        yp[c] = y[c] + h;
        ym[c] = y[c] - h;
        j.col(c) = (value(yp, t) - value(ym, t)) / (2.0 * h);
        yp[c] = ym[c] = y[c];
      }
    }
    return j.trace() + value(y, t).squaredNorm();
  };
  Vec grad(d);
  Vec xp = x, xm = x;
  for (Eigen::Index c = 0; c < d; ++c) {
    xp[c] = x[c] + h;
    xm[c] = x[c] - h;
    grad[c] = (phi(xp) - phi(xm)) / (2.0 * h);
    xp[c] = xm[c] = x[c];
  }
  return grad;
}

ResidualSample score_fpe_sample(const FieldProbe& probe, const Vec& x, double t, FpeForm form) {
  const double g2 = probe.schedule.g2(t);
  ResidualSample out;
  const Vec dt = probe.time_derivative(x, t);
  out.dt_norm = dt.norm();
  if (form == FpeForm::Gradient) {
    out.residual = dt - 0.5 * g2 * probe.grad_div_plus_sq(x, t);
  } else {
    const Vec s = probe.value(x, t);
    out.residual = dt - 0.5 * g2 * probe.laplacian(x, t) - g2 * (probe.jacobian(x, t) * s);
  }
  return out;
}

Vec score_fpe_residual(const FieldProbe& probe, const Vec& x, double t, FpeForm form) {
  return score_fpe_sample(probe, x, t, form).residual;
}

Vec denoiser_pde_residual(const FieldProbe& probe, const FieldPtr& score_field, const Vec& x,
                          double t) {
  const double g2 = probe.schedule.g2(t);
  const Vec h = probe.value(x, t);
  const Vec s = score_field ? (*score_field)(x, t) : Vec((h - x) / probe.schedule.sigma2(t));
  return probe.time_derivative(x, t) - 0.5 * g2 * probe.laplacian(x, t) -
         g2 * (probe.jacobian(x, t) * s);
}

double fpe_form_agreement(const FieldProbe& probe, const Vec& x, double t) {
  return max_abs(score_fpe_residual(probe, x, t, FpeForm::Gradient) -
                 score_fpe_residual(probe, x, t, FpeForm::Jacobian));
}

std::vector<Vec> grid_points(const GridSpec& spec, int dim, std::size_t ti, const Schedule& sched) {
  std::vector<Vec> points;
  if (spec.n_points == 0) return points;
  auto rng = rng_substream(spec.seed, ti);
  points.reserve(spec.n_points);
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    if (spec.sampler == PointSampler::QtSamples) {
      if (!spec.mixture) throw UsageError("q_t sampling needs a mixture");
      points.push_back(perturb_forward(sample_one(*spec.mixture, rng), sched, spec.t_list[ti], rng));
    } else {
      Vec x(dim);
      for (int j = 0; j < dim; ++j) x[j] = spec.box_half_width * (2.0 * rng.uniform() - 1.0);
      points.push_back(x);
    }
  }
  return points;
}

std::vector<ResidualRow> residual_grid_report(const FieldProbe& probe, const GridSpec& spec) {
  std::vector<ResidualRow> rows;
  if (spec.n_points == 0) return rows;
  for (std::size_t ti = 0; ti < spec.t_list.size(); ++ti) {
    const double t = spec.t_list[ti];
    const auto points = grid_points(spec, probe.field->dim(), ti, probe.schedule);
    std::vector<double> res(points.size());
    parallel_for(points.size(), [&](std::size_t i) {
      res[i] = score_fpe_sample(probe, points[i], t, spec.form).normalized();
    });
    ResidualRow row;
    row.t = t;
    row.n = points.size();
    row.mean_res = pairwise_sum(res) / static_cast<double>(res.size());
    row.max_res = *std::max_element(res.begin(), res.end());
    row.stencil_dx = probe.spatial_step;
    row.stencil_dt = probe.time_step;
    rows.push_back(row);
  }
  return rows;
}

std::string residual_rows_csv(const std::vector<ResidualRow>& rows) {
  std::ostringstream out;
  out << "t,n,mean_res,max_res,stencil_dx,stencil_dt\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g,%.17g,%.17g,%.17g\n", r.t, r.n, r.mean_res,
                  r.max_res, r.stencil_dx, r.stencil_dt);
    out << buf;
  }
  return out.str();
}

}  // namespace conlab
