#include "conlab/field.hpp"

namespace conlab {

Mat VectorField::jacobian(const Vec&, double) const {
  throw UsageError("field has no analytic Jacobian");
}

FunctionField::FunctionField(int dim, ValueFn value, JacobianFn jacobian)
    : dim_(dim), value_(std::move(value)), jacobian_(std::move(jacobian)) {}

Mat FunctionField::jacobian(const Vec& x, double t) const {
  if (!jacobian_) return VectorField::jacobian(x, t);
  return jacobian_(x, t);
}

Mat TruthDenoiser::jacobian(const Vec& x, double t) const {
  const double var = sched_.sigma2(t);
  Mat j = var * score_derivatives_at_var(gm_, x, var).jacobian;
  j.diagonal().array() += 1.0;
  return j;
}

Vec ScoreFromDenoiser::operator()(const Vec& x, double t) const {
  return ((*h_)(x, t) - x) / sched_.sigma2(t);
}

Mat ScoreFromDenoiser::jacobian(const Vec& x, double t) const {
  Mat j = h_->jacobian(x, t);
  j.diagonal().array() -= 1.0;
  return j / sched_.sigma2(t);
}

Vec DenoiserFromScore::operator()(const Vec& x, double t) const {
  return x + sched_.sigma2(t) * (*s_)(x, t);
}

Mat DenoiserFromScore::jacobian(const Vec& x, double t) const {
  Mat j = sched_.sigma2(t) * s_->jacobian(x, t);
  j.diagonal().array() += 1.0;
  return j;
}

PerturbedField::PerturbedField(FieldPtr base, FieldPtr perturbation, double eps)
    : base_(std::move(base)), p_(std::move(perturbation)), eps_(eps) {
  if (base_->dim() != p_->dim()) throw ShapeError("perturbation dimension mismatch");
}

Vec PerturbedField::operator()(const Vec& x, double t) const {
  Vec v = (*base_)(x, t);
  if (eps_ != 0.0) v += eps_ * (*p_)(x, t);
  return v;
}

Mat PerturbedField::jacobian(const Vec& x, double t) const {
  Mat j = base_->jacobian(x, t);
  if (eps_ != 0.0) j += eps_ * p_->jacobian(x, t);
  return j;
}

FieldPtr linear_field(const Mat& a) {
  if (a.rows() != a.cols()) throw ShapeError("linear field needs a square matrix");
  return std::make_shared<FunctionField>(
      static_cast<int>(a.rows()), [a](const Vec& x, double) -> Vec { return a * x; },
      [a](const Vec&, double) -> Mat { return a; });
}

FieldPtr zero_field(int dim) { return linear_field(Mat::Zero(dim, dim)); }

FieldPtr constant_field(const Vec& c) {
  const auto d = static_cast<int>(c.size());
  return std::make_shared<FunctionField>(
      d, [c](const Vec&, double) -> Vec { return c; },
      [d](const Vec&, double) -> Mat { return Mat::Zero(d, d); });
}

FieldPtr truth_score(const GaussianMixture& gm, const Schedule& sched) {
  return std::make_shared<TruthScore>(gm, sched);
}

FieldPtr truth_denoiser(const GaussianMixture& gm, const Schedule& sched) {
  return std::make_shared<TruthDenoiser>(gm, sched);
}

}  // namespace conlab
