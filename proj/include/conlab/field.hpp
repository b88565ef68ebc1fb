#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "conlab/common.hpp"
#include "conlab/mixture.hpp"
#include "conlab/schedule.hpp"

namespace conlab {

/// A time-dependent map (x, t) -> R^D: a score, a denoiser or a consistency
/// function. Fields that know their spatial Jacobian in closed form say so
/// through has_jacobian(); everything else falls back to finite differences.
class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual int dim() const = 0;
  virtual Vec operator()(const Vec& x, double t) const = 0;
  virtual bool has_jacobian() const { return false; }
  /// Throws UsageError unless has_jacobian().
  virtual Mat jacobian(const Vec& x, double t) const;
};

using FieldPtr = std::shared_ptr<const VectorField>;

class FunctionField final : public VectorField {
 public:
  using ValueFn = std::function<Vec(const Vec&, double)>;
  using JacobianFn = std::function<Mat(const Vec&, double)>;

  FunctionField(int dim, ValueFn value, JacobianFn jacobian = {});

  int dim() const override { return dim_; }
  Vec operator()(const Vec& x, double t) const override { return value_(x, t); }
  bool has_jacobian() const override { return static_cast<bool>(jacobian_); }
  Mat jacobian(const Vec& x, double t) const override;

 private:
  int dim_;
  ValueFn value_;
  JacobianFn jacobian_;
};

/// Ground-truth score of the noised mixture.
class TruthScore final : public VectorField {
 public:
  TruthScore(GaussianMixture gm, Schedule sched) : gm_(std::move(gm)), sched_(sched) {}
  int dim() const override { return gm_.dim(); }
  Vec operator()(const Vec& x, double t) const override { return score(gm_, sched_, x, t); }
  bool has_jacobian() const override { return true; }
  Mat jacobian(const Vec& x, double t) const override {
    return score_derivatives(gm_, sched_, x, t).jacobian;
  }

  const GaussianMixture& mixture() const { return gm_; }
  const Schedule& schedule() const { return sched_; }

 private:
  GaussianMixture gm_;
  Schedule sched_;
};

/// Ground-truth Tweedie denoiser h = x + sigma^2 s.
class TruthDenoiser final : public VectorField {
 public:
  TruthDenoiser(GaussianMixture gm, Schedule sched) : gm_(std::move(gm)), sched_(sched) {}
  int dim() const override { return gm_.dim(); }
  Vec operator()(const Vec& x, double t) const override { return denoiser(gm_, sched_, x, t); }
  bool has_jacobian() const override { return true; }
  Mat jacobian(const Vec& x, double t) const override;

 private:
  GaussianMixture gm_;
  Schedule sched_;
};

/// s = (h - x) / sigma^2 for a denoiser h.
class ScoreFromDenoiser final : public VectorField {
 public:
  ScoreFromDenoiser(FieldPtr denoiser, Schedule sched) : h_(std::move(denoiser)), sched_(sched) {}
  int dim() const override { return h_->dim(); }
  Vec operator()(const Vec& x, double t) const override;
  bool has_jacobian() const override { return h_->has_jacobian(); }
  Mat jacobian(const Vec& x, double t) const override;

 private:
  FieldPtr h_;
  Schedule sched_;
};

/// h = x + sigma^2 s for a score s.
class DenoiserFromScore final : public VectorField {
 public:
  DenoiserFromScore(FieldPtr score, Schedule sched) : s_(std::move(score)), sched_(sched) {}
  int dim() const override { return s_->dim(); }
  Vec operator()(const Vec& x, double t) const override;
  bool has_jacobian() const override { return s_->has_jacobian(); }
  Mat jacobian(const Vec& x, double t) const override;

 private:
  FieldPtr s_;
  Schedule sched_;
};

/// base + eps * perturbation.
class PerturbedField final : public VectorField {
 public:
  PerturbedField(FieldPtr base, FieldPtr perturbation, double eps);
  int dim() const override { return base_->dim(); }
  Vec operator()(const Vec& x, double t) const override;
  bool has_jacobian() const override {
    return base_->has_jacobian() && (eps_ == 0.0 || p_->has_jacobian());
  }
  Mat jacobian(const Vec& x, double t) const override;

 private:
  FieldPtr base_;
  FieldPtr p_;
  double eps_;
};

/// Time-independent linear field x -> A x.
FieldPtr linear_field(const Mat& a);
FieldPtr zero_field(int dim);
/// Constant field x -> c.
FieldPtr constant_field(const Vec& c);

FieldPtr truth_score(const GaussianMixture& gm, const Schedule& sched);
FieldPtr truth_denoiser(const GaussianMixture& gm, const Schedule& sched);

}  // namespace conlab
