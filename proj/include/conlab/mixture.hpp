#pragma once

#include <cstdint>
#include <vector>

#include "conlab/common.hpp"
#include "conlab/rng.hpp"
#include "conlab/schedule.hpp"

namespace conlab {

/// Diagonal-covariance Gaussian mixture used as q_data.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<Vec> means, std::vector<Vec> variances);

  static GaussianMixture single(const Vec& mean, const Vec& variance);
  /// One-dimensional standard normal.
  static GaussianMixture standard_normal_1d();

  int dim() const { return dim_; }
  int components() const { return static_cast<int>(weights_.size()); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vec>& means() const { return means_; }
  const std::vector<Vec>& variances() const { return variances_; }

  Vec mean() const;
  /// Per-coordinate variance of the mixture after adding `noise_var` to every component.
  Vec marginal_variance(double noise_var = 0.0) const;

 private:
  std::vector<double> weights_;
  std::vector<Vec> means_;
  std::vector<Vec> variances_;
  int dim_;
};

struct ScoreDerivatives {
  Mat jacobian;
  double divergence = 0.0;
  double score_sq = 0.0;
};

// Closed-form quantities of q_t = q_data * N(0, sigma^2(t) I). The *_at_var
// overloads take sigma^2 directly and skip the schedule.

double log_qt_at_var(const GaussianMixture& gm, const Vec& x, double noise_var);
Vec score_at_var(const GaussianMixture& gm, const Vec& x, double noise_var);
ScoreDerivatives score_derivatives_at_var(const GaussianMixture& gm, const Vec& x, double noise_var);

double log_qt(const GaussianMixture& gm, const Schedule& sched, const Vec& x, double t);
Vec score(const GaussianMixture& gm, const Schedule& sched, const Vec& x, double t);
ScoreDerivatives score_derivatives(const GaussianMixture& gm, const Schedule& sched, const Vec& x,
                                   double t);
/// Tweedie denoiser h(x,t) = x + sigma^2(t) s(x,t).
Vec denoiser(const GaussianMixture& gm, const Schedule& sched, const Vec& x, double t);

/// n i.i.d. samples: categorical component draw, then a diagonal Gaussian.
std::vector<Vec> sample_data(const GaussianMixture& gm, std::size_t n, std::uint64_t seed);
Vec sample_one(const GaussianMixture& gm, CounterRng& rng);

/// Exact draw from the forward-SDE marginal given x0: x0 + sigma(t) eps.
Vec perturb_forward(const Vec& x0, const Schedule& sched, double t, CounterRng& rng);

}  // namespace conlab
