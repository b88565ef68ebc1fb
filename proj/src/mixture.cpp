#include "conlab/mixture.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace conlab {

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<Vec> means,
                                 std::vector<Vec> variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
  const auto k = weights_.size();
  if (k == 0) throw ShapeError("mixture: need at least one component");
  if (means_.size() != k || variances_.size() != k)
    throw ShapeError("mixture: weights, means and variances must have the same length");
  dim_ = static_cast<int>(means_[0].size());
  if (dim_ < 1) throw ShapeError("mixture: dimension must be at least 1");
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(weights_[i] > 0.0)) throw DomainError("mixture: weights must be positive");
    if (means_[i].size() != dim_ || variances_[i].size() != dim_)
      throw ShapeError("mixture: component " + std::to_string(i) + " has the wrong dimension");
    if (!(variances_[i].array() > 0.0).all())
      throw DomainError("mixture: variances must be positive");
    total += weights_[i];
  }
  if (std::abs(total - 1.0) > 1e-12) throw DomainError("mixture: weights must sum to 1");
}

GaussianMixture GaussianMixture::single(const Vec& mean, const Vec& variance) {
  return GaussianMixture({1.0}, {mean}, {variance});
}

GaussianMixture GaussianMixture::standard_normal_1d() {
  return single(Vec::Zero(1), Vec::Ones(1));
}

Vec GaussianMixture::mean() const {
  Vec m = Vec::Zero(dim_);
  for (int k = 0; k < components(); ++k) m += weights_[k] * means_[k];
  return m;
}

Vec GaussianMixture::marginal_variance(double noise_var) const {
  const Vec m = mean();
  Vec second = Vec::Zero(dim_);
  for (int k = 0; k < components(); ++k)
    second += weights_[k] * ((variances_[k].array() + noise_var) + means_[k].array().square()).matrix();
  return (second.array() - m.array().square()).matrix();
}

namespace {

void check_dim(const GaussianMixture& gm, const Vec& x) {
  if (x.size() != gm.dim())
    throw ShapeError("point has dimension " + std::to_string(x.size()) + ", mixture has " +
                     std::to_string(gm.dim()));
}

// Per-component log joint log(w_k N(x; mu_k, v_k + noise_var)).
std::vector<double> component_log_joint(const GaussianMixture& gm, const Vec& x, double noise_var) {
  std::vector<double> out(gm.components());
  for (int k = 0; k < gm.components(); ++k) {
    const auto c = gm.variances()[k].array() + noise_var;
    const auto d = x.array() - gm.means()[k].array();
    out[k] = std::log(gm.weights()[k]) -
             0.5 * ((2.0 * std::numbers::pi * c).log() + d.square() / c).sum();
  }
  return out;
}

double log_sum_exp(const std::vector<double>& v) {
  double m = v[0];
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

std::vector<double> responsibilities(const std::vector<double>& log_joint) {
  const double lse = log_sum_exp(log_joint);
  std::vector<double> r(log_joint.size());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = std::exp(log_joint[k] - lse);
  return r;
}

}  // namespace

double log_qt_at_var(const GaussianMixture& gm, const Vec& x, double noise_var) {
  check_dim(gm, x);
  return log_sum_exp(component_log_joint(gm, x, noise_var));
}

Vec score_at_var(const GaussianMixture& gm, const Vec& x, double noise_var) {
  check_dim(gm, x);
  const auto r = responsibilities(component_log_joint(gm, x, noise_var));
  Vec s = Vec::Zero(gm.dim());
  for (int k = 0; k < gm.components(); ++k)
    s.array() -= r[k] * (x - gm.means()[k]).array() / (gm.variances()[k].array() + noise_var);
  return s;
}

ScoreDerivatives score_derivatives_at_var(const GaussianMixture& gm, const Vec& x,
                                          double noise_var) {
  check_dim(gm, x);
  const int d = gm.dim();
  const auto r = responsibilities(component_log_joint(gm, x, noise_var));
  // J = sum_k r_k (a_k a_k^T - diag(1/c_k)) - s s^T, with a_k = -(x - mu_k) / c_k.
  Vec s = Vec::Zero(d);
  Mat second = Mat::Zero(d, d);
  Vec diag = Vec::Zero(d);
  for (int k = 0; k < gm.components(); ++k) {
    const Vec c = gm.variances()[k].array() + noise_var;
    const Vec a = -((x - gm.means()[k]).array() / c.array()).matrix();
    s += r[k] * a;
    second.noalias() += r[k] * a * a.transpose();
    diag += r[k] * c.cwiseInverse();
  }
  ScoreDerivatives out;
  out.jacobian = second - s * s.transpose();
  out.jacobian.diagonal() -= diag;
  out.divergence = out.jacobian.trace();
  out.score_sq = s.squaredNorm();
  return out;
}

double log_qt(const GaussianMixture& gm, const Schedule& sched, const Vec& x, double t) {
  return log_qt_at_var(gm, x, sched.sigma2(t));
}

Vec score(const GaussianMixture& gm, const Schedule& sched, const Vec& x, double t) {
  return score_at_var(gm, x, sched.sigma2(t));
}

ScoreDerivatives score_derivatives(const GaussianMixture& gm, const Schedule& sched, const Vec& x,
                                   double t) {
  return score_derivatives_at_var(gm, x, sched.sigma2(t));
}

Vec denoiser(const GaussianMixture& gm, const Schedule& sched, const Vec& x, double t) {
  const double var = sched.sigma2(t);
  return x + var * score_at_var(gm, x, var);
}

Vec sample_one(const GaussianMixture& gm, CounterRng& rng) {
  const double u = rng.uniform();
  int k = 0;
  double cumulative = gm.weights()[0];
  while (k + 1 < gm.components() && u >= cumulative) cumulative += gm.weights()[++k];
  Vec x(gm.dim());
  for (int j = 0; j < gm.dim(); ++j)
    x[j] = gm.means()[k][j] + std::sqrt(gm.variances()[k][j]) * rng.normal();
  return x;
}

std::vector<Vec> sample_data(const GaussianMixture& gm, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("sample_data: n must be at least 1");
  auto rng = rng_substream(seed, 0);
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_one(gm, rng));
  return out;
}

Vec perturb_forward(const Vec& x0, const Schedule& sched, double t, CounterRng& rng) {
  const double sigma = sched.sigma(t);
  Vec x = x0;
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += sigma * rng.normal();
  return x;
}

}  // namespace conlab
