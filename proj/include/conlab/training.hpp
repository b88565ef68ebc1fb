#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "conlab/common.hpp"
#include "conlab/dynamics.hpp"
#include "conlab/field.hpp"
#include "conlab/mixture.hpp"
#include "conlab/model.hpp"
#include "conlab/rng.hpp"
#include "conlab/schedule.hpp"

namespace conlab {

struct LossResult {
  double loss = 0;     // weighted total
  double dsm = 0;      // unweighted DSM term (0 when not part of the objective)
  double reg = 0;      // unweighted regularizer / distillation term
  double loss_stderr = 0;  // batch stderr of the main per-example term
  Vec grad;            // d loss / d theta
};

/// A DSM batch: clean data, times and the noise used to perturb.
struct DsmBatch {
  Mat x0, eps;  // D x B
  std::vector<double> ts;
  Mat noisy(const Schedule& sched) const;
};

/// x0 ~ data, t ~ U[t0, T], eps ~ N(0, I), drawn in that order per example.
DsmBatch draw_dsm_batch(const GaussianMixture& gm, const Schedule& sched, std::size_t batch_size,
                        CounterRng& rng);

/// mean_b sigma^2 ||s(x0 + sigma eps, t) + eps / sigma||^2 for any score field.
double dsm_loss_field(const VectorField& score, const Schedule& sched, const DsmBatch& batch,
                      double* stderr_out = nullptr);

LossResult dsm_loss(const Model& m, const DsmBatch& batch);
LossResult dsm_loss(const Model& m, const GaussianMixture& gm, std::size_t batch_size, CounterRng& rng);

struct LossWeights {
  double dsm = 1.0;
  double reg = 1.0;
};

struct CdmOptions {
  std::vector<double> t_grid;   // increasing; pairs are adjacent nodes
  std::size_t n_points = 16;    // regularizer points per step
  std::size_t n_paths = 16;
  int n_steps = 4;              // lambda-SDE steps between adjacent nodes
  double lambda = 1.0;
};

/// MC mean of h(x(t'), t') over lambda-SDE paths driven by the model itself.
Vec cdm_target(const Model& h, const Vec& x, double t, double t_prime, double lambda,
               std::size_t n_paths, int n_steps, std::uint64_t seed);

/// 1/2 ||h(x, t) - target||^2 with the target held constant. Adds
/// reg_scale * d/dtheta to grad when grad is non-null.
double cdm_regularizer(const Model& h, const Vec& x, double t, const Vec& target,
                       double reg_scale = 0, Vec* grad = nullptr);

/// DSM batch from rng; regularizer randomness from a separate substream of
/// the same (seed, stream), so reg weight 0 reproduces dsm_loss exactly.
LossResult cdm_regularized_step(const Model& h, const GaussianMixture& gm, std::size_t batch_size,
                                const CdmOptions& opt, CounterRng& rng, const LossWeights& w);

/// 1/2 mean ||f(x_t, t) - f_target(x_t', t')||^2 for given pairs.
LossResult cm_loss_on_pairs(const Model& student, const Model& target, const Mat& x_t,
                            const std::vector<double>& ts, const Mat& x_tp,
                            const std::vector<double>& tps);

/// Draws x_t ~ q_t at adjacent grid nodes t > t', takes one Heun step of the
/// teacher PF ODE to t', and evaluates cm_loss_on_pairs.
LossResult cm_distill_step(const Model& student, const Model& target, const VectorField& teacher,
                           const GaussianMixture& gm, const std::vector<double>& t_grid,
                           std::size_t batch_size, CounterRng& rng);

/// target <- mu * target + (1 - mu) * student
void ema_update(Model& target, const Model& student, double mu);

struct FpOptions {
  double spatial_step = 1e-2;
  double time_step = 1e-3;
  std::size_t n_points = 0;  // 0 means the DSM batch points are reused
};

/// mean ||r||^2 of the Jacobian-form FPE residual of the model score, every
/// derivative taken by central differences over network evaluations. Adds
/// reg_scale * d/dtheta to grad when grad is non-null.
double fp_regularizer(const Model& s, const Mat& x, const std::vector<double>& ts,
                      const FpOptions& opt, double reg_scale = 0, Vec* grad = nullptr);

/// The same stencil residual for any score field (value only).
double fp_regularizer_field(const VectorField& s, const Schedule& sched, const Mat& x,
                            const std::vector<double>& ts, const FpOptions& opt);

LossResult fp_regularized_step(const Model& s, const GaussianMixture& gm, std::size_t batch_size,
                               const FpOptions& opt, CounterRng& rng, const LossWeights& w);

enum class OptimizerKind { Adam, Sgd };

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Vec& params, const Vec& grad);

 private:
  OptimizerKind kind_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  Vec m_, v_;
};

enum class TrainMethod { Dsm, Cdm, Cm, Fp };
std::string to_string(TrainMethod m);
TrainMethod train_method_from_string(const std::string& s);

struct TrainConfig {
  TrainMethod method = TrainMethod::Dsm;
  std::size_t steps = 5000;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::vector<int> hidden{64, 64};
  TimeFeatures features = TimeFeatures::LogSigmaPair;
  LossWeights weights;
  std::size_t t_grid_points = 32;  // uniform grid on [t0, T] for cdm and cm
  CdmOptions cdm;                  // t_grid filled from t_grid_points
  FpOptions fp;
  double ema_mu = 0.99;
  std::size_t log_every = 1;       // history stride
};

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0, dsm = 0, reg = 0;
};

struct Checkpoint {
  Model model;
  std::string config_hash;
};

struct TrainResult {
  Checkpoint checkpoint;  // final, or last good when aborted
  std::vector<StepMetrics> history;
  bool aborted = false;
  std::string error;
};

/// Parametrization used by each method: dsm and fp train a score, cdm a
/// denoiser, cm a consistency function distilled from `teacher` (the exact
/// score when null).
ParamKind method_param_kind(TrainMethod m);

TrainResult train(const TrainConfig& cfg, const GaussianMixture& gm, const Schedule& sched,
                  const FieldPtr& teacher = nullptr, const std::string& config_hash = "");

struct EvalConfig {
  std::size_t n_eval = 2000;
  std::vector<double> t_grid{0.5, 1.0, 2.0, 4.0};
  std::size_t residual_points = 100;
  double spatial_step = 1e-3;
  double time_step = 1e-4;
  int ode_steps = 200;
  int n_projections = 64;
  std::uint64_t seed = 1;
};

struct EvalMetrics {
  std::optional<double> score_mse;
  std::optional<double> score_mse_stderr;
  std::optional<double> fpe_residual;
  std::vector<double> score_mse_by_t;  // aligned with EvalConfig::t_grid
  std::vector<double> fpe_residual_by_t;
  double sliced_wasserstein = 0;
};

/// Score error and FPE residual of `score` (null for a consistency model),
/// and sliced Wasserstein distance of `sampler` outputs to fresh data.
EvalMetrics evaluate_fields(const FieldPtr& score, const FieldPtr& consistency_fn,
                            const GaussianMixture& gm, const Schedule& sched, const EvalConfig& cfg);
EvalMetrics evaluate_model(const Model& m, const GaussianMixture& gm, const EvalConfig& cfg);

/// Samples: q_T draws pushed to t0 by the PF ODE (score) or one call f(x, T).
std::vector<Vec> generate_samples(const FieldPtr& score, const FieldPtr& consistency_fn,
                                  const GaussianMixture& gm, const Schedule& sched, std::size_t n,
                                  int ode_steps, std::uint64_t seed, Solver method = Solver::Heun);

std::string checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace conlab
