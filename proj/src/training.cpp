#include "conlab/training.hpp"

#include <cmath>
#include <array>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "conlab/consistency.hpp"
#include "conlab/dynamics.hpp"
#include "conlab/residuals.hpp"
#include "conlab/stats.hpp"

namespace conlab {

namespace {

std::size_t pick_pair(std::size_t grid_size, CounterRng& rng) {
  if (grid_size < 2) throw UsageError("a time grid needs at least two nodes");
  const auto n = static_cast<std::size_t>(rng.uniform() * static_cast<double>(grid_size - 1));
  return 1 + std::min(n, grid_size - 2);
}

void require_finite(double loss, const char* what, std::size_t batch, const Mat& x,
                    const std::vector<double>& ts) {
  if (std::isfinite(loss)) return;
  double tmin = ts.empty() ? 0 : ts[0], tmax = tmin;
  for (double t : ts) tmin = std::min(tmin, t), tmax = std::max(tmax, t);
  std::ostringstream msg;
  msg << what << " loss is not finite (batch " << batch << ", max |x| " << x.cwiseAbs().maxCoeff()
      << ", t in [" << tmin << ", " << tmax << "])";
  throw TrainingError(msg.str());
}

}  // namespace

Mat DsmBatch::noisy(const Schedule& sched) const {
  Mat x = x0;
  for (Eigen::Index c = 0; c < x.cols(); ++c) x.col(c) += sched.sigma(ts[static_cast<std::size_t>(c)]) * eps.col(c);
  return x;
}

DsmBatch draw_dsm_batch(const GaussianMixture& gm, const Schedule& sched, std::size_t batch_size,
                        CounterRng& rng) {
  if (batch_size == 0) throw UsageError("batch_size must be at least 1");
  const int d = gm.dim();
  DsmBatch b;
  b.x0.resize(d, static_cast<Eigen::Index>(batch_size));
  b.eps.resize(d, static_cast<Eigen::Index>(batch_size));
  b.ts.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    b.x0.col(c) = sample_one(gm, rng);
    b.ts[i] = sched.t0() + (sched.T() - sched.t0()) * rng.uniform();
    for (int j = 0; j < d; ++j) b.eps(j, c) = rng.normal();
  }
  return b;
}

double dsm_loss_field(const VectorField& score, const Schedule& sched, const DsmBatch& batch,
                      double* stderr_out) {
  const Mat x = batch.noisy(sched);
  std::vector<Vec> per(batch.ts.size());
  for (std::size_t i = 0; i < per.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const double sig = sched.sigma(batch.ts[i]);
    const Vec r = score(x.col(c), batch.ts[i]) + batch.eps.col(c) / sig;
    per[i] = Vec::Constant(1, sig * sig * r.squaredNorm());
  }
  const auto est = summarize(per);
  if (stderr_out) *stderr_out = est.stderr_[0];
  return est.mean[0];
}

LossResult dsm_loss(const Model& m, const DsmBatch& batch) {
  if (m.kind == ParamKind::Consistency) throw UsageError("DSM needs a score or denoiser model");
  const Schedule& sched = m.schedule;
  const Mat x = batch.noisy(sched);
  Mlp::Tape tape;
  const Mat s = m.net.forward(m.inputs(x, batch.ts), tape);  // the score for both kinds
  const auto n = static_cast<double>(batch.ts.size());
  Mat grad_out(s.rows(), s.cols());
  std::vector<Vec> per(batch.ts.size());
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    const double sig = sched.sigma(batch.ts[static_cast<std::size_t>(c)]);
    const Vec r = s.col(c) + batch.eps.col(c) / sig;
    per[static_cast<std::size_t>(c)] = Vec::Constant(1, sig * sig * r.squaredNorm());
    grad_out.col(c) = (2.0 * sig * sig / n) * r;
  }
  const auto est = summarize(per);
  LossResult out;
  out.dsm = out.loss = est.mean[0];
  out.loss_stderr = est.stderr_[0];
  require_finite(out.loss, "DSM", batch.ts.size(), x, batch.ts);
  out.grad = Vec::Zero(static_cast<Eigen::Index>(m.net.num_params()));
  m.net.backward(tape, grad_out, out.grad);
  return out;
}

LossResult dsm_loss(const Model& m, const GaussianMixture& gm, std::size_t batch_size, CounterRng& rng) {
  return dsm_loss(m, draw_dsm_batch(gm, m.schedule, batch_size, rng));
}

Vec cdm_target(const Model& h, const Vec& x, double t, double t_prime, double lambda,
               std::size_t n_paths, int n_steps, std::uint64_t seed) {
  if (h.kind != ParamKind::Denoiser) throw UsageError("the CDM regularizer needs a denoiser model");
  try {
    return martingale_gap(model_field(h), h.schedule, x, t, t_prime, lambda, n_paths, n_steps, seed)
        .estimate.mean;
  } catch (const IntegrationError& e) {
    throw TrainingError(std::string("CDM target: ") + e.what());
  }
}

double cdm_regularizer(const Model& h, const Vec& x, double t, const Vec& target, double reg_scale,
                       Vec* grad) {
  Mlp::Tape tape;
  const Mat hx = h.forward(x, {t}, tape);
  const Vec diff = hx.col(0) - target;
  if (grad) {
    if (grad->size() == 0) *grad = Vec::Zero(static_cast<Eigen::Index>(h.net.num_params()));
    h.backward(tape, {t}, reg_scale * diff, *grad);
  }
  return 0.5 * diff.squaredNorm();
}

LossResult cdm_regularized_step(const Model& h, const GaussianMixture& gm, std::size_t batch_size,
                                const CdmOptions& opt, CounterRng& rng, const LossWeights& w) {
  LossResult out = dsm_loss(h, gm, batch_size, rng);
  out.grad *= w.dsm;
  out.loss = w.dsm * out.dsm;
  if (w.reg == 0.0 || opt.n_points == 0) return out;

  auto reg_rng = rng_substream(derive_seed(rng.seed(), "cdm-regularizer"), rng.stream_id());
  std::vector<double> vals(opt.n_points);
  const double scale = w.reg / static_cast<double>(opt.n_points);
  for (std::size_t i = 0; i < opt.n_points; ++i) {
    const std::size_t n = pick_pair(opt.t_grid.size(), reg_rng);
    const double t = opt.t_grid[n], tp = opt.t_grid[n - 1];
    const Vec x = perturb_forward(sample_one(gm, reg_rng), h.schedule, t, reg_rng);
    const Vec target = cdm_target(h, x, t, tp, opt.lambda, opt.n_paths, opt.n_steps, reg_rng.next_u64());
    vals[i] = cdm_regularizer(h, x, t, target, scale, &out.grad);
  }
  out.reg = pairwise_sum(vals) / static_cast<double>(vals.size());
  out.loss += w.reg * out.reg;
  if (!std::isfinite(out.loss)) throw TrainingError("CDM regularizer is not finite");
  return out;
}

LossResult cm_loss_on_pairs(const Model& student, const Model& target, const Mat& x_t,
                            const std::vector<double>& ts, const Mat& x_tp,
                            const std::vector<double>& tps) {
  if (student.kind != ParamKind::Consistency || target.kind != ParamKind::Consistency)
    throw UsageError("consistency distillation needs consistency models");
  Mlp::Tape tape;
  const Mat fs = student.forward(x_t, ts, tape);
  const Mat ft = target.forward(x_tp, tps);
  const Mat diff = fs - ft;
  const auto n = static_cast<double>(ts.size());
  std::vector<double> per(ts.size());
  for (std::size_t i = 0; i < per.size(); ++i) per[i] = 0.5 * diff.col(static_cast<Eigen::Index>(i)).squaredNorm();
  LossResult out;
  out.reg = out.loss = pairwise_sum(per) / n;
  require_finite(out.loss, "CM", ts.size(), x_t, ts);
  out.grad = Vec::Zero(static_cast<Eigen::Index>(student.net.num_params()));
  student.backward(tape, ts, diff / n, out.grad);
  return out;
}

LossResult cm_distill_step(const Model& student, const Model& target, const VectorField& teacher,
                           const GaussianMixture& gm, const std::vector<double>& t_grid,
                           std::size_t batch_size, CounterRng& rng) {
  if (batch_size == 0) throw UsageError("batch_size must be at least 1");
  const Schedule& sched = student.schedule;
  const int d = gm.dim();
  Mat xt(d, static_cast<Eigen::Index>(batch_size)), xtp(d, static_cast<Eigen::Index>(batch_size));
  std::vector<double> ts(batch_size), tps(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t n = pick_pair(t_grid.size(), rng);
    ts[i] = t_grid[n];
    tps[i] = t_grid[n - 1];
    xt.col(static_cast<Eigen::Index>(i)) = perturb_forward(sample_one(gm, rng), sched, ts[i], rng);
  }
  parallel_for(batch_size, [&](std::size_t i) {
    const auto c = static_cast<Eigen::Index>(i);
    xtp.col(c) = pf_ode_heun_step(teacher, sched, xt.col(c), ts[i], tps[i]);
  });
  return cm_loss_on_pairs(student, target, xt, ts, xtp, tps);
}

void ema_update(Model& target, const Model& student, double mu) {
  if (target.net.num_params() != student.net.num_params()) throw ShapeError("EMA models differ in size");
  target.net.params() = mu * target.net.params() + (1.0 - mu) * student.net.params();
}

namespace {

// Stencil layout per point: center, then (x + d e_j, x - d e_j) for each j,
// then two extra time nodes. The time derivative is a weighted sum over
// (center, time nodes) with second-order central or one-sided weights.
struct FpStencil {
  int d = 0;
  std::size_t per_point = 0;
  Mat x;                  // d x (B * per_point)
  std::vector<double> ts;
  std::vector<std::array<double, 3>> tw;  // weights for center, time node 1, time node 2
};

FpStencil build_fp_stencil(const Schedule& sched, const Mat& x, const std::vector<double>& ts,
                           const FpOptions& opt) {
  if (!(opt.spatial_step > 0) || !(opt.time_step > 0)) throw DomainError("stencil steps must be positive");
  const double tau = opt.time_step, del = opt.spatial_step;
  if (sched.T() - sched.t0() < 2 * tau) throw DomainError("time stencil does not fit in [t0, T]");
  FpStencil st;
  st.d = static_cast<int>(x.rows());
  st.per_point = 1 + 2 * static_cast<std::size_t>(st.d) + 2;
  const std::size_t B = ts.size();
  st.x.resize(st.d, static_cast<Eigen::Index>(B * st.per_point));
  st.ts.resize(B * st.per_point);
  st.tw.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double t = ts[b];
    sched.check_time(t);
    const Vec xc = x.col(static_cast<Eigen::Index>(b));
    std::size_t k = b * st.per_point;
    auto put = [&](const Vec& v, double tt) {
      st.x.col(static_cast<Eigen::Index>(k)) = v;
      st.ts[k++] = tt;
    };
    put(xc, t);
    for (int j = 0; j < st.d; ++j) {
      Vec xp = xc, xm = xc;
      xp[j] += del;
      xm[j] -= del;
      put(xp, t);
      put(xm, t);
    }
    if (t - tau >= sched.t0() && t + tau <= sched.T()) {
      put(xc, t + tau);
      put(xc, t - tau);
      st.tw[b] = {0.0, 0.5 / tau, -0.5 / tau};
    } else if (t - tau < sched.t0()) {
      put(xc, t + tau);
      put(xc, t + 2 * tau);
      st.tw[b] = {-1.5 / tau, 2.0 / tau, -0.5 / tau};
    } else {
      put(xc, t - tau);
      put(xc, t - 2 * tau);
      st.tw[b] = {1.5 / tau, -2.0 / tau, 0.5 / tau};
    }
  }
  return st;
}

// Residuals per point from stencil values, in extended precision since the
// stencils amplify rounding by 1/del^2. Fills d(scale * sum_b ||r_b||^2)
// w.r.t. the values when grad_vals is non-null.
long double fp_residual_sum(const FpStencil& st, const Schedule& sched, const std::vector<double>& ts,
                            const Mlp::MatX& s, double del, double scale, Mat* grad_vals) {
  using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  using LMat = Mlp::MatX;
  const int d = st.d;
  const std::size_t B = ts.size();
  const long double dl = del;
  long double total = 0;
  if (grad_vals) grad_vals->setZero(s.rows(), s.cols());
  for (std::size_t b = 0; b < B; ++b) {
    const auto base = static_cast<Eigen::Index>(b * st.per_point);
    const long double g2 = sched.g2(ts[b]);
    const LVec sc = s.col(base);
    const auto& w = st.tw[b];
    const auto t1 = base + 1 + 2 * d, t2 = t1 + 1;
    const LVec dt = static_cast<long double>(w[0]) * sc + static_cast<long double>(w[1]) * s.col(t1) +
                    static_cast<long double>(w[2]) * s.col(t2);
    LVec lap = LVec::Zero(d);
    LMat jac(d, d);
    for (int j = 0; j < d; ++j) {
      const LVec sp = s.col(base + 1 + 2 * j), sm = s.col(base + 2 + 2 * j);
      lap += (sp - 2.0L * sc + sm) / (dl * dl);
      jac.col(j) = (sp - sm) / (2.0L * dl);
    }
    const LVec r = dt - 0.5L * g2 * lap - g2 * (jac * sc);
    total += r.squaredNorm();
    if (!grad_vals) continue;
    const LVec u = 2.0L * static_cast<long double>(scale) * r;
    const LVec gc = static_cast<long double>(w[0]) * u + (g2 * d / (dl * dl)) * u - g2 * (jac.transpose() * u);
    grad_vals->col(base) += gc.cast<double>();
    grad_vals->col(t1) += (static_cast<long double>(w[1]) * u).cast<double>();
    grad_vals->col(t2) += (static_cast<long double>(w[2]) * u).cast<double>();
    for (int j = 0; j < d; ++j) {
      const LVec common = (-0.5L * g2 / (dl * dl)) * u;
      const LVec cross = (g2 * sc[j] / (2.0L * dl)) * u;
      grad_vals->col(base + 1 + 2 * j) += (common - cross).cast<double>();
      grad_vals->col(base + 2 + 2 * j) += (common + cross).cast<double>();
    }
  }
  return total;
}

}  // namespace

double fp_regularizer(const Model& m, const Mat& x, const std::vector<double>& ts, const FpOptions& opt,
                      double reg_scale, Vec* grad) {
  if (m.kind == ParamKind::Consistency) throw UsageError("the FP regularizer needs a score model");
  if (ts.empty()) return 0.0;
  const auto st = build_fp_stencil(m.schedule, x, ts, opt);
  Mlp::Tape tape;
  const Mlp::MatX s = m.net.forward_extended(m.inputs(st.x, st.ts), tape);
  const double n = static_cast<double>(ts.size());
  Mat gv;
  const long double total = fp_residual_sum(st, m.schedule, ts, s, opt.spatial_step, reg_scale / n, grad ? &gv : nullptr);
  if (grad) {
    if (grad->size() == 0) *grad = Vec::Zero(static_cast<Eigen::Index>(m.net.num_params()));
    m.net.backward(tape, gv, *grad);
  }
  return static_cast<double>(total / n);
}

double fp_regularizer_field(const VectorField& field, const Schedule& sched, const Mat& x,
                            const std::vector<double>& ts, const FpOptions& opt) {
  if (ts.empty()) return 0.0;
  const auto st = build_fp_stencil(sched, x, ts, opt);
  Mat s(x.rows(), st.x.cols());
  for (Eigen::Index c = 0; c < st.x.cols(); ++c) s.col(c) = field(st.x.col(c), st.ts[static_cast<std::size_t>(c)]);
  const long double total = fp_residual_sum(st, sched, ts, s.cast<long double>(), opt.spatial_step, 0.0, nullptr);
  return static_cast<double>(total / static_cast<long double>(ts.size()));
}

LossResult fp_regularized_step(const Model& m, const GaussianMixture& gm, std::size_t batch_size,
                               const FpOptions& opt, CounterRng& rng, const LossWeights& w) {
  const auto batch = draw_dsm_batch(gm, m.schedule, batch_size, rng);
  LossResult out = dsm_loss(m, batch);
  out.grad *= w.dsm;
  out.loss = w.dsm * out.dsm;
  if (w.reg == 0.0) return out;
  Mat x;
  std::vector<double> ts;
  if (opt.n_points == 0) {
    x = batch.noisy(m.schedule);
    ts = batch.ts;
  } else {
    auto reg_rng = rng_substream(derive_seed(rng.seed(), "fp-regularizer"), rng.stream_id());
    const auto extra = draw_dsm_batch(gm, m.schedule, opt.n_points, reg_rng);
    x = extra.noisy(m.schedule);
    ts = extra.ts;
  }
  out.reg = fp_regularizer(m, x, ts, opt, w.reg, &out.grad);
  out.loss += w.reg * out.reg;
  require_finite(out.loss, "FP", ts.size(), x, ts);
  return out;
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::step(Vec& params, const Vec& grad) {
  if (kind_ == OptimizerKind::Sgd) {
    params -= lr_ * grad;
    return;
  }
  if (m_.size() != params.size()) {
    m_ = Vec::Zero(params.size());
    v_ = Vec::Zero(params.size());
  }
  ++t_;
  m_ = b1_ * m_ + (1 - b1_) * grad;
  v_ = b2_ * v_ + (1 - b2_) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1 - std::pow(b2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

std::string to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::Dsm: return "dsm";
    case TrainMethod::Cdm: return "cdm";
    case TrainMethod::Cm: return "cm";
    case TrainMethod::Fp: return "fp";
  }
  return "?";
}

TrainMethod train_method_from_string(const std::string& s) {
  if (s == "dsm") return TrainMethod::Dsm;
  if (s == "cdm") return TrainMethod::Cdm;
  if (s == "cm") return TrainMethod::Cm;
  if (s == "fp") return TrainMethod::Fp;
  throw ConfigError("unknown training method '" + s + "' (expected dsm, cdm, cm or fp)");
}

ParamKind method_param_kind(TrainMethod m) {
  switch (m) {
    case TrainMethod::Cdm: return ParamKind::Denoiser;
    case TrainMethod::Cm: return ParamKind::Consistency;
    default: return ParamKind::Score;
  }
}

TrainResult train(const TrainConfig& cfg, const GaussianMixture& gm, const Schedule& sched,
                  const FieldPtr& teacher, const std::string& config_hash) {
  TrainResult res;
  Model model = Model::create(gm.dim(), cfg.hidden, method_param_kind(cfg.method), cfg.features, sched, cfg.seed);
  res.checkpoint = Checkpoint{model, config_hash};
  if (cfg.steps == 0) return res;

  std::vector<double> grid(cfg.t_grid_points);
  if (cfg.t_grid_points < 2) throw ConfigError("t_grid_points must be at least 2");
  for (std::size_t i = 0; i < grid.size(); ++i)
    grid[i] = sched.t0() + (sched.T() - sched.t0()) * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
  grid.back() = sched.T();
  CdmOptions cdm = cfg.cdm;
  if (cdm.t_grid.empty()) cdm.t_grid = grid;
  const FieldPtr teach = teacher ? teacher : truth_score(gm, sched);
  Model ema = model;
  Optimizer opt(cfg.optimizer, cfg.lr);
  const std::uint64_t train_seed = derive_seed(cfg.seed, "train");

  for (std::size_t k = 0; k < cfg.steps; ++k) {
    auto rng = rng_substream(train_seed, k);
    LossResult step;
    try {
      switch (cfg.method) {
        case TrainMethod::Dsm: step = dsm_loss(model, gm, cfg.batch_size, rng); break;
        case TrainMethod::Cdm: step = cdm_regularized_step(model, gm, cfg.batch_size, cdm, rng, cfg.weights); break;
        case TrainMethod::Cm: step = cm_distill_step(model, ema, *teach, gm, grid, cfg.batch_size, rng); break;
        case TrainMethod::Fp: step = fp_regularized_step(model, gm, cfg.batch_size, cfg.fp, rng, cfg.weights); break;
      }
      if (!std::isfinite(step.loss) || !step.grad.allFinite())
        throw TrainingError("non-finite loss or gradient");
    } catch (const Error& e) {
      res.aborted = true;
      res.error = "step " + std::to_string(k) + ": " + e.what();
      break;
    }
    opt.step(model.net.params(), step.grad);
    if (cfg.method == TrainMethod::Cm) ema_update(ema, model, cfg.ema_mu);
    if (!model.net.params().allFinite()) {
      res.aborted = true;
      res.error = "step " + std::to_string(k) + ": parameters became non-finite";
      break;
    }
    res.checkpoint.model = model;
    if (cfg.log_every > 0 && (k % cfg.log_every == 0 || k + 1 == cfg.steps))
      res.history.push_back({k, step.loss, step.dsm, step.reg});
  }
  return res;
}

std::vector<Vec> generate_samples(const FieldPtr& score, const FieldPtr& consistency_fn,
                                  const GaussianMixture& gm, const Schedule& sched, std::size_t n,
                                  int ode_steps, std::uint64_t seed, Solver method) {
  if (!score && !consistency_fn) throw UsageError("need a score or a consistency function to sample");
  std::vector<Vec> out(n);
  parallel_for(n, [&](std::size_t i) {
    auto rng = rng_substream(seed, i);
    const Vec xT = perturb_forward(sample_one(gm, rng), sched, sched.T(), rng);
    out[i] = consistency_fn ? (*consistency_fn)(xT, sched.T())
                            : pf_ode_solve(*score, sched, xT, sched.T(), sched.t0(), ode_steps, method);
  });
  return out;
}

EvalMetrics evaluate_fields(const FieldPtr& score, const FieldPtr& consistency_fn,
                            const GaussianMixture& gm, const Schedule& sched, const EvalConfig& cfg) {
  if (cfg.n_eval == 0) throw UsageError("n_eval must be at least 1");
  EvalMetrics m;
  if (score) {
    const auto truth = truth_score(gm, sched);
    std::vector<Vec> errs;
    errs.reserve(cfg.n_eval * cfg.t_grid.size());
    for (std::size_t ti = 0; ti < cfg.t_grid.size(); ++ti) {
      const double t = cfg.t_grid[ti];
      auto rng = rng_substream(derive_seed(cfg.seed, "eval-mse"), ti);
      std::vector<double> at_t(cfg.n_eval);
      for (std::size_t i = 0; i < cfg.n_eval; ++i) {
        const Vec x = perturb_forward(sample_one(gm, rng), sched, t, rng);
        at_t[i] = ((*score)(x, t) - (*truth)(x, t)).squaredNorm();
        errs.push_back(Vec::Constant(1, at_t[i]));
      }
      m.score_mse_by_t.push_back(pairwise_sum(at_t) / static_cast<double>(at_t.size()));
    }
    const auto est = summarize(errs);
    m.score_mse = est.mean[0];
    m.score_mse_stderr = est.stderr_[0];

    GridSpec grid;
    grid.n_points = cfg.residual_points;
    grid.t_list = cfg.t_grid;
    grid.seed = derive_seed(cfg.seed, "eval-fpe");
    grid.mixture = gm;
    const auto probe = make_probe(score, sched,
                                  score->has_jacobian() ? DerivativeMode::Analytic : DerivativeMode::FiniteDifference,
                                  cfg.spatial_step, cfg.time_step);
    const auto rows = residual_grid_report(probe, grid);
    if (!rows.empty()) {
      double acc = 0;
      for (const auto& r : rows) {
        acc += r.mean_res;
        m.fpe_residual_by_t.push_back(r.mean_res);
      }
      m.fpe_residual = acc / static_cast<double>(rows.size());
    }
  }
  const auto gen = generate_samples(score, consistency_fn, gm, sched, cfg.n_eval, cfg.ode_steps,
                                    derive_seed(cfg.seed, "eval-generate"));
  const auto data = sample_data(gm, cfg.n_eval, derive_seed(cfg.seed, "eval-data"));
  m.sliced_wasserstein = sliced_wasserstein(gen, data, cfg.n_projections, derive_seed(cfg.seed, "eval-sw"));
  return m;
}

EvalMetrics evaluate_model(const Model& m, const GaussianMixture& gm, const EvalConfig& cfg) {
  if (m.kind == ParamKind::Consistency) return evaluate_fields(nullptr, model_field(m), gm, m.schedule, cfg);
  return evaluate_fields(model_score_field(m), nullptr, gm, m.schedule, cfg);
}

namespace {

constexpr int kCheckpointVersion = 1;
using ojson = nlohmann::ordered_json;

}  // namespace

std::string checkpoint_to_json(const Checkpoint& c) {
  const Model& m = c.model;
  ojson j;
  j["version"] = kCheckpointVersion;
  j["parametrization"] = to_string(m.kind);
  j["activation"] = "tanh";
  j["layer_dims"] = m.net.layer_dims();
  j["time_features"] = to_string(m.features);
  j["data_scale"] = m.data_scale;
  j["schedule"] = {{"form", to_string(m.schedule.form())},
                   {"t0", m.schedule.t0()},
                   {"T", m.schedule.T()},
                   {"sigma_min", m.schedule.sigma_min()},
                   {"sigma_max", m.schedule.sigma_max()}};
  j["config_hash"] = c.config_hash;
  ojson layers = ojson::array();
  const auto& dims = m.net.layer_dims();
  const Vec& p = m.net.params();
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    ojson w = ojson::array();
    for (int r = 0; r < dims[l + 1]; ++r) {
      std::vector<double> row(p.data() + off, p.data() + off + dims[l]);
      w.push_back(row);
      off += dims[l];
    }
    std::vector<double> b(p.data() + off, p.data() + off + dims[l + 1]);
    off += dims[l + 1];
    layers.push_back({{"weight", w}, {"bias", b}});
  }
  j["layers"] = layers;
  return j.dump(2) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
    if (j.at("activation").get<std::string>() != "tanh") throw ConfigError("unsupported activation");
    const auto& js = j.at("schedule");
    const auto form = schedule_form_from_string(js.at("form").get<std::string>());
    const Schedule sched = form == ScheduleForm::LinearSigma
                               ? Schedule::linear(js.at("t0").get<double>(), js.at("T").get<double>())
                               : Schedule::geometric(js.at("sigma_min").get<double>(), js.at("sigma_max").get<double>(),
                                                     js.at("t0").get<double>(), js.at("T").get<double>());
    Checkpoint c;
    Model& m = c.model;
    m.kind = param_kind_from_string(j.at("parametrization").get<std::string>());
    m.features = time_features_from_string(j.at("time_features").get<std::string>());
    m.data_scale = j.at("data_scale").get<double>();
    m.schedule = sched;
    m.net = Mlp(j.at("layer_dims").get<std::vector<int>>());
    c.config_hash = j.at("config_hash").get<std::string>();
    const auto& dims = m.net.layer_dims();
    const auto& layers = j.at("layers");
    if (layers.size() + 1 != dims.size()) throw ConfigError("checkpoint layer count does not match layer_dims");
    Vec& p = m.net.params();
    Eigen::Index off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const auto& w = layers[l].at("weight");
      const auto& b = layers[l].at("bias");
      if (w.size() != static_cast<std::size_t>(dims[l + 1]) || b.size() != static_cast<std::size_t>(dims[l + 1]))
        throw ConfigError("checkpoint layer " + std::to_string(l) + " has the wrong shape");
      for (const auto& row : w) {
        if (row.size() != static_cast<std::size_t>(dims[l]))
          throw ConfigError("checkpoint layer " + std::to_string(l) + " has the wrong shape");
        for (const auto& v : row) p[off++] = v.get<double>();
      }
      for (const auto& v : b) p[off++] = v.get<double>();
    }
    if (m.net.input_dim() != m.dim() + time_feature_count(m.features))
      throw ConfigError("checkpoint input width does not match time features");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << checkpoint_to_json(c);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace conlab
