#include "conlab/model.hpp"

#include <cmath>

#include "conlab/rng.hpp"

namespace conlab {

std::string to_string(TimeFeatures f) {
  return f == TimeFeatures::RawT ? "raw-t" : "log-sigma-pair";
}

TimeFeatures time_features_from_string(const std::string& s) {
  if (s == "raw-t") return TimeFeatures::RawT;
  if (s == "log-sigma-pair") return TimeFeatures::LogSigmaPair;
  throw ConfigError("unknown time features '" + s + "' (expected raw-t or log-sigma-pair)");
}

int time_feature_count(TimeFeatures f) { return f == TimeFeatures::RawT ? 1 : 2; }

std::string to_string(ParamKind k) {
  switch (k) {
    case ParamKind::Score: return "score";
    case ParamKind::Denoiser: return "denoiser";
    case ParamKind::Consistency: return "consistency";
  }
  return "?";
}

ParamKind param_kind_from_string(const std::string& s) {
  if (s == "score") return ParamKind::Score;
  if (s == "denoiser") return ParamKind::Denoiser;
  if (s == "consistency") return ParamKind::Consistency;
  throw ConfigError("unknown parametrization '" + s + "' (expected score, denoiser or consistency)");
}

std::size_t Mlp::count_params(const std::vector<int>& dims) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n += static_cast<std::size_t>(dims[l] + 1) * static_cast<std::size_t>(dims[l + 1]);
  return n;
}

Mlp::Mlp(std::vector<int> layer_dims) : dims_(std::move(layer_dims)) {
  if (dims_.size() < 2) throw ShapeError("an MLP needs at least input and output layers");
  for (int d : dims_)
    if (d < 1) throw ShapeError("layer widths must be positive");
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    offsets_.push_back(off);
    off += static_cast<std::size_t>(dims_[l] + 1) * static_cast<std::size_t>(dims_[l + 1]);
  }
  params_ = Vec::Zero(static_cast<Eigen::Index>(off));
}

Mlp Mlp::init(std::vector<int> layer_dims, std::uint64_t seed) {
  Mlp m(std::move(layer_dims));
  auto rng = rng_substream(derive_seed(seed, "mlp-init"), 0);
  for (std::size_t l = 0; l + 1 < m.dims_.size(); ++l) {
    const int din = m.dims_[l], dout = m.dims_[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(din));
    for (int i = 0; i < din * dout; ++i)
      m.params_[static_cast<Eigen::Index>(m.offsets_[l]) + i] = scale * rng.normal();
  }
  return m;
}

Mat Mlp::forward(const Mat& inputs) const {
  Tape tape;
  return forward(inputs, tape);
}

Mat Mlp::forward(const Mat& inputs, Tape& tape) const {
  if (inputs.rows() != input_dim()) throw ShapeError("MLP input has the wrong number of rows");
  tape.acts.assign(1, inputs);
  const std::size_t L = dims_.size() - 1;
  for (std::size_t l = 0; l < L; ++l) {
    const int din = dims_[l], dout = dims_[l + 1];
    const double* p = params_.data() + offsets_[l];
    RowMap w(p, dout, din);
    Eigen::Map<const Vec> b(p + din * dout, dout);
    Mat z = w * tape.acts.back();
    z.colwise() += b;
    if (l + 1 < L) z = z.array().tanh().matrix();
    tape.acts.push_back(std::move(z));
  }
  return tape.acts.back();
}

Mlp::MatX Mlp::forward_extended(const Mat& inputs, Tape& tape) const {
  if (inputs.rows() != input_dim()) throw ShapeError("MLP input has the wrong number of rows");
  tape.acts.assign(1, inputs);
  MatX a = inputs.cast<long double>();
  const std::size_t L = dims_.size() - 1;
  for (std::size_t l = 0; l < L; ++l) {
    const int din = dims_[l], dout = dims_[l + 1];
    const double* p = params_.data() + offsets_[l];
    const MatX w = RowMap(p, dout, din).cast<long double>();
    const auto b = Eigen::Map<const Vec>(p + din * dout, dout).cast<long double>().eval();
    MatX z = w * a;
    z.colwise() += b;
    if (l + 1 < L) z = z.unaryExpr([](long double v) { return std::tanh(v); });
    a = std::move(z);
    tape.acts.push_back(a.cast<double>());
  }
  return a;
}

void Mlp::backward(const Tape& tape, const Mat& grad_out, Vec& grad) const {
  if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());
  const std::size_t L = dims_.size() - 1;
  Mat delta = grad_out;  // d/dz of the current layer
  for (std::size_t l = L; l-- > 0;) {
    const int din = dims_[l], dout = dims_[l + 1];
    const double* p = params_.data() + offsets_[l];
    double* gp = grad.data() + offsets_[l];
    RowMapMut gw(gp, dout, din);
    Eigen::Map<Vec> gb(gp + din * dout, dout);
    const Mat& a_in = tape.acts[l];
    gw.noalias() += delta * a_in.transpose();
    gb += delta.rowwise().sum();
    if (l == 0) break;
    RowMap w(p, dout, din);
    Mat back = w.transpose() * delta;
    // a_in = tanh(z_in), so dz_in = back * (1 - a_in^2)
    delta = back.array() * (1.0 - a_in.array().square());
  }
}

double consistency_skip(const Schedule& sched, double v, double t) {
  const double d = sched.sigma(t) - sched.sigma(sched.t0());
  return v * v / (v * v + d * d);
}

double consistency_out(const Schedule& sched, double v, double t) {
  const double s = sched.sigma(t);
  return v * (s - sched.sigma(sched.t0())) / std::sqrt(v * v + s * s);
}

Model Model::create(int dim, const std::vector<int>& hidden, ParamKind kind, TimeFeatures features,
                    const Schedule& sched, std::uint64_t seed) {
  std::vector<int> dims{dim + time_feature_count(features)};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(dim);
  Model m;
  m.net = Mlp::init(dims, seed);
  m.kind = kind;
  m.features = features;
  m.schedule = sched;
  return m;
}

double Model::skip(double t) const {
  switch (kind) {
    case ParamKind::Score: return 0.0;
    case ParamKind::Denoiser: return 1.0;
    case ParamKind::Consistency: return consistency_skip(schedule, data_scale, t);
  }
  return 0.0;
}

double Model::out(double t) const {
  switch (kind) {
    case ParamKind::Score: return 1.0;
    case ParamKind::Denoiser: return schedule.sigma2(t);
    case ParamKind::Consistency: return consistency_out(schedule, data_scale, t);
  }
  return 0.0;
}

Mat Model::inputs(const Mat& x, const std::vector<double>& ts) const {
  if (static_cast<std::size_t>(x.cols()) != ts.size()) throw ShapeError("one time per column required");
  if (x.rows() != dim()) throw ShapeError("model input has the wrong dimension");
  const int nf = time_feature_count(features);
  Mat in(x.rows() + nf, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double t = ts[static_cast<std::size_t>(c)];
    schedule.check_time(t);
    in.col(c).head(x.rows()) = x.col(c) / std::sqrt(schedule.sigma2(t) + data_scale * data_scale);
    in(x.rows(), c) = t;
    if (nf == 2) in(x.rows() + 1, c) = std::log(schedule.sigma(t));
  }
  return in;
}

Mat Model::forward(const Mat& x, const std::vector<double>& ts) const {
  Mlp::Tape tape;
  return forward(x, ts, tape);
}

Mat Model::forward(const Mat& x, const std::vector<double>& ts, Mlp::Tape& tape) const {
  Mat y = net.forward(inputs(x, ts), tape);
  if (kind == ParamKind::Score) return y;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double t = ts[static_cast<std::size_t>(c)];
    y.col(c) = skip(t) * x.col(c) + out(t) * y.col(c);
  }
  return y;
}

void Model::backward(const Mlp::Tape& tape, const std::vector<double>& ts, const Mat& grad_out,
                     Vec& grad) const {
  if (kind == ParamKind::Score) {
    net.backward(tape, grad_out, grad);
    return;
  }
  Mat g = grad_out;
  for (Eigen::Index c = 0; c < g.cols(); ++c) g.col(c) *= out(ts[static_cast<std::size_t>(c)]);
  net.backward(tape, g, grad);
}

Mat Model::score(const Mat& x, const std::vector<double>& ts) const {
  if (kind == ParamKind::Consistency) throw UsageError("a consistency model has no score");
  return net.forward(inputs(x, ts));
}

Vec Model::operator()(const Vec& x, double t) const {
  const Mat y = forward(x, {t});
  if (!y.allFinite()) throw IntegrationError("model output is not finite");
  return y.col(0);
}

namespace {

class ModelField final : public VectorField {
 public:
  ModelField(Model m, bool as_score) : m_(std::move(m)), as_score_(as_score) {}
  int dim() const override { return m_.dim(); }
  Vec operator()(const Vec& x, double t) const override {
    if (!as_score_) return m_(x, t);
    const Mat s = m_.score(x, {t});
    if (!s.allFinite()) throw IntegrationError("model score is not finite");
    return s.col(0);
  }

 private:
  Model m_;
  bool as_score_;
};

}  // namespace

FieldPtr model_field(const Model& m) { return std::make_shared<ModelField>(m, false); }

FieldPtr model_score_field(const Model& m) {
  if (m.kind == ParamKind::Consistency) throw UsageError("a consistency model has no score");
  return std::make_shared<ModelField>(m, true);
}

}  // namespace conlab
