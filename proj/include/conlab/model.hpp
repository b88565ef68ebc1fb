#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conlab/common.hpp"
#include "conlab/field.hpp"
#include "conlab/schedule.hpp"

namespace conlab {

enum class TimeFeatures { RawT, LogSigmaPair };
std::string to_string(TimeFeatures f);
TimeFeatures time_features_from_string(const std::string& s);
int time_feature_count(TimeFeatures f);

/// Fully connected tanh network on a flat parameter vector. Layer l stores its
/// weight matrix (d_out x d_in, row-major) followed by its bias. Inputs and
/// outputs are column batches.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> layer_dims);

  /// Weights ~ N(0, 1/d_in), biases zero.
  static Mlp init(std::vector<int> layer_dims, std::uint64_t seed);

  const std::vector<int>& layer_dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  static std::size_t count_params(const std::vector<int>& layer_dims);

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  /// Activations of every layer, kept for backprop.
  struct Tape {
    std::vector<Mat> acts;  // acts[0] = input, acts.back() = output
  };

  Mat forward(const Mat& inputs) const;
  Mat forward(const Mat& inputs, Tape& tape) const;

  using MatX = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  /// Forward pass in extended precision, for losses built from finite
  /// differences of outputs. The tape holds the activations rounded to double.
  MatX forward_extended(const Mat& inputs, Tape& tape) const;

  /// Adds d(sum_ij grad_out_ij * out_ij)/dtheta to grad.
  void backward(const Tape& tape, const Mat& grad_out, Vec& grad) const;

 private:
  using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using RowMapMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  std::vector<int> dims_;
  std::vector<std::size_t> offsets_;  // start of each layer's weights
  Vec params_;
};

enum class ParamKind { Score, Denoiser, Consistency };
std::string to_string(ParamKind k);
ParamKind param_kind_from_string(const std::string& s);

/// Output of a model is a(t) x + b(t) net(c_in(t) x, features(t)).
struct Model {
  Mlp net;
  ParamKind kind = ParamKind::Score;
  TimeFeatures features = TimeFeatures::LogSigmaPair;
  Schedule schedule = Schedule::linear();
  double data_scale = 0.5;  // v: inputs are x / sqrt(sigma^2 + v^2); also the consistency skip/out scale

  int dim() const { return net.output_dim(); }

  /// Builds a model with hidden layers `hidden` for data dimension `dim`.
  static Model create(int dim, const std::vector<int>& hidden, ParamKind kind, TimeFeatures features,
                      const Schedule& sched, std::uint64_t seed);

  double skip(double t) const;  // a(t)
  double out(double t) const;   // b(t)

  Mat inputs(const Mat& x, const std::vector<double>& ts) const;
  Mat forward(const Mat& x, const std::vector<double>& ts) const;
  Mat forward(const Mat& x, const std::vector<double>& ts, Mlp::Tape& tape) const;
  /// Backprop of sum(grad_out .* forward(x, ts)).
  void backward(const Mlp::Tape& tape, const std::vector<double>& ts, const Mat& grad_out, Vec& grad) const;

  /// Score implied by the model, for score and denoiser kinds: the network
  /// output itself (for the denoiser, (h - x)/sigma^2 = net).
  Mat score(const Mat& x, const std::vector<double>& ts) const;

  Vec operator()(const Vec& x, double t) const;
};

/// Consistency-model coefficients with data scale v.
double consistency_skip(const Schedule& sched, double v, double t);
double consistency_out(const Schedule& sched, double v, double t);

/// The model as a VectorField (its own output) or as the score it implies.
FieldPtr model_field(const Model& m);
FieldPtr model_score_field(const Model& m);

}  // namespace conlab
