#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace conlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error hierarchy. Each failure class in the library maps to one of these so
// callers (and the CLI) can tell a bad input from a numerical blow-up.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct IntegrationError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};

/// Pairwise (cascade) summation over a fixed index order. The result depends
/// only on the values and their order, never on how they were produced.
double pairwise_sum(std::span<const double> values);

/// Column-wise pairwise sum of equally sized vectors.
Vec pairwise_sum(std::span<const Vec> values);

/// Worker count: CONSISTENCY_LAB_THREADS if set and positive, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads. Each index is
/// visited exactly once; callers write into per-index slots and reduce in
/// index order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

inline double max_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace conlab
