#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "conlab/common.hpp"

namespace conlab {

/// Monte-Carlo estimate of a conditional expectation.
struct McEstimate {
  Vec mean;
  Vec stderr_;  // per coordinate: sample std / sqrt(n_paths)
  std::size_t n_paths = 0;
  int n_steps = 0;
  double lambda = 0.0;

  /// Per-coordinate sample variance, stderr^2 * n_paths.
  Vec variance() const { return stderr_.array().square() * static_cast<double>(n_paths); }
  double max_stderr() const { return max_abs(stderr_); }
};

/// Mean and standard error of equally sized samples. Deviations are taken from
/// the first sample and accumulated pairwise in index order, so identical
/// samples give exactly that value and exactly zero error.
McEstimate summarize(std::span<const Vec> samples, int n_steps = 0, double lambda = 0.0);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

/// Mean over random unit directions of the 1-D Wasserstein-1 distance between
/// the projected samples. Sample counts must match.
double sliced_wasserstein(std::span<const Vec> a, std::span<const Vec> b, int n_projections,
                          std::uint64_t seed);

}  // namespace conlab
