#include "conlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conlab/rng.hpp"

namespace conlab {

McEstimate summarize(std::span<const Vec> samples, int n_steps, double lambda) {
  if (samples.empty()) throw UsageError("summarize: no samples");
  const std::size_t n = samples.size();
  const Vec& ref = samples[0];
  std::vector<Vec> dev(n), dev_sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].size() != ref.size()) throw ShapeError("summarize: ragged samples");
    dev[i] = samples[i] - ref;
    dev_sq[i] = dev[i].array().square();
  }
  const Vec sum = pairwise_sum(dev);
  const Vec sum_sq = pairwise_sum(dev_sq);
  McEstimate est;
  est.mean = ref + sum / static_cast<double>(n);
  est.stderr_ = Vec::Zero(ref.size());
  if (n > 1) {
    const Vec var = ((sum_sq.array() - sum.array().square() / static_cast<double>(n)) /
                     static_cast<double>(n - 1))
                        .max(0.0);
    est.stderr_ = (var.array() / static_cast<double>(n)).sqrt();
  }
  est.n_paths = n;
  est.n_steps = n_steps;
  est.lambda = lambda;
  return est;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw UsageError("spearman: need two equal-length series");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double sliced_wasserstein(std::span<const Vec> a, std::span<const Vec> b, int n_projections,
                          std::uint64_t seed) {
  if (a.empty() || a.size() != b.size()) throw UsageError("sliced_wasserstein: sample sizes differ");
  if (n_projections < 1) throw UsageError("sliced_wasserstein: need at least one projection");
  const auto d = a[0].size();
  auto rng = rng_substream(seed, 0);
  std::vector<double> pa(a.size()), pb(b.size()), dist(n_projections);
  for (int p = 0; p < n_projections; ++p) {
    Vec dir(d);
    for (Eigen::Index j = 0; j < d; ++j) dir[j] = rng.normal();
    dir /= dir.norm();
    for (std::size_t i = 0; i < a.size(); ++i) {
      pa[i] = dir.dot(a[i]);
      pb[i] = dir.dot(b[i]);
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double w = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) w += std::abs(pa[i] - pb[i]);
    dist[p] = w / static_cast<double>(pa.size());
  }
  return pairwise_sum(dist) / n_projections;
}

}  // namespace conlab
