#include "conlab/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace conlab {

namespace {

template <typename T, typename Zero>
T pairwise_impl(std::span<const T> v, Zero zero) {
  if (v.empty()) return zero();
  if (v.size() <= 8) {
    T acc = v[0];
    for (std::size_t i = 1; i < v.size(); ++i) acc = acc + v[i];
    return acc;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_impl(v.first(half), zero) + pairwise_impl(v.subspan(half), zero);
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
  return pairwise_impl(values, [] { return 0.0; });
}

Vec pairwise_sum(std::span<const Vec> values) {
  if (values.empty()) return Vec();
  const auto dim = values[0].size();
  for (const auto& v : values)
    if (v.size() != dim) throw ShapeError("pairwise_sum: vectors of unequal length");
  return pairwise_impl(values, [dim] { return Vec(Vec::Zero(dim)); });
}

std::size_t worker_count() {
  if (const char* env = std::getenv("CONSISTENCY_LAB_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && n > 0) return static_cast<std::size_t>(n);
  }
  const auto hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::size_t first_index = n;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        body(i);
      } catch (...) {
        // Report the lowest failing index so errors do not depend on scheduling.
        std::lock_guard lock(error_mutex);
        if (i < first_index) {
          first_index = i;
          first_error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace conlab
