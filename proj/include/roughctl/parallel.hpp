#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace roughctl {

/// Process-wide worker count used when a call passes 0.
inline std::size_t& default_workers() {
  static std::size_t w = 1;
  return w;
}

/// Runs f(i) for i in [0, n) on contiguous static chunks.
/// Every index is handled by exactly one call, so results that depend only on i
/// are identical for any worker count. The first exception is rethrown.
template <class F>
void parallel_for(std::size_t n, F&& f, std::size_t workers = 0) {
  if (workers == 0) workers = default_workers();
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace roughctl
