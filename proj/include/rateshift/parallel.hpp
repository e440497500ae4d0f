#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rateshift {

/// Runs body(k) for k in [0, count) on up to `threads` workers using static
/// contiguous chunks. Callers write results into slot k, so output never
/// depends on the worker count. The exception from the lowest failing index is
/// rethrown.
template <typename Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, count));
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::exception_ptr failure;
  std::size_t failure_index = count;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      std::size_t k = lo;
      try {
        for (; k < hi; ++k) body(k);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (k < failure_index) {
          failure_index = k;
          failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace rateshift
