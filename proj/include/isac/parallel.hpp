#pragma once

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace isac {

/// Runs fn(0..n-1) on a small worker pool. Work items must be independent;
/// callers index into preallocated result slots, so output order never
/// depends on scheduling. The first exception is rethrown after join.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
  if (n == 0) return;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<size_t>(workers, n));
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      size_t i;
      while ((i = next.fetch_add(1)) < n) {
        if (failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace isac
