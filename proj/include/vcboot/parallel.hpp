#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace vcboot {

// Runs fn(i) for i in [0, n) on `workers` threads.  Work items are pulled
// from a shared counter, so any thread may run any index; callers that need
// reproducibility must make fn(i) depend only on i (per-index seeding) and
// write into slot i of a preallocated buffer.  The first exception (lowest
// index) is rethrown on the calling thread.
inline void parallel_for(int n, int workers,
                         const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int n_threads = std::min(workers, n);
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (int i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
  }
}

}  // namespace vcboot
