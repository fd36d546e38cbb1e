#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace vf {

// Worker-thread cap: VF_THREADS if set, otherwise the hardware count.
inline int max_threads() {
  if (const char* env = std::getenv("VF_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static block partition of [0, n). Each index is processed exactly once and
// results land in caller-owned slots, so output is identical for any thread
// count. Used for read-only work (clip loading, evaluation batches), never
// inside a backward pass.
template <typename F>
void parallel_for(int64_t n, F&& body, int threads = 0) {
  if (threads <= 0) threads = max_threads();
  if (threads > n) threads = static_cast<int>(n);
  if (n <= 0) return;
  if (threads <= 1) {
    for (int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  int64_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([=, &body] {
      for (int64_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace vf
