#include "fixformer/util.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace fixformer {

int max_threads() {
  static const int cached = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    int n = std::min(hw, 4);
    if (const char* env = std::getenv("FIXFORMER_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1) n = std::min(n, cap);
    }
    return n;
  }();
  return cached;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(max_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace fixformer
