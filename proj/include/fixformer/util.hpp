#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <string_view>

namespace fixformer {

// 64-bit FNV-1a, used to derive per-name RNG streams.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// RNG stream for (seed, name). Streams are independent of registration
// order, so adding a parameter never shifts another parameter's draws.
inline std::mt19937_64 named_rng(std::uint64_t seed, std::string_view name) {
  return std::mt19937_64(splitmix64(seed ^ fnv1a(name)));
}

// Normal(0, sigma) with draws outside 2 sigma rejected.
inline double truncated_normal(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (;;) {
    double v = dist(rng);
    if (v >= -2.0 * sigma && v <= 2.0 * sigma) return v;
  }
}

// Shortest decimal form that parses back to the same double.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Worker cap: FIXFORMER_THREADS if set, else hardware concurrency (max 4).
int max_threads();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; each
// index is computed exactly once and only per-index state may be written,
// so results are identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fixformer
