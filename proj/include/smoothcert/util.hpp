#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace smoothcert {

// Worker-thread cap: SMOOTHCERT_THREADS env var, else hardware concurrency.
inline int worker_threads() {
  int hw = int(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("SMOOTHCERT_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1 && v < hw) hw = v;
    if (v >= 1 && v >= hw) hw = v;
  }
  return hw;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; results
// must not depend on which thread runs which index.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
  int threads = worker_threads();
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (int64_t(threads) > n) threads = int(n);
  std::vector<std::thread> pool;
  int64_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Shortest round-trip decimal form; keeps serialized reports deterministic.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace smoothcert
