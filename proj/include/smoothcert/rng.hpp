#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

// Counter-based seeded randomness. Every consumer derives an independent
// substream from (seed, index) so results do not depend on how work is
// batched or which thread runs it.

namespace smoothcert {

inline uint64_t splitmix64_next(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t hash64(uint64_t a, uint64_t b) {
  uint64_t s = a;
  uint64_t h = splitmix64_next(s);
  s = h ^ b;
  h = splitmix64_next(s);
  return h;
}

inline uint64_t hash64(uint64_t a, uint64_t b, uint64_t c) {
  return hash64(hash64(a, b), c);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  static Rng substream(uint64_t seed, uint64_t index) {
    return Rng(hash64(seed, index));
  }
  static Rng substream(uint64_t seed, uint64_t tag, uint64_t index) {
    return Rng(hash64(seed, tag, index));
  }

  uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform on [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    // Rejection sampling keeps the distribution exact.
    uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= bound);
    return v % n;
  }

  // Box-Muller; the second deviate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  void fill_normal(double* out, size_t n, double sigma = 1.0) {
    for (size_t i = 0; i < n; ++i) out[i] = sigma * normal();
  }

  // Knuth's algorithm; fine for the small means used here.
  uint64_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    double l = std::exp(-lambda);
    uint64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform_pos();
    } while (p > l);
    return k - 1;
  }

  std::vector<size_t> permutation(size_t n) {
    std::vector<size_t> p(n);
    std::iota(p.begin(), p.end(), size_t{0});
    for (size_t i = n; i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace smoothcert
