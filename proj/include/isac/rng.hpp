#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace isac {

/// Stateless 64-bit mix (splitmix64 finalizer); used for seed derivation.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from (seed, index)-style tuples.
inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return mix64(a ^ (0x9e3779b97f4a7c15ULL + mix64(b)));
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic RNG: mt19937_64 engine (bit-exact by the standard) with
/// hand-rolled distributions so draw sequences are pinned, not
/// implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(mix64(seed)) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform index in [0, n); n > 0. Multiply-shift, no modulo bias spikes.
  size_t index(size_t n) {
    return static_cast<size_t>(
        (static_cast<unsigned __int128>(eng_()) * n) >> 64);
  }

  /// Uniform integer in [lo, hi] inclusive.
  long long uniform_int(long long lo, long long hi) {
    return lo + static_cast<long long>(index(static_cast<size_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace isac
