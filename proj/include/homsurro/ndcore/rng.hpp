#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace homsurro::ndcore {

/// splitmix64 mixing step; used to derive independent seeds from
/// (base seed, index) pairs so that parallel work stays reproducible.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0) {
  return mix64(mix64(base ^ 0x7f4a7c15ULL) + mix64(a) * 3 + mix64(b) * 7);
}

/// Deterministic RNG wrapper. All floating draws are built directly from
/// the mt19937_64 bit stream (not std:: distributions, whose output is
/// implementation-defined), so results are stable across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cos branch only).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
  std::uint64_t bounded(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t mask = ~0ULL >> __builtin_clzll(n - 1 | 1);
    std::uint64_t v;
    do {
      v = next_u64() & mask;
    } while (v >= n);
    return v;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = bounded(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace homsurro::ndcore
