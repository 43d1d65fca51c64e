#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace afn {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Decorrelated sub-seed for a named stream (init, dropout, shuffles, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

// mt19937_64 core with hand-rolled variate transforms. The standard pins the
// engine's output sequence but not std::*_distribution, so the transforms
// live here to keep seeded results identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, no spare caching. u1 is shifted into (0, 1].
  double gaussian() {
    constexpr double two_pi = 6.283185307179586476925287;
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  bool bernoulli(double p_true) { return uniform() < p_true; }

  // n must be positive.
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(engine_() % n);
  }

  // Fisher-Yates; std::shuffle is implementation-defined, this is not.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace afn
