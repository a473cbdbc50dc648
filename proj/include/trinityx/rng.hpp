// Deterministic random stream.
//
// Engine: std::mt19937_64 (its output sequence is fixed by the standard).
// The standard <random> distributions are implementation-defined, so the
// distributions below are written out by hand to keep streams identical
// across standard libraries:
//   uniform()  = (engine() >> 11) * 2^-53, in [0, 1)
//   normal()   = Box-Muller on two uniforms, cosine branch only
//   index(n)   = floor(uniform() * n)
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace trinityx {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  /// Fisher-Yates with index().
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  /// Independent child stream derived from this one's next output.
  Rng fork() { return Rng(next_u64() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace trinityx
