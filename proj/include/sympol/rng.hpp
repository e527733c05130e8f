#ifndef SYMPOL_RNG_HPP
#define SYMPOL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace sympol {

// Deterministic random stream. All draws go through explicit conversions of
// raw 64-bit output, so sequences are reproducible across platforms and
// standard library versions (std::uniform_real_distribution and friends are
// implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(mix(seed)) {}

  // Independent stream derived from a base seed and a stream id.
  static Rng derive(uint64_t seed, uint64_t stream) {
    return Rng(mix(seed) ^ mix(stream * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two raw draws.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static uint64_t mix(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
};

}  // namespace sympol

#endif
