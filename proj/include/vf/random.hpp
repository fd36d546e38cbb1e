#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace vf {

// Seeded RNG used everywhere randomness appears (init, shuffling, dropout,
// augmentation, synthetic data). One Rng per concern keeps runs reproducible
// no matter which subsystems execute.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t raw() { return engine_(); }

  // Uniform in [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  // Normal(0, stddev) resampled until within 2 stddev of the mean.
  double truncated_normal(double stddev) {
    for (;;) {
      double x = normal(0.0, stddev);
      if (std::abs(x) <= 2.0 * stddev) return x;
    }
  }

  bool bernoulli(double p) {
    std::bernoulli_distribution d(p);
    return d(engine_);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    std::uniform_int_distribution<uint64_t> d(0, n - 1);
    return d(engine_);
  }

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  // Derive an independent stream, e.g. one per episode or per clip.
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    uint64_t h = seed ^ (stream + 0x9e3779b97f4a7c15ull);
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 31;
    return h;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace vf
