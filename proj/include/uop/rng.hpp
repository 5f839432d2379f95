#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uop {

// xoshiro256** seeded through splitmix64. Hand-rolled so that streams are
// bit-stable across platforms and standard library versions; std::*_distribution
// makes no such promise.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed);

  uint64_t u64();

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t randint(uint64_t n);

  // Standard normal via Box-Muller (no cached spare, one pair per call).
  double normal();
  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(randint(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), order of selection preserved.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k);

  // Independent substream identified by a tag; does not disturb this stream.
  Rng fork(const std::string& tag) const;

 private:
  uint64_t s_[4];
};

}  // namespace uop
