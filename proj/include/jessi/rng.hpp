#pragma once

#include <cstdint>
#include <utility>

#include "jessi/common.hpp"

namespace jessi {

// Counter-free splitmix64 stream. Draw sequences depend only on the seed, not
// on the platform or standard library, so runs replay bitwise anywhere.
// Child streams are derived from the original seed (not the current state);
// never share one stream across concurrent consumers.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1), 53 random bits.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw ValueError("RngStream::next_below: n must be positive");
    return next_u64() % n;
  }

  // Deterministic child stream keyed off the original seed.
  RngStream split(std::uint64_t key) const {
    std::uint64_t z = seed_ ^ (0x9E3779B97F4A7C15ull + key * 0xD1B54A32D192ED03ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return RngStream(z ^ (z >> 31));
  }

  template <class RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = next_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace jessi
