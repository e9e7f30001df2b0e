#pragma once

#include <cmath>
#include <cstdint>

namespace ace {

// Counter-based pseudo-random generator built on the SplitMix64 output
// function. The n-th draw of a stream is mix(key + (n+1)*GAMMA), so any
// position is addressable in O(1) and results are identical across
// platforms and across serial/parallel generation orders.
//
//   mix(x): x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
//           x = (x ^ (x >> 27)) * 0x94D049BB133111EB
//           return x ^ (x >> 31)
//   GAMMA = 0x9E3779B97F4A7C15
//
// Streams are derived by hashing a (seed, stream) pair through the same
// mix, so record i of a dataset owns stream derive(seed, i).
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  CounterRng() : key_(0), counter_(0) {}
  explicit CounterRng(std::uint64_t key) : key_(key), counter_(0) {}
  CounterRng(std::uint64_t key, std::uint64_t counter)
      : key_(key), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t x) {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  // Stream key for substream `stream` of `seed` (record index, worker id, ...).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    return mix(seed + (stream + 1) * kGamma);
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  // Uniform in [0,1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Standard normal via Box-Muller; consumes two draws per call.
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace ace
