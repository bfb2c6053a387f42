#pragma once

#include <cstdint>

#include "dlfs/tensor.hpp"

namespace dlfs {

// Counter-based deterministic generator. Draw number i of a stream with
// base b is mix64(b + (i+1) * 0x9E3779B97F4A7C15), where mix64 is the
// SplitMix64 finalizer (Steele/Lea/Flood). Output depends only on (base,
// counter), so identical seeds produce identical streams on every platform
// and the stream position is two integers — trivially checkpointable.
// Substreams re-mix the base with a stream id and never collide with the
// parent in practice.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_(mix64(seed ^ 0x6A09E667F3BCC909ull)) {}

  uint64_t next_u64() {
    ++counter_;
    return mix64(base_ + counter_ * 0x9E3779B97F4A7C15ull);
  }

  // [0,1), 53-bit resolution
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi);
  double normal(double mu, double sigma);  // Box-Muller, two draws per value
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive range

  Rng split(uint64_t stream) const {
    Rng child(0);
    child.base_ = mix64(base_ ^ mix64(stream + 0x1F83D9ABFB41BD6Bull));
    child.counter_ = 0;
    return child;
  }

  uint64_t base() const { return base_; }
  uint64_t counter() const { return counter_; }
  static Rng restore(uint64_t base, uint64_t counter) {
    Rng r(0);
    r.base_ = base;
    r.counter_ = counter;
    return r;
  }

  static uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  uint64_t base_ = 0;
  uint64_t counter_ = 0;
};

Tensor draw_uniform(Rng& rng, double lo, double hi, std::vector<int64_t> shape);
Tensor draw_normal(Rng& rng, double mu, double sigma, std::vector<int64_t> shape);

}  // namespace dlfs
