#pragma once

#include <cstdint>

namespace classkit {

// splitmix64. Chosen over <random> engines+distributions because the byte
// stream must be identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1), 53 usable bits, exact dyadic rational.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds; modulo bias is irrelevant at the ranges used here
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  uint64_t state_;
};

// Independent substream: mixes (seed, stream) so per-epoch / per-sample
// streams do not depend on how much of another stream was consumed.
inline Rng derive_rng(uint64_t seed, uint64_t stream) {
  Rng mix(seed * 0x9e3779b97f4a7c15ull + stream * 0xc2b2ae3d27d4eb4full + 1);
  return Rng(mix.next_u64());
}

}  // namespace classkit
