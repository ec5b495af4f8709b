#pragma once

#include <cmath>
#include <cstdint>

namespace vitac {

// Seeded, splittable pseudo-random generator (splitmix64 core driving
// xoshiro256**). Owned by the caller; there is no global RNG anywhere in
// the library. `split(stream)` derives an independent stream so parallel
// episodes / modules never share state.
class Rng {
public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
  }

  Rng split(uint64_t stream) const {
    uint64_t x = s_[0] ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    x ^= s_[3] + 0xbf58476d1ce4e5b9ULL;
    return Rng(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  // Standard normal via Marsaglia polar; no cached spare so the draw
  // sequence is a pure function of the state.
  double normal() {
    for (;;) {
      const double u = uniform(-1.0, 1.0);
      const double v = uniform(-1.0, 1.0);
      const double r2 = u * u + v * v;
      if (r2 > 0.0 && r2 < 1.0) {
        return u * std::sqrt(-2.0 * std::log(r2) / r2);
      }
    }
  }

  double normal(double mean, double std) { return mean + std * normal(); }

private:
  explicit Rng() = default;

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4] = {};
};

}  // namespace vitac
