#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace carf {

// Deterministic PRNG with a fully specified algorithm (xoshiro256++ seeded via
// splitmix64) and hand-rolled value mappings. std::mt19937_64 would do for the
// raw stream, but the standard distributions are implementation-defined, and
// generated scenes / training trajectories must be byte-identical across
// platforms. The four-word state also serializes trivially into checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  // Independent substream: distinct tag -> decorrelated stream from same seed.
  static Rng substream(uint64_t seed, uint64_t tag) {
    uint64_t x = seed;
    uint64_t a = splitmix64(x);
    x ^= 0x9e3779b97f4a7c15ull * (tag + 1);
    Rng r(0);
    r.s_[0] = a;
    r.s_[1] = splitmix64(x);
    r.s_[2] = splitmix64(x);
    r.s_[3] = splitmix64(x);
    return r;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53 bits of mantissa.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Rejection keeps the distribution exact.
  uint64_t uniform_int(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  // Standard normal via Box-Muller. Consumes two uniforms per value; the
  // second output is intentionally discarded so the generator carries no
  // hidden cache between calls (keeps serialization to the four state words).
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::array<uint64_t, 4> s_{};
};

}  // namespace carf
