#pragma once

#include <cmath>
#include <cstdint>

namespace planted {

// Seed for every randomized procedure in the library. Equal seeds plus equal
// request sequences give bit-identical sample streams; parallel shards derive
// their own sub-seed so results do not depend on thread scheduling.
struct RngSeed {
  std::uint64_t value = 0;
};

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic sub-seed for shard / restart / query index `stream`.
inline RngSeed derive_seed(RngSeed base, std::uint64_t stream) {
  std::uint64_t s = base.value;
  std::uint64_t a = splitmix64_next(s);
  s = a ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  std::uint64_t out = splitmix64_next(s);
  return RngSeed{out};
}

// xoshiro256++ (Blackman & Vigna), seeded through SplitMix64.
class Xoshiro256pp {
 public:
  explicit Xoshiro256pp(RngSeed seed) {
    std::uint64_t sm = seed.value;
    for (auto& word : state_) word = splitmix64_next(sm);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4];
};

// Standard-normal generator (Box-Muller, pairwise with a cached spare).
class GaussianRng {
 public:
  explicit GaussianRng(RngSeed seed) : gen_(seed) {}

  double uniform01() { return gen_.uniform01(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - gen_.uniform01();  // (0, 1]
    const double u2 = gen_.uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  Xoshiro256pp gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace planted
