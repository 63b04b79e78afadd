#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace etclip {

// PCG32. Self-contained so that generated streams are identical across
// platforms and serializable into checkpoints.
struct Rng {
  std::uint64_t state = 0x853c49e6748fea9bULL;
  std::uint64_t inc = 0xda3e39cb94b95bdbULL;

  Rng() = default;

  Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    state = 0;
    inc = (stream << 1u) | 1u;
    next_u32();
    state += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state;
    state = old * 6364136223846793005ULL + inc;
    std::uint32_t xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32u) | next_u32();
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u32()) * (1.0 / 4294967296.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    if (n <= 1) return 0;
    return static_cast<int>(next_u32() % static_cast<std::uint32_t>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without a cached spare; two draws per sample keeps the
  // stream position a pure function of the call count.
  double gaussian() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::vector<std::uint64_t> serialize() const { return {state, inc}; }

  void restore(const std::vector<std::uint64_t>& s) {
    if (s.size() >= 2) {
      state = s[0];
      inc = s[1];
    }
  }
};

// Derives an independent child stream, e.g. per-episode seeds.
inline Rng derive_rng(std::uint64_t master_seed, std::uint64_t stream) {
  return Rng(master_seed ^ (stream * 0x9e3779b97f4a7c15ULL), stream);
}

}  // namespace etclip
