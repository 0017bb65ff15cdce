#ifndef KWLOC_RNG_HPP
#define KWLOC_RNG_HPP

#include <cmath>
#include <cstdint>

namespace kwloc {

// splitmix64, used both as a seed expander and as a cheap stream mixer so
// that per-item streams (per utterance, per epoch, ...) are independent of
// iteration order.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2));
  return splitmix64(s);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

// FNV-1a, for deriving stable per-utterance streams from string ids.
inline uint64_t hash_str(const char* s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (; *s; ++s) h = (h ^ (uint8_t)*s) * 0x100000001b3ull;
  return h;
}

// xoshiro256++ with hand-rolled distributions. The standard <random>
// distributions are implementation-defined, so every sampled value in this
// project comes through here to keep corpora and checkpoints reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
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

  // Uniform in [0, 1).
  double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n >= 1. Modulo bias is ~n/2^64, irrelevant here.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  int range_int(int lo, int hi) {  // inclusive bounds
    return lo + (int)below((uint64_t)(hi - lo + 1));
  }

  // Standard normal via Box-Muller (both values used, cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Beta(kappa, 1): F(x) = x^kappa, so x = u^(1/kappa). Mass near 1 for
  // large kappa. Beta(1, kappa) is its mirror, mass near 0.
  double beta_k1(double kappa) { return std::pow(uniform(), 1.0 / kappa); }
  double beta_1k(double kappa) { return 1.0 - beta_k1(kappa); }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace kwloc

#endif  // KWLOC_RNG_HPP
