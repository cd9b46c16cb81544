#pragma once

#include <cstdint>
#include <cmath>

namespace qkd {

// splitmix64, used for seeding and for deriving independent sub-streams
// from one session seed.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derive a child seed from (seed, tag). Tags keep Alice/Bob, per-stage and
// per-block streams disjoint.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  uint64_t s = seed ^ (0x6a09e667f3bcc909ull + tag * 0x9e3779b97f4a7c15ull);
  splitmix64(s);
  return splitmix64(s);
}

// xoshiro256** by Blackman/Vigna. Deterministic for a fixed seed, which the
// simulator's reproducibility contract depends on.
class Xoshiro256 {
 public:
  explicit Xoshiro256(uint64_t seed = 1) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next() {
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

  // Uniform double in [0, 1).
  double next_double() { return (next() >> 11) * 0x1.0p-53; }

  // Bernoulli with probability p, consuming one draw.
  bool bernoulli(double p) {
    if (p <= 0.0) { next(); return false; }
    if (p >= 1.0) { next(); return true; }
    return next_double() < p;
  }

  // Poisson by inversion; intended for small means (photon statistics).
  uint32_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    double u = next_double();
    double p = std::exp(-mean);
    double cdf = p;
    uint32_t k = 0;
    while (u > cdf && k < 200) {
      ++k;
      p *= mean / k;
      cdf += p;
    }
    return k;
  }

  // Integer in [0, n) without modulo bias for the n we use (n << 2^64).
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

// Poisson sampler with the mean fixed at construction; exp(-mean) is
// precomputed so the hot path of the photon simulator is one compare.
class PoissonInv {
 public:
  PoissonInv() = default;
  explicit PoissonInv(double mean)
      : mean_(mean), exp_neg_(mean > 0 ? std::exp(-mean) : 1.0) {}

  uint32_t sample(Xoshiro256& rng) const {
    double u = rng.next_double();
    if (u < exp_neg_) return 0;
    double p = exp_neg_;
    double cdf = p;
    uint32_t k = 0;
    while (u > cdf && k < 200) {
      ++k;
      p *= mean_ / k;
      cdf += p;
    }
    return k;
  }

  double mean() const { return mean_; }

 private:
  double mean_ = 0.0;
  double exp_neg_ = 1.0;
};

}  // namespace qkd
