#pragma once

#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

namespace qkd {

// Number-theoretic transform over p = 3 * 2^30 + 1. The 2-adic order of
// p - 1 admits transforms up to length 2^30, comfortably above the 2^28
// needed for full privacy-amplification frames. All arithmetic is exact;
// 0/1 convolution coefficients stay below p, so GF(2) parities computed
// through this ring are exact as well.
class Ntt {
 public:
  static constexpr uint32_t kPrime = 3221225473u;  // 3 * 2^30 + 1
  static constexpr int kMaxLog2 = 30;

  explicit Ntt(int log2n) : log2n_(log2n), n_(size_t(1) << log2n) {
    if (log2n < 0 || log2n > kMaxLog2)
      throw std::length_error("Ntt: transform length overflow");
    setup_montgomery();
    find_generator();
    root_ = pow_mod(generator_, (kPrime - 1) >> log2n_);
    root_inv_ = pow_mod(root_, kPrime - 2);
    n_inv_mont_ = to_mont(pow_mod(uint32_t(n_ % kPrime), kPrime - 2));
    one_mont_ = to_mont(1);
  }

  size_t size() const { return n_; }
  uint32_t one_mont() const { return one_mont_; }

  uint32_t to_mont(uint32_t a) const { return mont_mul(a, r2_); }
  uint32_t from_mont(uint32_t a) const { return redc(a); }

  uint32_t mont_mul(uint32_t a, uint32_t b) const {
    return redc(uint64_t(a) * b);
  }

  // Forward transform, natural order in, bit-reversed order out (DIF).
  void forward(uint32_t* a) const { transform(a, root_, false); }

  // Inverse transform, bit-reversed order in, natural order out (DIT),
  // including the 1/n scaling.
  void inverse(uint32_t* a) const {
    transform(a, root_inv_, true);
    auto scale = [&](size_t lo, size_t hi) {
      for (size_t i = lo; i < hi; ++i) a[i] = mont_mul(a[i], n_inv_mont_);
    };
    run_split(scale);
  }

  void pointwise(uint32_t* a, const uint32_t* b) const {
    auto mul = [&](size_t lo, size_t hi) {
      for (size_t i = lo; i < hi; ++i) a[i] = mont_mul(a[i], b[i]);
    };
    run_split(mul);
  }

 private:
  static uint32_t add_mod(uint32_t a, uint32_t b) {
    uint64_t s = uint64_t(a) + b;
    if (s >= kPrime) s -= kPrime;
    return uint32_t(s);
  }
  static uint32_t sub_mod(uint32_t a, uint32_t b) {
    return a >= b ? a - b : a + (kPrime - b);
  }

  // (t + m*p) >> 32 without overflowing 64 bits: the low words cancel by
  // construction, leaving a carry iff the low word of t is nonzero.
  uint32_t redc(uint64_t t) const {
    uint32_t m = uint32_t(t) * p_inv_neg_;
    uint64_t mp = uint64_t(m) * kPrime;
    uint64_t u = (t >> 32) + (mp >> 32) + (uint32_t(t) != 0);
    if (u >= kPrime) u -= kPrime;
    return uint32_t(u);
  }

  static uint32_t mul_mod64(uint32_t a, uint32_t b) {
    return uint32_t(uint64_t(a) * b % kPrime);
  }

  static uint32_t pow_mod(uint32_t base, uint32_t exp) {
    uint32_t r = 1;
    while (exp) {
      if (exp & 1) r = mul_mod64(r, base);
      base = mul_mod64(base, base);
      exp >>= 1;
    }
    return r;
  }

  void setup_montgomery() {
    // p^{-1} mod 2^32 by Newton iteration, then negate.
    uint32_t inv = 1;
    for (int i = 0; i < 5; ++i) inv *= 2 - kPrime * inv;
    p_inv_neg_ = ~inv + 1;
    // R^2 mod p with R = 2^32
    uint64_t r = (uint64_t(1) << 32) % kPrime;
    r2_ = uint32_t(r * r % kPrime);
  }

  void find_generator() {
    for (uint32_t g = 2; g < 64; ++g) {
      if (pow_mod(g, (kPrime - 1) / 2) != 1 && pow_mod(g, (kPrime - 1) / 3) != 1) {
        generator_ = g;
        return;
      }
    }
    throw std::runtime_error("Ntt: no generator found");
  }

  // Two-level twiddle tables for the current stage root: w^j =
  // lo[j & kLoMask] * hi[j >> kLoBits], so no O(n) table is ever built.
  static constexpr int kLoBits = 12;
  static constexpr size_t kLoSize = size_t(1) << kLoBits;
  static constexpr size_t kLoMask = kLoSize - 1;

  struct StageTwiddles {
    std::vector<uint32_t> lo, hi;  // Montgomery form
  };

  void build_stage(StageTwiddles& tw, uint32_t w_stage, size_t half) const {
    uint32_t w_mont = to_mont(w_stage);
    size_t lo_n = half < kLoSize ? half : kLoSize;
    tw.lo.resize(lo_n);
    tw.lo[0] = one_mont_;
    for (size_t j = 1; j < lo_n; ++j) tw.lo[j] = mont_mul(tw.lo[j - 1], w_mont);
    size_t hi_n = (half + kLoSize - 1) >> kLoBits;
    tw.hi.assign(hi_n ? hi_n : 1, one_mont_);
    if (hi_n > 1) {
      uint32_t w_hi = to_mont(pow_mod(w_stage, uint32_t(kLoSize)));
      for (size_t j = 1; j < hi_n; ++j) tw.hi[j] = mont_mul(tw.hi[j - 1], w_hi);
    }
  }

  uint32_t twiddle(const StageTwiddles& tw, size_t j) const {
    uint32_t t = tw.lo[j & kLoMask];
    size_t hi = j >> kLoBits;
    return hi ? mont_mul(t, tw.hi[hi]) : t;
  }

  template <typename F>
  void run_split(F&& f) const {
    if (n_ < (size_t(1) << 20)) {
      f(0, n_);
      return;
    }
    size_t mid = n_ / 2;
    std::thread t([&] { f(0, mid); });
    f(mid, n_);
    t.join();
  }

  void transform(uint32_t* a, uint32_t root, bool inverse_dir) const {
    StageTwiddles tw;
    if (!inverse_dir) {
      // Gentleman-Sande, half from n/2 down to 1
      for (size_t half = n_ >> 1; half >= 1; half >>= 1) {
        uint32_t w_stage = pow_mod(root, uint32_t(n_ / (2 * half)));
        build_stage(tw, w_stage, half);
        stage_dif(a, half, tw);
        if (half == 1) break;
      }
    } else {
      // Cooley-Tukey, half from 1 up to n/2
      for (size_t half = 1; half <= (n_ >> 1); half <<= 1) {
        uint32_t w_stage = pow_mod(root, uint32_t(n_ / (2 * half)));
        build_stage(tw, w_stage, half);
        stage_dit(a, half, tw);
      }
    }
  }

  void stage_dif(uint32_t* a, size_t half, const StageTwiddles& tw) const {
    auto body = [&](size_t block_lo, size_t block_hi, size_t j_lo, size_t j_hi) {
      for (size_t s = block_lo; s < block_hi; s += 2 * half) {
        for (size_t j = j_lo; j < j_hi; ++j) {
          uint32_t u = a[s + j];
          uint32_t v = a[s + j + half];
          a[s + j] = add_mod(u, v);
          a[s + j + half] = mont_mul(sub_mod(u, v), twiddle(tw, j));
        }
      }
    };
    parallel_stage(body, half);
  }

  void stage_dit(uint32_t* a, size_t half, const StageTwiddles& tw) const {
    auto body = [&](size_t block_lo, size_t block_hi, size_t j_lo, size_t j_hi) {
      for (size_t s = block_lo; s < block_hi; s += 2 * half) {
        for (size_t j = j_lo; j < j_hi; ++j) {
          uint32_t u = a[s + j];
          uint32_t v = mont_mul(a[s + j + half], twiddle(tw, j));
          a[s + j] = add_mod(u, v);
          a[s + j + half] = sub_mod(u, v);
        }
      }
    };
    parallel_stage(body, half);
  }

  template <typename Body>
  void parallel_stage(Body&& body, size_t half) const {
    if (n_ < (size_t(1) << 20)) {
      body(0, n_, 0, half);
      return;
    }
    size_t blocks = n_ / (2 * half);
    if (blocks >= 2) {
      size_t mid_block = (blocks / 2) * 2 * half;
      std::thread t([&] { body(0, mid_block, 0, half); });
      body(mid_block, n_, 0, half);
      t.join();
    } else {
      size_t jmid = half / 2;
      std::thread t([&] { body(0, n_, 0, jmid); });
      body(0, n_, jmid, half);
      t.join();
    }
  }

  int log2n_;
  size_t n_;
  uint32_t p_inv_neg_ = 0, r2_ = 0;
  uint32_t generator_ = 0, root_ = 0, root_inv_ = 0;
  uint32_t n_inv_mont_ = 0, one_mont_ = 0;
};

}  // namespace qkd
