#pragma once

#include <cstdint>
#include <stdexcept>

#include "qkd/bitvec.hpp"
#include "qkd/ntt.hpp"
#include "qkd/rng.hpp"

namespace qkd {

inline constexpr uint64_t kMaxToeplitzInputBits = 1ull << 27;

// Toeplitz matrix T over GF(2), m x n, defined by n + m - 1 seed bits:
// T[i][j] = s[i - j + n - 1]. The seed is expanded deterministically from a
// short exchanged value, so both nodes derive the same matrix.
struct ToeplitzSeed {
  uint64_t n = 0;  // input length
  uint64_t m = 0;  // output length
  BitVec bits;     // n + m - 1 bits

  static ToeplitzSeed expand(uint64_t n, uint64_t m, uint64_t seed_value) {
    if (m > 0 && n == 0) throw std::invalid_argument("ToeplitzSeed: empty input side");
    ToeplitzSeed s;
    s.n = n;
    s.m = m;
    s.bits = BitVec::random(n + m > 0 ? n + m - 1 : 0, derive_seed(seed_value, 0x70656c74ull));
    return s;
  }

  void check(const BitVec& input) const {
    if (input.size() != n) throw std::invalid_argument("toeplitz: input size mismatch");
    if (m && bits.size() != n + m - 1)
      throw std::invalid_argument("toeplitz: seed size mismatch");
  }
};

namespace detail {

inline BitVec reverse_bits(const BitVec& v) {
  BitVec r(v.size());
  for (size_t i = 0; i < v.size(); ++i)
    if (v.get(v.size() - 1 - i)) r.set(i, true);
  return r;
}

}  // namespace detail

// Direct evaluation of a single output bit; the row oracle for spot checks.
// y_i = sum_j s[i + n - 1 - j] x_j, evaluated via the reversed seed so the
// window is ascending.
inline bool toeplitz_row(const ToeplitzSeed& seed, const BitVec& seed_reversed,
                         const BitVec& input, uint64_t row) {
  return input.dot_window(seed_reversed, seed.m - 1 - row, seed.n);
}

// Reference O(n*m) matrix multiplication. Small inputs only.
inline BitVec toeplitz_direct(const ToeplitzSeed& seed, const BitVec& input) {
  seed.check(input);
  BitVec out(seed.m);
  if (seed.m == 0) return out;
  BitVec rev = detail::reverse_bits(seed.bits);
  for (uint64_t i = 0; i < seed.m; ++i)
    if (toeplitz_row(seed, rev, input, i)) out.set(i, true);
  return out;
}

// O(n log n) evaluation: integer convolution of the 0/1 sequences through
// the NTT ring, then the parity of coefficients [n-1, n-1+m). Convolution
// coefficients are bounded by n <= 2^27 < p, so the result is exact.
inline BitVec toeplitz_ntt(const ToeplitzSeed& seed, const BitVec& input) {
  seed.check(input);
  if (seed.n > kMaxToeplitzInputBits)
    throw std::length_error("toeplitz_ntt: input size overflow");
  BitVec out(seed.m);
  if (seed.m == 0) return out;

  uint64_t conv_len = seed.n + seed.bits.size() - 1;
  int log2l = 0;
  while ((uint64_t(1) << log2l) < conv_len) ++log2l;
  Ntt ntt(log2l);
  const size_t L = ntt.size();
  const uint32_t one = ntt.one_mont();

  std::vector<uint32_t> a(L, 0), b(L, 0);
  for (size_t i = 0; i < seed.bits.size(); ++i)
    if (seed.bits.get(i)) a[i] = one;
  for (size_t i = 0; i < seed.n; ++i)
    if (input.get(i)) b[i] = one;

  ntt.forward(a.data());
  ntt.forward(b.data());
  ntt.pointwise(a.data(), b.data());
  b.clear();
  b.shrink_to_fit();
  ntt.inverse(a.data());

  for (uint64_t i = 0; i < seed.m; ++i)
    if (ntt.from_mont(a[seed.n - 1 + i]) & 1u) out.set(i, true);
  return out;
}

}  // namespace qkd
