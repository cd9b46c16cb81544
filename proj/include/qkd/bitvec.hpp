#pragma once

#include <cstdint>
#include <cstddef>
#include <cstring>
#include <stdexcept>
#include <vector>

#if defined(__GNUC__)
#define QKD_POPCOUNT64 __builtin_popcountll
#else
inline int QKD_POPCOUNT64(unsigned long long x) {
  int c = 0;
  while (x) { x &= x - 1; ++c; }
  return c;
}
#endif

namespace qkd {

// Packed bit sequence over 64-bit words, LSB-first within a word.
// The workhorse for sifted keys, syndromes and Toeplitz inputs.
class BitVec {
 public:
  BitVec() = default;
  explicit BitVec(size_t nbits) { resize(nbits); }

  size_t size() const { return nbits_; }
  bool empty() const { return nbits_ == 0; }
  size_t word_count() const { return words_.size(); }
  uint64_t* data() { return words_.data(); }
  const uint64_t* data() const { return words_.data(); }

  void resize(size_t nbits) {
    nbits_ = nbits;
    words_.assign((nbits + 63) / 64, 0);
  }

  void clear() {
    nbits_ = 0;
    words_.clear();
  }

  bool get(size_t i) const {
    return (words_[i >> 6] >> (i & 63)) & 1u;
  }

  void set(size_t i, bool v) {
    uint64_t mask = 1ull << (i & 63);
    if (v) words_[i >> 6] |= mask;
    else words_[i >> 6] &= ~mask;
  }

  void flip(size_t i) { words_[i >> 6] ^= 1ull << (i & 63); }

  void push_back(bool v) {
    if ((nbits_ & 63) == 0) words_.push_back(0);
    if (v) words_[nbits_ >> 6] |= 1ull << (nbits_ & 63);
    ++nbits_;
  }

  // Append the low `count` bits of `bits`.
  void append_bits(uint64_t bits, unsigned count) {
    for (unsigned i = 0; i < count; ++i) push_back((bits >> i) & 1u);
  }

  // Append a slice [from, from+count) of another vector.
  void append_slice(const BitVec& src, size_t from, size_t count) {
    for (size_t i = 0; i < count; ++i) push_back(src.get(from + i));
  }

  size_t popcount() const {
    size_t c = 0;
    for (uint64_t w : words_) c += QKD_POPCOUNT64(w);
    return c;
  }

  void operator^=(const BitVec& other) {
    if (other.nbits_ != nbits_) throw std::invalid_argument("BitVec xor size mismatch");
    for (size_t i = 0; i < words_.size(); ++i) words_[i] ^= other.words_[i];
  }

  bool operator==(const BitVec& other) const {
    return nbits_ == other.nbits_ && words_ == other.words_;
  }
  bool operator!=(const BitVec& other) const { return !(*this == other); }

  // Number of differing bits.
  size_t hamming_distance(const BitVec& other) const {
    if (other.nbits_ != nbits_) throw std::invalid_argument("BitVec size mismatch");
    size_t c = 0;
    for (size_t i = 0; i < words_.size(); ++i)
      c += QKD_POPCOUNT64(words_[i] ^ other.words_[i]);
    return c;
  }

  // Parity of AND with a window of `other` starting at bit offset `off`,
  // taken over `count` bits of *this. Used by the direct Toeplitz oracle.
  bool dot_window(const BitVec& other, size_t off, size_t count) const {
    uint64_t acc = 0;
    size_t full = count / 64;
    for (size_t w = 0; w < full; ++w)
      acc ^= words_[w] & other.extract_word(off + w * 64);
    size_t rem = count % 64;
    if (rem) {
      uint64_t mask = (rem == 64) ? ~0ull : ((1ull << rem) - 1);
      acc ^= words_[full] & other.extract_word(off + full * 64) & mask;
    }
    return QKD_POPCOUNT64(acc) & 1u;
  }

  // 64 bits starting at arbitrary bit offset (zero-padded past the end).
  uint64_t extract_word(size_t bit_off) const {
    size_t w = bit_off >> 6;
    unsigned sh = bit_off & 63;
    uint64_t lo = w < words_.size() ? words_[w] : 0;
    if (sh == 0) return lo;
    uint64_t hi = (w + 1) < words_.size() ? words_[w + 1] : 0;
    return (lo >> sh) | (hi << (64 - sh));
  }

  std::vector<uint8_t> to_bytes() const {
    std::vector<uint8_t> out((nbits_ + 7) / 8, 0);
    if (!out.empty() && !words_.empty())
      std::memcpy(out.data(), words_.data(), out.size());
    return out;
  }

  static BitVec from_bytes(const uint8_t* bytes, size_t nbits) {
    BitVec v(nbits);
    if (nbits) std::memcpy(v.words_.data(), bytes, (nbits + 7) / 8);
    // mask tail garbage
    size_t rem = nbits & 63;
    if (rem) v.words_.back() &= (1ull << rem) - 1;
    return v;
  }

  static BitVec random(size_t nbits, uint64_t seed);

 private:
  size_t nbits_ = 0;
  std::vector<uint64_t> words_;
};

}  // namespace qkd

#include "qkd/rng.hpp"

namespace qkd {

inline BitVec BitVec::random(size_t nbits, uint64_t seed) {
  BitVec v(nbits);
  Xoshiro256 rng(seed);
  for (auto& w : v.words_) w = rng.next();
  size_t rem = nbits & 63;
  if (rem && !v.words_.empty()) v.words_.back() &= (1ull << rem) - 1;
  return v;
}

}  // namespace qkd
