#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "qkd/bitvec.hpp"
#include "qkd/ldpc.hpp"
#include "qkd/params.hpp"
#include "qkd/rng.hpp"
#include "qkd/sifting.hpp"

namespace qkd {

inline constexpr size_t kEstSampleBits = 8192;
inline constexpr size_t kVerifyTagBits = 64;
inline constexpr size_t kEcPayloadBits = kEcBlockBits - kEstSampleBits;  // 1040384
inline constexpr double kFTargetDefault = 1.10;
inline constexpr double kQberMarginBase = 0.0065;
inline constexpr double kQberCeiling = 0.11;

// Margin grows with the estimate; the relative entropy boost of a fixed
// margin shrinks as the QBER rises.
inline double qber_margin(double qber_est) {
  double m = kQberMarginBase;
  if (qber_est > 0.03) m += 0.30 * (qber_est - 0.03);
  return m;
}

// Mismatch fraction between the two disclosed samples.
inline double estimate_qber(const BitVec& alice_sample, const BitVec& bob_sample) {
  if (alice_sample.size() != bob_sample.size())
    throw std::invalid_argument("estimate_qber: sample length mismatch");
  if (alice_sample.empty()) return 0.0;
  return double(alice_sample.hamming_distance(bob_sample)) / alice_sample.size();
}

// Sample positions for one block, from shared randomness; sorted, distinct.
inline std::vector<uint32_t> sample_positions(uint64_t session_seed, uint64_t block_id,
                                              size_t block_bits = kEcBlockBits,
                                              size_t count = kEstSampleBits) {
  Xoshiro256 rng(derive_seed(session_seed, block_id * 2 + 11));
  BitVec taken(block_bits);
  std::vector<uint32_t> pos;
  pos.reserve(count);
  while (pos.size() < count) {
    uint32_t p = uint32_t(rng.below(block_bits));
    if (!taken.get(p)) {
      taken.set(p, true);
      pos.push_back(p);
    }
  }
  std::sort(pos.begin(), pos.end());
  return pos;
}

// Split one sifted block into the disclosed sample and the key payload.
inline void split_sample(const BitVec& block, const std::vector<uint32_t>& positions,
                         BitVec& sample, BitVec& payload) {
  sample = BitVec();
  payload = BitVec();
  size_t p = 0;
  for (size_t i = 0; i < block.size(); ++i) {
    if (p < positions.size() && positions[p] == i) {
      sample.push_back(block.get(i));
      ++p;
    } else {
      payload.push_back(block.get(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Rate selection: effective rate 1 - f_target * h(qber + margin), realized
// as the lowest adequate mother code plus per-codeword shortening.

struct RateSelection {
  const LdpcCode* code = nullptr;
  double target_rate = 0.0;
  double effective_rate = 0.0;
  size_t codewords = 0;
  size_t syndrome_bits_total = 0;

  // balanced data split: first `long_count` codewords carry one extra bit
  size_t data_base = 0;
  size_t long_count = 0;

  size_t data_len(size_t cw) const { return data_base + (cw < long_count ? 1 : 0); }
};

inline std::optional<RateSelection> select_rate(const CodeFamily& family,
                                                double qber_est, double margin,
                                                size_t payload_bits = kEcPayloadBits,
                                                double f_target = kFTargetDefault) {
  double q = qber_est + margin;
  if (q >= kQberCeiling) return std::nullopt;
  RateSelection sel;
  sel.target_rate = 1.0 - f_target * binary_entropy(std::max(q, 0.0));
  if (sel.target_rate > family.highest_rate()) sel.target_rate = family.highest_rate();
  sel.code = family.mother_for(sel.target_rate);
  if (!sel.code) return std::nullopt;

  size_t syn_per_cw = sel.code->syndrome_bits();
  size_t data_target = size_t(double(syn_per_cw) / (1.0 - sel.target_rate));
  if (data_target > sel.code->block_bits()) data_target = sel.code->block_bits();
  if (data_target == 0) return std::nullopt;
  // codeword count rounded to the nearest achievable syndrome fraction; the
  // half-step rate overshoot is blanketed by the selection margin
  sel.codewords = size_t(double(payload_bits) / data_target + 0.5);
  if (sel.codewords == 0) sel.codewords = 1;
  while (payload_bits > sel.codewords * sel.code->block_bits()) ++sel.codewords;
  sel.data_base = payload_bits / sel.codewords;
  sel.long_count = payload_bits % sel.codewords;
  sel.syndrome_bits_total = sel.codewords * syn_per_cw;
  sel.effective_rate = 1.0 - double(sel.syndrome_bits_total) / payload_bits;
  return sel;
}

// ---------------------------------------------------------------------------
// 64-bit epsilon-universal verification tag: polynomial evaluation over
// GF(2^64) at a fresh shared point per block.

namespace detail {

// GF(2^64) with modulus x^64 + x^4 + x^3 + x + 1.
inline uint64_t gf64_mul(uint64_t a, uint64_t b) {
  uint64_t r = 0;
  while (b) {
    if (b & 1) r ^= a;
    uint64_t hi = a >> 63;
    a <<= 1;
    if (hi) a ^= 0x1b;
    b >>= 1;
  }
  return r;
}

}  // namespace detail

inline uint64_t verify_tag(const BitVec& key, uint64_t r_point) {
  // Horner evaluation of sum c_i r^{k-i}, then one extra multiply so the
  // empty key maps to a fixed value distinct from the zero polynomial trick.
  uint64_t tag = 0;
  size_t words = key.word_count();
  for (size_t i = 0; i < words; ++i)
    tag = detail::gf64_mul(tag, r_point) ^ key.data()[i];
  tag = detail::gf64_mul(tag, r_point) ^ uint64_t(key.size());
  return tag;
}

// ---------------------------------------------------------------------------
// Block messages and engines.

struct EcSyndromeMsg {
  uint64_t block_id = 0;
  uint8_t discard = 0;      // no rate available; both sides drop the block
  uint8_t rate_index = 0;   // into CodeFamily::codes()
  double qber_used = 0.0;   // estimator value the layout derives from
  double margin_used = 0.0;
  BitVec alice_sample;      // kEstSampleBits at the shared positions
  BitVec syndrome_bits;     // codewords * syndrome_bits per mother
  uint64_t alice_tag = 0;
};

struct EcVerifyMsg {
  uint64_t block_id = 0;
  uint8_t ok = 0;
  uint64_t bob_tag = 0;
  double qber_sample = 0.0;      // mismatch fraction on the disclosed sample
  uint64_t realized_errors = 0;  // exact flips Bob applied (0 if failed)
};

// Spec-level record of one processed block.
struct ECBlock {
  uint64_t block_id = 0;
  double qber_estimated = 0.0;     // sample-based
  double code_rate_selected = 0.0; // effective rate after trim
  size_t leak_bits = 0;            // syndrome + sample + tag
  bool corrected = false;
  double f_ec_realized = 0.0;      // leak / (payload * h(qber_estimated))
  BitVec payload;                  // corrected payload (identical on both sides)
  DecoyTally tally_at_completion;
  uint64_t realized_errors = 0;
};

// Running QBER estimate for rate selection: exponentially weighted realized
// error rates of verified blocks, seeded by an initial guess until the
// first block lands.
class QberTracker {
 public:
  explicit QberTracker(double initial = 0.05) : estimate_(initial) {}

  void set_initial(double q) {
    if (!have_realized_) estimate_ = clamp(q);
  }

  void on_realized(double q) {
    if (!have_realized_) {
      estimate_ = clamp(q);
      have_realized_ = true;
    } else {
      estimate_ = clamp(0.75 * estimate_ + 0.25 * q);
    }
  }

  double value() const { return estimate_; }

 private:
  static double clamp(double q) { return std::min(std::max(q, 0.001), 0.25); }
  double estimate_;
  bool have_realized_ = false;
};

namespace detail {

inline size_t rate_index_of(const CodeFamily& family, const LdpcCode* code) {
  for (size_t i = 0; i < family.codes().size(); ++i)
    if (&family.codes()[i] == code) return i;
  throw std::logic_error("rate_index_of: code not in family");
}

// deterministic layout both sides derive from the syndrome message header
inline std::optional<RateSelection> layout_from_msg(const CodeFamily& family,
                                                    const EcSyndromeMsg& msg,
                                                    size_t payload_bits) {
  auto sel = select_rate(family, msg.qber_used, msg.margin_used, payload_bits);
  if (sel && detail::rate_index_of(family, sel->code) != msg.rate_index)
    throw std::runtime_error("ec: rate index mismatch between peers");
  return sel;
}

}  // namespace detail

class EcAlice {
 public:
  EcAlice(const CodeFamily& family, uint64_t session_seed, double initial_qber = 0.05)
      : family_(family), session_seed_(session_seed), tracker_(initial_qber) {}

  QberTracker& tracker() { return tracker_; }

  // Build the syndrome message for a completed sifted block. Keeps the
  // pending payload until the verify reply arrives.
  EcSyndromeMsg process_block(const SiftedBlock& block) {
    if (block.bits.size() != kEcBlockBits)
      throw std::invalid_argument("ec: sifted block must be 2^20 bits");
    EcSyndromeMsg msg;
    msg.block_id = next_block_id_++;

    auto positions = sample_positions(session_seed_, msg.block_id);
    BitVec payload;
    split_sample(block.bits, positions, msg.alice_sample, payload);

    msg.qber_used = tracker_.value();
    msg.margin_used = qber_margin(msg.qber_used);
    auto sel = select_rate(family_, msg.qber_used, msg.margin_used, payload.size());
    if (!sel) {
      // no usable rate: both sides drop the block; the disclosed sample is
      // still accounted when the (negative) verify comes back
      msg.discard = 1;
      msg.alice_sample = BitVec();
      Pending p;
      p.block_id = msg.block_id;
      p.selection = RateSelection{};
      p.tally = block.tally_at_completion;
      pending_.push_back(std::move(p));
      return msg;
    }
    msg.rate_index = uint8_t(detail::rate_index_of(family_, sel->code));

    // per-codeword syndromes over the shortened layout
    msg.syndrome_bits = BitVec();
    size_t off = 0;
    for (size_t cw = 0; cw < sel->codewords; ++cw) {
      size_t dlen = sel->data_len(cw);
      BitVec word(sel->code->block_bits());
      for (size_t i = 0; i < dlen; ++i)
        word.set(i, payload.get(off + i));
      off += dlen;
      BitVec syn = syndrome(*sel->code, word);
      msg.syndrome_bits.append_slice(syn, 0, syn.size());
    }

    msg.alice_tag = verify_tag(payload, verify_point(msg.block_id));

    Pending p;
    p.block_id = msg.block_id;
    p.payload = std::move(payload);
    p.selection = *sel;
    p.tally = block.tally_at_completion;
    pending_.push_back(std::move(p));
    return msg;
  }

  // Returns the finished block record (corrected or discarded).
  ECBlock on_verify(const EcVerifyMsg& v) {
    for (size_t i = 0; i < pending_.size(); ++i) {
      if (pending_[i].block_id != v.block_id) continue;
      Pending p = std::move(pending_[i]);
      pending_.erase(pending_.begin() + i);

      ECBlock out;
      out.block_id = v.block_id;
      out.qber_estimated = v.qber_sample;
      out.code_rate_selected = p.selection.effective_rate;
      out.leak_bits = p.selection.code
                          ? p.selection.syndrome_bits_total + kEstSampleBits + kVerifyTagBits
                          : 0;
      out.corrected = v.ok != 0 && p.selection.code != nullptr;
      out.realized_errors = v.realized_errors;
      out.tally_at_completion = p.tally;
      double h = binary_entropy(std::min(std::max(v.qber_sample, 1e-6), 0.5));
      out.f_ec_realized = h > 0 ? double(out.leak_bits) / (double(p.payload.size()) * h) : 0.0;
      if (out.corrected) {
        out.payload = std::move(p.payload);
        tracker_.on_realized(double(v.realized_errors) / out.payload.size());
      }
      return out;
    }
    throw std::runtime_error("ec: verify for unknown block");
  }

  uint64_t verify_point(uint64_t block_id) const {
    uint64_t r = derive_seed(session_seed_, block_id * 2 + 21);
    return r ? r : 1;
  }

  size_t pending_count() const { return pending_.size(); }

 private:
  struct Pending {
    uint64_t block_id;
    BitVec payload;
    RateSelection selection;
    DecoyTally tally;
  };

  const CodeFamily& family_;
  uint64_t session_seed_;
  QberTracker tracker_;
  uint64_t next_block_id_ = 0;
  std::vector<Pending> pending_;
};

class EcBob {
 public:
  EcBob(const CodeFamily& family, uint64_t session_seed, int decode_threads = 2)
      : family_(family), session_seed_(session_seed), decode_threads_(decode_threads) {}

  // Decode one block against Alice's syndrome message. Returns the verify
  // reply plus the finished record.
  std::pair<EcVerifyMsg, ECBlock> on_syndrome(const EcSyndromeMsg& msg,
                                              const SiftedBlock& block) {
    if (block.bits.size() != kEcBlockBits)
      throw std::invalid_argument("ec: sifted block must be 2^20 bits");
    EcVerifyMsg reply;
    reply.block_id = msg.block_id;

    ECBlock out;
    out.block_id = msg.block_id;
    out.tally_at_completion = block.tally_at_completion;

    auto positions = sample_positions(session_seed_, msg.block_id);
    BitVec sample, payload;
    split_sample(block.bits, positions, sample, payload);

    if (msg.discard) {
      out.corrected = false;
      out.leak_bits = 0;  // nothing was disclosed for this block
      return {reply, out};
    }

    reply.qber_sample = estimate_qber(msg.alice_sample, sample);
    out.qber_estimated = reply.qber_sample;

    auto sel = detail::layout_from_msg(family_, msg, payload.size());
    if (!sel) throw std::runtime_error("ec: peer layout unavailable");
    out.code_rate_selected = sel->effective_rate;
    out.leak_bits = sel->syndrome_bits_total + kEstSampleBits + kVerifyTagBits;

    // decode sub-blocks toward Alice's syndrome, parallel across codewords;
    // results are per-codeword and independent of the schedule
    double llr_q = std::max(reply.qber_sample, msg.qber_used);
    size_t syn_per_cw = sel->code->syndrome_bits();
    std::vector<size_t> data_off(sel->codewords + 1, 0);
    for (size_t cw = 0; cw < sel->codewords; ++cw)
      data_off[cw + 1] = data_off[cw] + sel->data_len(cw);

    std::vector<uint8_t> cw_ok(sel->codewords, 0);
    std::vector<BitVec> cw_bits(sel->codewords);
    auto decode_range = [&](size_t begin, size_t end) {
      SyndromeDecoder dec(*sel->code);
      for (size_t cw = begin; cw < end; ++cw) {
        size_t dlen = sel->data_len(cw);
        BitVec word(sel->code->block_bits());
        for (size_t i = 0; i < dlen; ++i)
          word.set(i, payload.get(data_off[cw] + i));
        BitVec syn(syn_per_cw);
        for (size_t i = 0; i < syn_per_cw; ++i)
          syn.set(i, msg.syndrome_bits.get(cw * syn_per_cw + i));
        DecodeResult r = dec.decode(word, syn, llr_q, kDefaultDecodeIters, dlen);
        if (r.ok) {
          cw_ok[cw] = 1;
          cw_bits[cw] = std::move(r.corrected);
        }
      }
    };
    if (decode_threads_ > 1 && sel->codewords > 1) {
      size_t mid = sel->codewords / 2;
      std::thread t([&] { decode_range(0, mid); });
      decode_range(mid, sel->codewords);
      t.join();
    } else {
      decode_range(0, sel->codewords);
    }

    bool all_ok = true;
    for (auto ok : cw_ok) all_ok &= ok != 0;
    BitVec corrected;
    if (all_ok) {
      for (size_t cw = 0; cw < sel->codewords; ++cw)
        for (size_t i = 0; i < sel->data_len(cw); ++i)
          corrected.push_back(cw_bits[cw].get(i));
    }

    if (all_ok) {
      uint64_t tag = verify_tag(corrected, verify_point(msg.block_id));
      reply.bob_tag = tag;
      if (tag == msg.alice_tag) {
        reply.ok = 1;
        reply.realized_errors = corrected.hamming_distance(payload);
        out.corrected = true;
        out.payload = std::move(corrected);
        out.realized_errors = reply.realized_errors;
        tracker_.on_realized(double(reply.realized_errors) / payload.size());
      }
    }
    double h = binary_entropy(std::min(std::max(reply.qber_sample, 1e-6), 0.5));
    out.f_ec_realized = h > 0 ? double(out.leak_bits) / (double(payload.size()) * h) : 0.0;
    return {reply, out};
  }

  QberTracker& tracker() { return tracker_; }

  uint64_t verify_point(uint64_t block_id) const {
    uint64_t r = derive_seed(session_seed_, block_id * 2 + 21);
    return r ? r : 1;
  }

 private:
  const CodeFamily& family_;
  uint64_t session_seed_;
  int decode_threads_;
  QberTracker tracker_;
};

}  // namespace qkd
