#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "qkd/bitvec.hpp"
#include "qkd/params.hpp"
#include "qkd/photonic.hpp"
#include "qkd/rng.hpp"

namespace qkd {

// Per (intensity, basis) protocol statistics. Error counts are exact for X
// (fully disclosed); Z error counts stay zero outside simulator oracles.
struct DecoyTally {
  uint64_t sent[3][2] = {};
  uint64_t detected[3][2] = {};
  uint64_t errors[3][2] = {};

  uint64_t sent_total() const {
    uint64_t t = 0;
    for (auto& a : sent) for (auto v : a) t += v;
    return t;
  }

  DecoyTally operator-(const DecoyTally& o) const {
    DecoyTally d;
    for (int i = 0; i < 3; ++i)
      for (int b = 0; b < 2; ++b) {
        d.sent[i][b] = sent[i][b] - o.sent[i][b];
        d.detected[i][b] = detected[i][b] - o.detected[i][b];
        d.errors[i][b] = errors[i][b] - o.errors[i][b];
      }
    return d;
  }

  void operator+=(const DecoyTally& o) {
    for (int i = 0; i < 3; ++i)
      for (int b = 0; b < 2; ++b) {
        sent[i][b] += o.sent[i][b];
        detected[i][b] += o.detected[i][b];
        errors[i][b] += o.errors[i][b];
      }
  }
};

// Matched-basis Z signal-intensity key bits of one side, in slot order.
// The tally snapshot is the cumulative state at block completion, used for
// per-frame accounting downstream.
struct SiftedBlock {
  BitVec bits;
  std::vector<uint64_t> slot_refs;
  DecoyTally tally_at_completion;
};

// Fully disclosed X-basis record.
struct XDisclosure {
  uint64_t slot_index;
  Intensity intensity;
  uint8_t alice_bit;
  uint8_t bob_bit;
};

struct XBasisDisclosure {
  std::vector<XDisclosure> records;
};

// --- sifting message payloads (framing lives in the wire module) ----------

struct SiftAnnounceRecord {
  uint32_t slot_offset;  // from batch start_slot
  uint8_t basis;         // Bob's measurement basis
  uint8_t bit;           // Bob's measured bit, meaningful when basis == X
};

struct SiftAnnounce {
  uint64_t start_slot = 0;
  uint64_t end_slot = 0;  // inclusive; sent counts cover [start, end]
  std::vector<SiftAnnounceRecord> records;
};

enum class Disposition : uint8_t {
  drop_stab = 0,
  drop_mismatch = 1,
  keep_key = 2,
  tally_z = 3,
  tally_x = 4,
};

struct SiftReplyRecord {
  uint8_t disposition;
  uint8_t intensity;
  uint8_t alice_x_bit;  // meaningful for tally_x
};

struct SiftReply {
  uint64_t start_slot = 0;
  uint64_t end_slot = 0;
  std::vector<SiftReplyRecord> records;
  uint64_t sent_cumulative[3][2] = {};  // through end_slot
};

inline constexpr size_t kSiftAnnounceBatch = 1u << 16;
inline constexpr size_t kEcBlockBits = 1u << 20;

// ---------------------------------------------------------------------------
// Bob's engine: draws his measurement basis per detection, announces, and on
// the reply builds his sifted key and tally.

class SiftBob {
 public:
  SiftBob(const ProtocolParams& p, uint64_t basis_seed, size_t block_bits = kEcBlockBits)
      : params_(p), rng_(basis_seed), block_bits_(block_bits) {}

  // Feed detections covering slots [range_start, range_end]. Announces are
  // emitted per kSiftAnnounceBatch detections; range boundaries close one.
  std::vector<SiftAnnounce> add_events(const std::vector<DetectionEvent>& events,
                                       uint64_t range_start, uint64_t range_end) {
    std::vector<SiftAnnounce> out;
    if (!open_) {
      current_.start_slot = range_start;
      current_.records.clear();
      open_ = true;
    }
    for (const auto& ev : events) {
      SiftAnnounceRecord rec;
      rec.slot_offset = uint32_t(ev.slot_index - current_.start_slot);
      rec.basis = rng_.bernoulli(params_.prob_x) ? 1 : 0;
      rec.bit = ev.detector;
      current_.records.push_back(rec);
      if (current_.records.size() >= kSiftAnnounceBatch) {
        current_.end_slot = ev.slot_index;
        out.push_back(std::move(current_));
        current_ = SiftAnnounce{};
        current_.start_slot = ev.slot_index + 1;
      }
    }
    // close at the generation-batch boundary so sent counts line up
    current_.end_slot = range_end;
    out.push_back(std::move(current_));
    current_ = SiftAnnounce{};
    open_ = false;
    return out;
  }

  void on_reply(const SiftReply& reply, const SiftAnnounce& announce) {
    if (reply.records.size() != announce.records.size())
      throw std::runtime_error("sift reply does not match announce");
    for (int i = 0; i < 3; ++i)
      for (int b = 0; b < 2; ++b) tally_.sent[i][b] = reply.sent_cumulative[i][b];

    for (size_t k = 0; k < reply.records.size(); ++k) {
      const auto& rr = reply.records[k];
      const auto& ar = announce.records[k];
      uint64_t slot = announce.start_slot + ar.slot_offset;
      switch (Disposition(rr.disposition)) {
        case Disposition::drop_stab:
        case Disposition::drop_mismatch:
          break;
        case Disposition::keep_key:
          tally_.detected[rr.intensity][0]++;
          block_.bits.push_back(ar.bit);
          block_.slot_refs.push_back(slot);
          maybe_complete_block();
          break;
        case Disposition::tally_z:
          tally_.detected[rr.intensity][0]++;
          break;
        case Disposition::tally_x:
          tally_.detected[rr.intensity][1]++;
          if (rr.alice_x_bit != ar.bit) tally_.errors[rr.intensity][1]++;
          disclosed_.records.push_back(
              {slot, Intensity(rr.intensity), rr.alice_x_bit, ar.bit});
          break;
      }
    }
  }

  std::vector<SiftedBlock> take_completed_blocks() { return std::move(completed_); }
  const DecoyTally& tally() const { return tally_; }
  const XBasisDisclosure& disclosed() const { return disclosed_; }
  const SiftedBlock& partial_block() const { return block_; }

 private:
  void maybe_complete_block() {
    if (block_.bits.size() >= block_bits_) {
      block_.tally_at_completion = tally_;
      completed_.push_back(std::move(block_));
      block_ = SiftedBlock{};
    }
  }

  ProtocolParams params_;
  Xoshiro256 rng_;
  size_t block_bits_;
  SiftAnnounce current_;
  bool open_ = false;
  DecoyTally tally_;
  XBasisDisclosure disclosed_;
  SiftedBlock block_;
  std::vector<SiftedBlock> completed_;
};

// ---------------------------------------------------------------------------
// Alice's engine: holds her pulse window, classifies announced detections,
// and produces replies plus her own sifted key.

class SiftAlice {
 public:
  explicit SiftAlice(const ProtocolParams& p, size_t block_bits = kEcBlockBits)
      : params_(p), block_bits_(block_bits) {}

  void add_pulses(PulseBatch batch) {
    if (!cursor_set_) {
      sent_cursor_ = batch.base_slot;
      cursor_set_ = true;
    }
    window_.push_back(std::move(batch));
  }

  SiftReply on_announce(const SiftAnnounce& announce) {
    SiftReply reply;
    reply.start_slot = announce.start_slot;
    reply.end_slot = announce.end_slot;
    reply.records.reserve(announce.records.size());

    // account sent pulses over the whole announced range first
    accumulate_sent(announce.end_slot);

    for (const auto& ar : announce.records) {
      uint64_t slot = announce.start_slot + ar.slot_offset;
      PulseRecord pr = pulse_at(slot);
      SiftReplyRecord rr{};
      rr.intensity = uint8_t(pr.intensity);
      if (pr.is_stabilization) {
        rr.disposition = uint8_t(Disposition::drop_stab);
      } else if (uint8_t(pr.basis) != ar.basis) {
        rr.disposition = uint8_t(Disposition::drop_mismatch);
      } else if (pr.basis == Basis::Z) {
        if (pr.intensity == Intensity::signal) {
          rr.disposition = uint8_t(Disposition::keep_key);
          tally_.detected[rr.intensity][0]++;
          block_.bits.push_back(pr.bit);
          block_.slot_refs.push_back(slot);
          maybe_complete_block();
        } else {
          rr.disposition = uint8_t(Disposition::tally_z);
          tally_.detected[rr.intensity][0]++;
        }
      } else {
        rr.disposition = uint8_t(Disposition::tally_x);
        rr.alice_x_bit = pr.bit;
        tally_.detected[rr.intensity][1]++;
        if (pr.bit != ar.bit) tally_.errors[rr.intensity][1]++;
        disclosed_.records.push_back({slot, pr.intensity, pr.bit, ar.bit});
      }
      reply.records.push_back(rr);
    }

    for (int i = 0; i < 3; ++i)
      for (int b = 0; b < 2; ++b) reply.sent_cumulative[i][b] = tally_.sent[i][b];

    prune(announce.end_slot);
    return reply;
  }

  std::vector<SiftedBlock> take_completed_blocks() { return std::move(completed_); }
  const DecoyTally& tally() const { return tally_; }
  const XBasisDisclosure& disclosed() const { return disclosed_; }
  const SiftedBlock& partial_block() const { return block_; }
  size_t window_batches() const { return window_.size(); }

 private:
  void accumulate_sent(uint64_t through_slot) {
    while (sent_cursor_ <= through_slot) {
      const PulseBatch* batch = nullptr;
      for (const auto& b : window_) {
        if (sent_cursor_ >= b.base_slot && sent_cursor_ < b.base_slot + b.size()) {
          batch = &b;
          break;
        }
      }
      if (!batch)
        throw std::runtime_error("sift: sent accounting outside pulse window");
      uint64_t end = batch->base_slot + batch->size() - 1;
      if (end > through_slot) end = through_slot;
      for (uint64_t s = sent_cursor_; s <= end; ++s) {
        uint8_t code = batch->codes[s - batch->base_slot];
        if (!((code >> 4) & 1)) tally_.sent[code & 3][(code >> 2) & 1]++;
      }
      sent_cursor_ = end + 1;
    }
  }

  PulseRecord pulse_at(uint64_t slot) const {
    // announces arrive in slot order, so the previous batch usually hits
    if (cached_batch_ < window_.size()) {
      const auto& b = window_[cached_batch_];
      if (slot >= b.base_slot && slot < b.base_slot + b.size())
        return b.at(slot - b.base_slot);
    }
    for (size_t i = 0; i < window_.size(); ++i) {
      const auto& b = window_[i];
      if (slot >= b.base_slot && slot < b.base_slot + b.size()) {
        cached_batch_ = i;
        return b.at(slot - b.base_slot);
      }
    }
    throw std::runtime_error("sift: unknown slot index " + std::to_string(slot));
  }

  void prune(uint64_t through_slot) {
    while (!window_.empty() &&
           window_.front().base_slot + window_.front().size() <= through_slot + 1) {
      window_.pop_front();
      if (cached_batch_ > 0) --cached_batch_;
    }
  }

  void maybe_complete_block() {
    if (block_.bits.size() >= block_bits_) {
      block_.tally_at_completion = tally_;
      completed_.push_back(std::move(block_));
      block_ = SiftedBlock{};
    }
  }

  ProtocolParams params_;
  size_t block_bits_;
  std::deque<PulseBatch> window_;
  uint64_t sent_cursor_ = 0;
  bool cursor_set_ = false;
  mutable size_t cached_batch_ = 0;
  DecoyTally tally_;
  XBasisDisclosure disclosed_;
  SiftedBlock block_;
  std::vector<SiftedBlock> completed_;
};

// ---------------------------------------------------------------------------
// One-shot sifting over in-memory streams; the oracle path used by tests.

struct SiftResult {
  BitVec bits_alice;
  BitVec bits_bob;
  std::vector<uint64_t> slot_refs;
  DecoyTally tally;
  XBasisDisclosure disclosed;
};

inline SiftResult sift(const PulseBatch& pulses, const std::vector<DetectionEvent>& events,
                       const ProtocolParams& params, uint64_t bob_basis_seed) {
  SiftAlice alice(params, SIZE_MAX);
  SiftBob bob(params, bob_basis_seed, SIZE_MAX);
  alice.add_pulses(pulses);

  uint64_t range_end = pulses.base_slot + pulses.size() - 1;
  auto announces = bob.add_events(events, pulses.base_slot, range_end);
  for (const auto& ann : announces) {
    SiftReply reply = alice.on_announce(ann);
    bob.on_reply(reply, ann);
  }

  SiftResult r;
  r.bits_alice = alice.partial_block().bits;
  r.bits_bob = bob.partial_block().bits;
  r.slot_refs = alice.partial_block().slot_refs;
  r.tally = alice.tally();
  r.disclosed = alice.disclosed();
  return r;
}

// bits * clock / slots.
inline double sifted_rate(uint64_t block_bits, uint64_t elapsed_slots, double clock_rate_hz) {
  if (elapsed_slots == 0) throw std::invalid_argument("sifted_rate: elapsed_slots must be > 0");
  return double(block_bits) * clock_rate_hz / double(elapsed_slots);
}

}  // namespace qkd
