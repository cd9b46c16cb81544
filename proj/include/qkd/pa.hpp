#pragma once

#include <cstdint>
#include <mutex>
#include <set>
#include <stdexcept>
#include <vector>

#include "qkd/bitvec.hpp"
#include "qkd/ec.hpp"
#include "qkd/security.hpp"
#include "qkd/toeplitz.hpp"

namespace qkd {

// One privacy-amplification frame: exactly pa_dataset_bits of verified
// error-corrected key plus the accounting needed for extraction.
struct PAFrame {
  uint64_t frame_id = 0;
  BitVec corrected_bits;
  std::vector<uint64_t> block_ids;
  uint64_t leak_ec_bits = 0;  // syndromes + estimation samples
  uint64_t verify_bits = 0;   // verification tags
  DecoyTally tally;           // delta over contributing blocks
  double qber_mean = 0.0;
  uint64_t realized_errors = 0;
  uint64_t blocks_failed = 0;  // EC failures observed while filling
};

// Accumulates verified EC blocks into exact-size frames; the spill carries
// into the next frame together with its proportional accounting.
class FrameAssembler {
 public:
  explicit FrameAssembler(uint64_t frame_bits) : frame_bits_(frame_bits) {}

  // Returns completed frames when the corrected bits cross the boundary.
  // Leakage of a block that spills across a frame boundary is charged
  // pro-rata to the frames its bits land in.
  std::vector<PAFrame> add_block(const ECBlock& block) {
    std::vector<PAFrame> done;
    if (!block.corrected) {
      ++failed_since_frame_;
      last_tally_ = block.tally_at_completion;
      return done;
    }
    qber_sum_ += block.qber_estimated;
    ++qber_count_;
    block_ids_.push_back(block.block_id);
    last_tally_ = block.tally_at_completion;

    const BitVec& bits = block.payload;
    uint64_t leak_left = block.leak_bits - kVerifyTagBits;
    uint64_t verify_left = kVerifyTagBits;
    uint64_t errors_left = block.realized_errors;
    size_t payload_left = bits.size();

    size_t off = 0;
    while (off < bits.size()) {
      size_t room = frame_bits_ - buffer_.size();
      size_t take = std::min(room, bits.size() - off);
      buffer_.append_slice(bits, off, take);
      off += take;

      uint64_t leak_charge = payload_left ? leak_left * take / payload_left : 0;
      uint64_t verify_charge = payload_left ? verify_left * take / payload_left : 0;
      uint64_t errors_charge = payload_left ? errors_left * take / payload_left : 0;
      leak_ec_ += leak_charge;
      verify_ += verify_charge;
      realized_errors_ += errors_charge;
      leak_left -= leak_charge;
      verify_left -= verify_charge;
      errors_left -= errors_charge;
      payload_left -= take;

      if (buffer_.size() == frame_bits_) done.push_back(seal_frame());
    }
    leak_ec_ += leak_left;
    verify_ += verify_left;
    realized_errors_ += errors_left;
    return done;
  }

  size_t buffered_bits() const { return buffer_.size(); }
  uint64_t frames_completed() const { return next_frame_id_; }

 private:
  PAFrame seal_frame() {
    PAFrame f;
    f.frame_id = next_frame_id_++;
    f.corrected_bits = std::move(buffer_);
    buffer_ = BitVec();
    f.block_ids = std::move(block_ids_);
    block_ids_.clear();
    f.leak_ec_bits = leak_ec_;
    f.verify_bits = verify_;
    f.tally = last_tally_ - frame_start_tally_;
    f.qber_mean = qber_count_ ? qber_sum_ / qber_count_ : 0.0;
    f.realized_errors = realized_errors_;
    f.blocks_failed = failed_since_frame_;
    leak_ec_ = verify_ = realized_errors_ = 0;
    qber_sum_ = 0.0;
    qber_count_ = 0;
    failed_since_frame_ = 0;
    frame_start_tally_ = last_tally_;
    return f;
  }

  uint64_t frame_bits_;
  BitVec buffer_;
  std::vector<uint64_t> block_ids_;
  uint64_t leak_ec_ = 0, verify_ = 0, realized_errors_ = 0;
  double qber_sum_ = 0.0;
  uint64_t qber_count_ = 0;
  uint64_t failed_since_frame_ = 0;
  DecoyTally last_tally_, frame_start_tally_;
  uint64_t next_frame_id_ = 0;
};

struct KeyMaterial {
  uint64_t frame_id = 0;
  BitVec key;
};

// Toeplitz compression of one frame. Fresh seed per frame is enforced;
// large-buffer compressions are serialized process-wide to bound memory.
class PaEngine {
 public:
  KeyMaterial compress_frame(const PAFrame& frame, const SecureLengthResult& secure,
                             uint64_t seed_value) {
    if (!used_seeds_.insert(seed_value).second)
      throw std::logic_error("pa: Toeplitz seed reuse across frames");
    KeyMaterial out;
    out.frame_id = frame.frame_id;
    if (secure.secure_bits == 0) return out;

    ToeplitzSeed seed =
        ToeplitzSeed::expand(frame.corrected_bits.size(), secure.secure_bits, seed_value);
    std::lock_guard<std::mutex> lock(arena_mutex());
    out.key = toeplitz_ntt(seed, frame.corrected_bits);
    return out;
  }

 private:
  static std::mutex& arena_mutex() {
    static std::mutex m;
    return m;
  }
  std::set<uint64_t> used_seeds_;
};

}  // namespace qkd
