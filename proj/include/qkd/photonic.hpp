#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qkd/params.hpp"
#include "qkd/rng.hpp"

namespace qkd {

enum class Intensity : uint8_t { signal = 0, decoy = 1, vacuum = 2 };
enum class Basis : uint8_t { Z = 0, X = 1 };

// One transmitted slot: Alice's secret choices.
struct PulseRecord {
  uint64_t slot_index = 0;
  Intensity intensity = Intensity::signal;
  Basis basis = Basis::Z;
  uint8_t bit = 0;
  bool is_stabilization = false;
};

// A contiguous run of slots, one packed byte per slot. Carries the flux
// values so the detector can run from the batch alone.
struct PulseBatch {
  uint64_t base_slot = 0;
  double flux[3] = {0.4, 0.1, 0.0007};
  std::vector<uint8_t> codes;

  size_t size() const { return codes.size(); }

  static uint8_t encode(Intensity i, Basis b, uint8_t bit, bool stab) {
    return uint8_t((uint8_t(i) & 3) | (uint8_t(b) << 2) | ((bit & 1) << 3) |
                   (uint8_t(stab) << 4));
  }

  PulseRecord at(size_t i) const {
    uint8_t c = codes[i];
    PulseRecord r;
    r.slot_index = base_slot + i;
    r.intensity = Intensity(c & 3);
    r.basis = Basis((c >> 2) & 1);
    r.bit = (c >> 3) & 1;
    r.is_stabilization = (c >> 4) & 1;
    return r;
  }
};

// Draws stabilization flag, intensity, basis and bit per slot with the
// configured probabilities. Streams are reproducible for a fixed seed.
class PulseGenerator {
 public:
  PulseGenerator(const ProtocolParams& p, uint64_t seed)
      : params_(p), rng_(seed) {
    // cumulative thresholds over one uint64 draw:
    // [stab | (u,v,w) x (Z,X)]
    double probs[7];
    probs[0] = p.prob_stabilization;
    double rest = 1.0 - p.prob_stabilization;
    const double pi[3] = {p.prob_signal, p.prob_decoy, p.prob_vacuum};
    const double pb[2] = {p.prob_z, p.prob_x};
    int k = 1;
    for (int i = 0; i < 3; ++i)
      for (int b = 0; b < 2; ++b) probs[k++] = rest * pi[i] * pb[b];
    double acc = 0;
    for (int j = 0; j < 7; ++j) {
      acc += probs[j];
      thresholds_[j] = acc >= 1.0 ? UINT64_MAX
                                  : uint64_t(acc * 18446744073709551616.0);
    }
    thresholds_[6] = UINT64_MAX;
  }

  PulseBatch next_batch(size_t count) {
    PulseBatch batch;
    batch.base_slot = next_slot_;
    batch.flux[0] = params_.flux_signal;
    batch.flux[1] = params_.flux_decoy;
    batch.flux[2] = params_.flux_vacuum;
    batch.codes.resize(count);
    for (size_t i = 0; i < count; ++i) {
      uint64_t u = rng_.next();
      int cls = 0;
      while (u >= thresholds_[cls]) ++cls;
      uint8_t bit = rng_.next() & 1;
      if (cls == 0) {
        batch.codes[i] = PulseBatch::encode(Intensity::signal, Basis::Z, bit, true);
      } else {
        int idx = cls - 1;
        batch.codes[i] = PulseBatch::encode(Intensity(idx >> 1), Basis(idx & 1), bit, false);
      }
    }
    next_slot_ += count;
    return batch;
  }

  uint64_t next_slot() const { return next_slot_; }

 private:
  ProtocolParams params_;
  Xoshiro256 rng_;
  uint64_t thresholds_[7];
  uint64_t next_slot_ = 0;
};

inline PulseBatch generate_pulses(const ProtocolParams& p, size_t count, uint64_t seed) {
  if (count == 0) throw std::invalid_argument("generate_pulses: count must be > 0");
  PulseGenerator gen(p, seed);
  return gen.next_batch(count);
}

enum class ClickOrigin : uint8_t { photon = 0, dark = 1, afterpulse = 2 };

// One registered click after gating and double-click resolution. The origin
// and emitted photon number are simulator-private ground truth; they never
// go on the wire.
struct DetectionEvent {
  uint64_t slot_index = 0;
  uint8_t detector = 0;
  ClickOrigin origin = ClickOrigin::photon;
  uint8_t n_emitted = 0;

  bool is_dark_ground_truth() const { return origin == ClickOrigin::dark; }
  bool is_afterpulse_ground_truth() const { return origin == ClickOrigin::afterpulse; }
};

// Per-slot detection model: Poisson photon statistics thinned by the total
// transmittance, misalignment routing, independent dark counts, afterpulse
// clicks scheduled 2..100 slots after any retained click. Double clicks
// resolve to a uniformly random detector; at most one retained click per
// detector per slot.
class Detector {
 public:
  Detector(const ChannelDetectorParams& c, uint64_t seed)
      : channel_(c), rng_(seed) {
    t_ = total_transmittance(c);
    pd_ = c.dark_count_prob;
    p_any_dark_ = 1.0 - (1.0 - pd_) * (1.0 - pd_);
    p_both_dark_given_any_ = p_any_dark_ > 0 ? (pd_ * pd_) / p_any_dark_ : 0.0;
    for (auto& r : ring_) r = 0;
  }

  std::vector<DetectionEvent> detect(const PulseBatch& batch) {
    std::vector<DetectionEvent> events;
    events.reserve(batch.size() / 16 + 8);
    const double e_mis = channel_.misalignment_error;
    PoissonInv survivors_dist[3], lost_dist[3];
    for (int i = 0; i < 3; ++i) {
      survivors_dist[i] = PoissonInv(batch.flux[i] * t_);
      lost_dist[i] = PoissonInv(batch.flux[i] * (1.0 - t_));
    }

    for (size_t i = 0; i < batch.size(); ++i) {
      uint64_t slot = batch.base_slot + i;
      uint8_t code = batch.codes[i];
      int intensity = code & 3;
      uint8_t alice_bit = (code >> 3) & 1;
      bool stab = (code >> 4) & 1;

      uint8_t ap_mask = ring_[slot & (kRing - 1)];
      ring_[slot & (kRing - 1)] = 0;

      uint32_t survivors = survivors_dist[intensity].sample(rng_);
      uint8_t photon_mask = 0;
      if (survivors) {
        // stabilization pulses are unmodulated: clicks split evenly
        double p_correct = stab ? 0.5 : 1.0 - e_mis;
        uint8_t correct_det = alice_bit;
        for (uint32_t s = 0; s < survivors; ++s) {
          bool correct = rng_.next_double() < p_correct;
          photon_mask |= uint8_t(1) << (correct ? correct_det : (1 - correct_det));
          if (photon_mask == 3) {
            // remaining photons cannot change the click pattern
            break;
          }
        }
      }

      uint8_t dark_mask = 0;
      if (rng_.next_double() < p_any_dark_) {
        double u = rng_.next_double();
        if (u < p_both_dark_given_any_) dark_mask = 3;
        else dark_mask = (u < p_both_dark_given_any_ + (1.0 - p_both_dark_given_any_) * 0.5) ? 1 : 2;
      }

      uint8_t click_mask = photon_mask | dark_mask | ap_mask;
      if (!click_mask) continue;

      // resolve to one retained detection per slot
      uint8_t det;
      if (click_mask == 3) det = uint8_t(rng_.next() & 1);
      else det = click_mask == 1 ? 0 : 1;

      DetectionEvent ev;
      ev.slot_index = slot;
      ev.detector = det;
      uint8_t bit_mask = uint8_t(1) << det;
      if (photon_mask & bit_mask) ev.origin = ClickOrigin::photon;
      else if (dark_mask & bit_mask) ev.origin = ClickOrigin::dark;
      else ev.origin = ClickOrigin::afterpulse;

      // emitted photon number: survivors plus the thinned-away remainder
      uint32_t n = survivors + lost_dist[intensity].sample(rng_);
      ev.n_emitted = n > 255 ? 255 : uint8_t(n);
      events.push_back(ev);

      // each retained click may spawn one afterpulse
      for (int d = 0; d < 2; ++d) {
        if (!(click_mask & (uint8_t(1) << d))) continue;
        if (rng_.next_double() < channel_.afterpulse_prob) {
          uint64_t delay = 2 + rng_.below(99);  // uniform in [2, 100]
          uint8_t target = uint8_t(rng_.next() & 1);
          ring_[(slot + delay) & (kRing - 1)] |= uint8_t(1) << target;
        }
      }
    }
    return events;
  }

 private:
  static constexpr size_t kRing = 128;

  ChannelDetectorParams channel_;
  Xoshiro256 rng_;
  double t_ = 0, pd_ = 0, p_any_dark_ = 0, p_both_dark_given_any_ = 0;
  uint8_t ring_[kRing];
};

inline std::vector<DetectionEvent> detect(const PulseBatch& batch,
                                          const ChannelDetectorParams& c,
                                          uint64_t seed) {
  Detector d(c, seed);
  return d.detect(batch);
}

// Exact counts of detections by emitted photon number class (0, 1, >=2),
// per intensity and per preparation basis.
struct TruthTally {
  uint64_t counts[3][2][3] = {};

  uint64_t total() const {
    uint64_t t = 0;
    for (auto& a : counts)
      for (auto& b : a)
        for (auto v : b) t += v;
    return t;
  }

  uint64_t by_class(int n_class) const {
    uint64_t t = 0;
    for (auto& a : counts)
      for (auto& b : a) t += b[n_class];
    return t;
  }
};

inline TruthTally ground_truth_tally(const PulseBatch& pulses,
                                     const std::vector<DetectionEvent>& events) {
  TruthTally tally;
  uint64_t prev = 0;
  bool first = true;
  for (const auto& ev : events) {
    if (!first && ev.slot_index <= prev)
      throw std::invalid_argument("ground_truth_tally: events out of order");
    prev = ev.slot_index;
    first = false;
    if (ev.slot_index < pulses.base_slot ||
        ev.slot_index >= pulses.base_slot + pulses.size())
      throw std::invalid_argument("ground_truth_tally: event outside pulse stream");
    PulseRecord pr = pulses.at(ev.slot_index - pulses.base_slot);
    int n_class = ev.n_emitted >= 2 ? 2 : ev.n_emitted;
    tally.counts[int(pr.intensity)][int(pr.basis)][n_class]++;
  }
  return tally;
}

}  // namespace qkd
