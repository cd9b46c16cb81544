#include <catch2/catch.hpp>

#include "qkd/security.hpp"
#include "qkd/photonic.hpp"
#include "test_util.hpp"

#include <map>

using namespace qkd;

TEST_CASE("asymptotic single-photon bound stays below truth with small gap", "[security]") {
  // simulated Poisson source with known transmittance; corrections zeroed
  ProtocolParams p;
  ChannelDetectorParams c;
  const size_t n = 24'000'000;

  PulseBatch pulses = generate_pulses(p, n, 101);
  auto events = detect(pulses, c, 102);
  SiftResult sifted = sift(pulses, events, p, 103);

  SecurityBounds b = decoy_bounds(sifted.tally, p, 1e-10);
  REQUIRE(b.ok);

  // ground truth single-photon count among sifted detections
  std::map<uint64_t, const DetectionEvent*> by_slot;
  for (const auto& ev : events) by_slot[ev.slot_index] = &ev;
  uint64_t true_n1 = 0;
  for (uint64_t slot : sifted.slot_refs)
    if (by_slot.at(slot)->n_emitted == 1) ++true_n1;

  uint64_t sifted_count = sifted.slot_refs.size();
  double p1_true = double(true_n1) / sifted_count;

  REQUIRE(b.p1_asymptotic <= p1_true);
  REQUIRE(b.p1_asymptotic >= p1_true * 0.95);  // gap below 5 percent

  // finite bound is more conservative still
  REQUIRE(b.p1_lower <= b.p1_asymptotic);
  REQUIRE(b.n1_z_lower <= sifted_count);
}

TEST_CASE("asymptotic phase error bound covers the truth", "[security]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  const size_t n = 8'000'000;
  PulseBatch pulses = generate_pulses(p, n, 111);
  auto events = detect(pulses, c, 112);
  SiftResult sifted = sift(pulses, events, p, 113);

  SecurityBounds b = decoy_bounds(sifted.tally, p, 1e-10);
  REQUIRE(b.ok);
  // X-basis observed error rate of the signal flux
  double ex = double(sifted.tally.errors[0][1]) /
              std::max<uint64_t>(1, sifted.tally.detected[0][1]);
  // true single-photon phase error sits well under the flux-level rate;
  // the bound must stay above zero and clamp below one half
  REQUIRE(b.e1_asymptotic > 0.0);
  REQUIRE(b.e1_asymptotic <= 0.5);
  REQUIRE(b.e1_upper >= b.e1_asymptotic);
  // sane scale: within a small factor of the measured X rate
  REQUIRE(b.e1_asymptotic < 3.0 * ex + 0.02);
}

TEST_CASE("degenerate tallies are an estimation failure", "[security]") {
  ProtocolParams p;
  DecoyTally empty;
  REQUIRE_FALSE(decoy_bounds(empty, p, 1e-10).ok);

  // all-vacuum: no decoy detections
  DecoyTally vac;
  vac.sent[2][0] = 1000000;
  vac.detected[2][0] = 450;
  REQUIRE_FALSE(decoy_bounds(vac, p, 1e-10).ok);
}

TEST_CASE("secure length reduces to the single-photon count on a perfect channel",
          "[security]") {
  ProtocolParams p;
  SecurityBounds b;
  b.ok = true;
  b.p1_lower = 0.25;  // quarter of the frame, below the 1/3 ceiling
  b.e1_upper = 0.0;
  b.p1_asymptotic = 0.25;
  b.e1_asymptotic = 0.0;
  b.epsilon_total = 1e-10;

  SecureLengthResult r = secure_length(b, 0.0, 0, 0, p);
  uint64_t n1 = uint64_t(0.25 * p.pa_dataset_bits);
  // only the fixed extraction penalty separates the result from n1
  REQUIRE(r.secure_bits <= n1);
  REQUIRE(r.secure_bits >= n1 - 100);
  REQUIRE(r.asymptotic_bits == n1);
}

TEST_CASE("saturated phase error yields zero key", "[security]") {
  ProtocolParams p;
  SecurityBounds b;
  b.ok = true;
  b.p1_lower = 0.7;
  b.e1_upper = 0.5;
  b.epsilon_total = 1e-10;
  SecureLengthResult r = secure_length(b, 0.03, 0, 0, p);
  REQUIRE(r.secure_bits == 0);
  REQUIRE(r.compression_ratio == 0.0);
}

TEST_CASE("secure length clamps at a third of the frame", "[security]") {
  ProtocolParams p;
  SecurityBounds b;
  b.ok = true;
  b.p1_lower = 0.9;
  b.e1_upper = 0.0;
  b.p1_asymptotic = 0.9;
  b.e1_asymptotic = 0.0;
  b.epsilon_total = 1e-10;
  SecureLengthResult r = secure_length(b, 0.0, 0, 0, p);
  REQUIRE(r.secure_bits == p.pa_dataset_bits / 3);
  REQUIRE(r.compression_ratio == Approx(1.0 / 3.0).margin(1e-6));
}

TEST_CASE("secure length is monotone in its penalties", "[security]") {
  ProtocolParams p;
  SecurityBounds b;
  b.ok = true;
  b.p1_lower = 0.65;
  b.e1_upper = 0.03;
  b.epsilon_total = 1e-10;

  uint64_t base = secure_length(b, 0.03, 20'000'000, 6400, p).secure_bits;
  REQUIRE(base > 0);

  // more leakage, never more key
  uint64_t more_leak = secure_length(b, 0.03, 25'000'000, 6400, p).secure_bits;
  REQUIRE(more_leak < base);

  // higher phase error, never more key
  SecurityBounds worse = b;
  worse.e1_upper = 0.06;
  REQUIRE(secure_length(worse, 0.03, 20'000'000, 6400, p).secure_bits < base);

  // qber input does not enter the formula (leakage replaces it)
  REQUIRE(secure_length(b, 0.05, 20'000'000, 6400, p).secure_bits == base);
}

TEST_CASE("finite penalty shrinks as the dataset grows", "[security]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  double prev_ratio = -1.0;
  for (double sifted_bits : {1e6, 1e7, 1e8}) {
    double eta = detection_prob(p, c) * sifting_efficiency(p);
    double slots = sifted_bits / eta;
    DecoyTally tally = qkd_test::synthetic_tally(p, c, slots);
    SecurityBounds b = decoy_bounds(tally, p, 1e-10);
    REQUIRE(b.ok);
    double ratio = b.p1_lower / b.p1_asymptotic;
    REQUIRE(ratio > prev_ratio);
    prev_ratio = ratio;
  }
  REQUIRE(prev_ratio > 0.9);  // yield bound nearly converged at 1e8
}

TEST_CASE("statistical soundness of the yield bound across frames", "[security]") {
  // many small frames: the lower bound must stay below the ground truth
  ProtocolParams p;
  ChannelDetectorParams c;
  const int frames = 50;
  const size_t slots = 1'500'000;
  PulseGenerator gen(p, 201);
  Detector det(c, 202);
  SiftAlice alice(p, SIZE_MAX);
  int violations = 0;

  for (int f = 0; f < frames; ++f) {
    PulseBatch pulses = gen.next_batch(slots);
    auto events = det.detect(pulses);
    SiftResult sifted = sift(pulses, events, p, 300 + f);
    SecurityBounds b = decoy_bounds(sifted.tally, p, 1e-10);
    if (!b.ok) continue;

    std::map<uint64_t, uint8_t> n_by_slot;
    for (const auto& ev : events) n_by_slot[ev.slot_index] = ev.n_emitted;
    uint64_t true_n1 = 0;
    for (uint64_t slot : sifted.slot_refs)
      if (n_by_slot.at(slot) == 1) ++true_n1;
    if (b.n1_z_lower > true_n1) ++violations;
  }
  REQUIRE(violations == 0);
}
