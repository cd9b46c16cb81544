#include <catch2/catch.hpp>

#include "qkd/sifting.hpp"

#include <cmath>
#include <map>

using namespace qkd;

TEST_CASE("matched-basis clean setup keeps every detection", "[sifting]") {
  ProtocolParams p;
  p.prob_stabilization = 0;
  p.prob_z = 1.0;
  p.prob_x = 0.0;
  p.prob_signal = 1.0;
  p.prob_decoy = 0.0;
  p.prob_vacuum = 0.0;
  ChannelDetectorParams c;

  PulseBatch pulses = generate_pulses(p, 200000, 1);
  auto events = detect(pulses, c, 2);
  SiftResult r = sift(pulses, events, p, 3);

  REQUIRE(r.bits_alice.size() == events.size());
  REQUIRE(r.bits_bob.size() == events.size());
  REQUIRE(r.slot_refs.size() == events.size());
}

TEST_CASE("sifted fraction of detections follows the efficiency accounting", "[sifting]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  const size_t n = 10'000'000;
  PulseGenerator gen(p, 11);
  PulseBatch pulses = gen.next_batch(n);
  auto events = detect(pulses, c, 12);
  SiftResult r = sift(pulses, events, p, 13);

  double ap = c.afterpulse_prob * mean_click_prob(p, c);
  auto q = [&](double flux) { return 1.0 - (1.0 - base_click_prob(c, flux)) * (1.0 - ap); };
  double mean_q = p.prob_stabilization * q(p.flux_signal) +
                  (1 - p.prob_stabilization) *
                      (p.prob_signal * q(p.flux_signal) + p.prob_decoy * q(p.flux_decoy) +
                       p.prob_vacuum * q(p.flux_vacuum));
  double expected_ratio =
      (1 - p.prob_stabilization) * p.prob_signal * p.prob_z * p.prob_z * q(p.flux_signal) /
      mean_q;

  double observed = double(r.bits_alice.size()) / events.size();
  REQUIRE(observed == Approx(expected_ratio).margin(0.01));
}

TEST_CASE("disclosed X bits carry no errors on a noiseless channel", "[sifting]") {
  ProtocolParams p;
  p.prob_x = 0.3;
  p.prob_z = 0.7;
  ChannelDetectorParams c;
  c.misalignment_error = 0;
  c.dark_count_prob = 0;
  c.afterpulse_prob = 0;

  PulseBatch pulses = generate_pulses(p, 500000, 21);
  auto events = detect(pulses, c, 22);
  SiftResult r = sift(pulses, events, p, 23);

  REQUIRE(!r.disclosed.records.empty());
  for (int i = 0; i < 3; ++i) REQUIRE(r.tally.errors[i][1] == 0);
  for (const auto& d : r.disclosed.records) REQUIRE(d.alice_bit == d.bob_bit);
}

TEST_CASE("sifted keys differ exactly on simulator-marked errors", "[sifting]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  PulseBatch pulses = generate_pulses(p, 2'000'000, 31);
  auto events = detect(pulses, c, 32);
  SiftResult r = sift(pulses, events, p, 33);

  std::map<uint64_t, uint8_t> detector_by_slot;
  for (const auto& ev : events) detector_by_slot[ev.slot_index] = ev.detector;

  size_t mismatches = 0;
  for (size_t i = 0; i < r.slot_refs.size(); ++i) {
    uint64_t slot = r.slot_refs[i];
    PulseRecord pr = pulses.at(slot - pulses.base_slot);
    bool simulator_error = detector_by_slot.at(slot) != pr.bit;
    bool key_mismatch = r.bits_alice.get(i) != r.bits_bob.get(i);
    REQUIRE(simulator_error == key_mismatch);
    mismatches += key_mismatch;
  }
  REQUIRE(mismatches > 0);
  REQUIRE(mismatches == r.bits_alice.hamming_distance(r.bits_bob));
}

TEST_CASE("decoy tally conserves sent pulses and bounds counts", "[sifting]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  PulseBatch pulses = generate_pulses(p, 1'000'000, 41);
  auto events = detect(pulses, c, 42);
  SiftResult r = sift(pulses, events, p, 43);

  size_t nonstab = 0;
  for (size_t i = 0; i < pulses.size(); ++i)
    if (!pulses.at(i).is_stabilization) ++nonstab;
  REQUIRE(r.tally.sent_total() == nonstab);

  for (int i = 0; i < 3; ++i)
    for (int b = 0; b < 2; ++b) {
      REQUIRE(r.tally.detected[i][b] <= r.tally.sent[i][b]);
      REQUIRE(r.tally.errors[i][b] <= r.tally.detected[i][b]);
    }
}

TEST_CASE("alice and bob agree on tallies and block boundaries", "[sifting]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  const size_t block_bits = 1000;

  SiftAlice alice(p, block_bits);
  SiftBob bob(p, 53, block_bits);

  PulseGenerator gen(p, 51);
  Detector det(c, 52);
  for (int batch = 0; batch < 8; ++batch) {
    PulseBatch pulses = gen.next_batch(100000);
    uint64_t start = pulses.base_slot;
    uint64_t end = pulses.base_slot + pulses.size() - 1;
    auto events = det.detect(pulses);
    alice.add_pulses(std::move(pulses));
    for (auto& ann : bob.add_events(events, start, end)) {
      SiftReply reply = alice.on_announce(ann);
      bob.on_reply(reply, ann);
    }
  }

  auto blocks_a = alice.take_completed_blocks();
  auto blocks_b = bob.take_completed_blocks();
  REQUIRE(blocks_a.size() == blocks_b.size());
  REQUIRE(!blocks_a.empty());
  for (size_t i = 0; i < blocks_a.size(); ++i) {
    REQUIRE(blocks_a[i].bits.size() == block_bits);
    REQUIRE(blocks_a[i].slot_refs == blocks_b[i].slot_refs);
    for (int j = 0; j < 3; ++j)
      for (int b = 0; b < 2; ++b) {
        REQUIRE(blocks_a[i].tally_at_completion.sent[j][b] ==
                blocks_b[i].tally_at_completion.sent[j][b]);
        REQUIRE(blocks_a[i].tally_at_completion.detected[j][b] ==
                blocks_b[i].tally_at_completion.detected[j][b]);
        REQUIRE(blocks_a[i].tally_at_completion.errors[j][b] ==
                blocks_b[i].tally_at_completion.errors[j][b]);
      }
  }

  // cumulative tallies identical at the end as well
  for (int j = 0; j < 3; ++j)
    for (int b = 0; b < 2; ++b) {
      REQUIRE(alice.tally().sent[j][b] == bob.tally().sent[j][b]);
      REQUIRE(alice.tally().detected[j][b] == bob.tally().detected[j][b]);
      REQUIRE(alice.tally().errors[j][b] == bob.tally().errors[j][b]);
    }
}

TEST_CASE("announce for an unknown slot is rejected", "[sifting]") {
  ProtocolParams p;
  SiftAlice alice(p);
  PulseBatch pulses = generate_pulses(p, 1000, 61);
  alice.add_pulses(pulses);

  SiftAnnounce ann;
  ann.start_slot = 0;
  ann.end_slot = 999;
  ann.records.push_back({5000, 0, 0});
  REQUIRE_THROWS_WITH(alice.on_announce(ann), Catch::Contains("unknown slot"));
}

TEST_CASE("sifted rate arithmetic", "[sifting]") {
  REQUIRE(sifted_rate(48, 1000, 1e9) == Approx(48e6));
  REQUIRE(sifted_rate(0, 1000, 1e9) == 0.0);
  REQUIRE_THROWS_AS(sifted_rate(10, 0, 1e9), std::invalid_argument);
}

TEST_CASE("simulated sifted rate reproduces the reference point", "[sifting]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  const size_t n = 2'000'000;
  PulseBatch pulses = generate_pulses(p, n, 71);
  auto events = detect(pulses, c, 72);
  SiftResult r = sift(pulses, events, p, 73);

  double rate = sifted_rate(r.bits_alice.size(), n, p.clock_rate_hz);
  REQUIRE(rate == Approx(47.83e6).epsilon(0.10));
}
