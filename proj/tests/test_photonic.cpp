#include <catch2/catch.hpp>

#include "qkd/photonic.hpp"

#include <cmath>

using namespace qkd;

namespace {

ChannelDetectorParams quiet_channel() {
  ChannelDetectorParams c;
  c.channel_loss_db = 0;
  c.receiver_loss_db = 0;
  c.detector_efficiency = 1.0;
  c.dark_count_prob = 0;
  c.afterpulse_prob = 0;
  c.misalignment_error = 0;
  return c;
}

}  // namespace

TEST_CASE("pulse stream frequencies match configured probabilities", "[photonic]") {
  ProtocolParams p;
  const size_t n = 1'000'000;
  PulseBatch batch = generate_pulses(p, n, 1234);

  size_t stab = 0, signal = 0, z = 0, nonstab = 0, ones = 0;
  for (size_t i = 0; i < n; ++i) {
    PulseRecord r = batch.at(i);
    if (r.is_stabilization) { ++stab; continue; }
    ++nonstab;
    if (r.intensity == Intensity::signal) ++signal;
    if (r.basis == Basis::Z) ++z;
    ones += r.bit;
  }

  auto within3sigma = [](double observed, double expect, double prob, double trials) {
    double sigma = std::sqrt(prob * (1 - prob) / trials);
    return std::fabs(observed - expect) <= 3 * sigma;
  };

  REQUIRE(within3sigma(double(stab) / n, p.prob_stabilization, p.prob_stabilization, n));
  REQUIRE(within3sigma(double(signal) / nonstab, p.prob_signal, p.prob_signal, nonstab));
  REQUIRE(within3sigma(double(z) / nonstab, p.prob_z, p.prob_z, nonstab));
  REQUIRE(within3sigma(double(ones) / nonstab, 0.5, 0.5, nonstab));
}

TEST_CASE("degenerate stabilization probability claims every slot", "[photonic]") {
  ProtocolParams p;
  p.prob_stabilization = 1.0;
  PulseBatch batch = generate_pulses(p, 10000, 7);
  for (size_t i = 0; i < batch.size(); ++i) REQUIRE(batch.at(i).is_stabilization);
}

TEST_CASE("pulse generation is deterministic per seed", "[photonic]") {
  ProtocolParams p;
  PulseBatch a = generate_pulses(p, 50000, 99);
  PulseBatch b = generate_pulses(p, 50000, 99);
  REQUIRE(a.codes == b.codes);
  PulseBatch c = generate_pulses(p, 50000, 100);
  REQUIRE(a.codes != c.codes);
}

TEST_CASE("generate_pulses rejects zero count", "[photonic]") {
  ProtocolParams p;
  REQUIRE_THROWS_AS(generate_pulses(p, 0, 1), std::invalid_argument);
}

TEST_CASE("noiseless bright limit clicks the bit-correct detector", "[photonic]") {
  ProtocolParams p;
  p.prob_stabilization = 0.0;
  p.flux_signal = 50.0;
  p.flux_decoy = 25.0;
  p.flux_vacuum = 0.0;
  ChannelDetectorParams c = quiet_channel();

  PulseBatch batch = generate_pulses(p, 20000, 5);
  auto events = detect(batch, c, 6);

  size_t nonvac = 0;
  for (size_t i = 0; i < batch.size(); ++i)
    if (batch.at(i).intensity != Intensity::vacuum) ++nonvac;
  REQUIRE(events.size() == nonvac);
  for (const auto& ev : events) {
    PulseRecord r = batch.at(ev.slot_index - batch.base_slot);
    REQUIRE(ev.detector == r.bit);
    REQUIRE(ev.origin == ClickOrigin::photon);
  }
}

TEST_CASE("vacuum slots with darks disabled never click", "[photonic]") {
  ProtocolParams p;
  p.prob_stabilization = 0.0;
  p.prob_signal = 0.0;
  p.prob_decoy = 0.0;
  p.prob_vacuum = 1.0;
  p.flux_vacuum = 0.0;
  p.flux_decoy = 0.05;
  p.flux_signal = 0.1;
  ChannelDetectorParams c = quiet_channel();

  PulseBatch batch = generate_pulses(p, 100000, 11);
  auto events = detect(batch, c, 12);
  REQUIRE(events.empty());
}

TEST_CASE("per-slot detection probability matches the closed form", "[photonic]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  const size_t n = 2'000'000;
  PulseBatch batch = generate_pulses(p, n, 21);
  auto events = detect(batch, c, 22);

  size_t signal_slots = 0;
  for (size_t i = 0; i < n; ++i) {
    PulseRecord r = batch.at(i);
    if (!r.is_stabilization && r.intensity == Intensity::signal) ++signal_slots;
  }
  size_t signal_clicks = 0;
  for (const auto& ev : events) {
    PulseRecord r = batch.at(ev.slot_index - batch.base_slot);
    if (!r.is_stabilization && r.intensity == Intensity::signal) ++signal_clicks;
  }

  double eta = detection_prob(p, c);
  double observed = double(signal_clicks) / signal_slots;
  double sigma = std::sqrt(eta * (1 - eta) / signal_slots);
  REQUIRE(std::fabs(observed - eta) <= 3 * sigma);
}

TEST_CASE("qber decomposes into misalignment, dark and afterpulse parts", "[photonic]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  const size_t n = 4'000'000;
  PulseBatch batch = generate_pulses(p, n, 31);
  auto events = detect(batch, c, 32);

  // Z-basis signal slots stand in for the sifted key; Bob's basis draw is an
  // unbiased subsample and does not change error statistics.
  size_t kept = 0, errors = 0, ap_errors = 0, dark_errors = 0;
  for (const auto& ev : events) {
    PulseRecord r = batch.at(ev.slot_index - batch.base_slot);
    if (r.is_stabilization || r.basis != Basis::Z || r.intensity != Intensity::signal)
      continue;
    ++kept;
    if (ev.detector != r.bit) {
      ++errors;
      if (ev.origin == ClickOrigin::afterpulse) ++ap_errors;
      if (ev.origin == ClickOrigin::dark) ++dark_errors;
    }
  }

  double qber = double(errors) / kept;
  REQUIRE(qber == Approx(0.0307).margin(0.004));

  double ap_points = double(ap_errors) / kept;
  REQUIRE(ap_points == Approx(0.022).margin(0.005));

  // the three contributions account for the total
  double photon_errors = double(errors - ap_errors - dark_errors) / kept;
  REQUIRE(photon_errors + ap_points + double(dark_errors) / kept == Approx(qber));
}

TEST_CASE("detection is deterministic and batch-boundary safe", "[photonic]") {
  ProtocolParams p;
  ChannelDetectorParams c;
  PulseGenerator gen(p, 77);
  PulseBatch whole = gen.next_batch(200000);

  auto once = detect(whole, c, 78);
  auto again = detect(whole, c, 78);
  REQUIRE(once.size() == again.size());
  for (size_t i = 0; i < once.size(); ++i) {
    REQUIRE(once[i].slot_index == again[i].slot_index);
    REQUIRE(once[i].detector == again[i].detector);
  }

  // split into two batches fed through one detector: identical stream
  PulseBatch first = whole, second = whole;
  first.codes.resize(100000);
  second.base_slot = whole.base_slot + 100000;
  second.codes.erase(second.codes.begin(), second.codes.begin() + 100000);

  Detector d(c, 78);
  auto part1 = d.detect(first);
  auto part2 = d.detect(second);
  REQUIRE(part1.size() + part2.size() == once.size());
  size_t k = 0;
  for (const auto& ev : part1) {
    REQUIRE(ev.slot_index == once[k].slot_index);
    REQUIRE(ev.detector == once[k].detector);
    ++k;
  }
  for (const auto& ev : part2) {
    REQUIRE(ev.slot_index == once[k].slot_index);
    REQUIRE(ev.detector == once[k].detector);
    ++k;
  }
}

TEST_CASE("truth tally attributes dark-only runs to zero photons", "[photonic]") {
  ProtocolParams p;
  p.flux_signal = 0.0;
  p.flux_decoy = 0.0;
  p.flux_vacuum = 0.0;
  ChannelDetectorParams c;
  c.misalignment_error = 0;

  PulseBatch batch = generate_pulses(p, 500000, 41);
  auto events = detect(batch, c, 42);
  REQUIRE(!events.empty());
  TruthTally tally = ground_truth_tally(batch, events);
  REQUIRE(tally.total() == events.size());
  REQUIRE(tally.by_class(0) == events.size());
}

TEST_CASE("truth tally multi-photon fraction follows the Poisson tail", "[photonic]") {
  ProtocolParams p;
  p.prob_stabilization = 0;
  p.prob_signal = 1.0;
  p.prob_decoy = 0.0;
  p.prob_vacuum = 0.0;
  p.flux_signal = 1e-3;
  ChannelDetectorParams c = quiet_channel();

  const size_t n = 20'000'000;
  PulseBatch batch = generate_pulses(p, n, 51);
  auto events = detect(batch, c, 52);
  TruthTally tally = ground_truth_tally(batch, events);

  double mu = p.flux_signal;
  double p_detected = 1.0 - std::exp(-mu);
  double p_multi_given_detected =
      (1.0 - std::exp(-mu) - mu * std::exp(-mu)) / p_detected;
  double expect = events.size() * p_multi_given_detected;
  double sigma = std::sqrt(expect);
  REQUIRE(std::fabs(double(tally.by_class(2)) - expect) <= 3 * sigma + 1);
}

TEST_CASE("truth tally rejects misaligned streams and accepts empty ones", "[photonic]") {
  ProtocolParams p;
  PulseBatch batch = generate_pulses(p, 1000, 61);
  std::vector<DetectionEvent> none;
  REQUIRE(ground_truth_tally(batch, none).total() == 0);

  DetectionEvent outside;
  outside.slot_index = 5000;
  std::vector<DetectionEvent> bad{outside};
  REQUIRE_THROWS_AS(ground_truth_tally(batch, bad), std::invalid_argument);
}
