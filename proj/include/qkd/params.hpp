#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qkd {

// Protocol configuration: clock, fluxes, selection probabilities, basis
// bias, stabilization fraction, PA frame size and the security parameter.
struct ProtocolParams {
  double clock_rate_hz = 1e9;

  double flux_signal = 0.4;
  double flux_decoy = 0.1;
  double flux_vacuum = 0.0007;

  double prob_signal = 0.96973;
  double prob_decoy = 0.01661;
  // Derived as the complement so the three probabilities sum to one exactly.
  double prob_vacuum = 1.0 - 0.96973 - 0.01661;

  double prob_z = 0.96677;
  double prob_x = 1.0 - 0.96677;

  double prob_stabilization = 1.0 / 128.0;

  uint64_t pa_dataset_bits = 96ull << 20;  // 100663296
  double epsilon_security = 1e-10;
};

// Channel and detector model: losses, efficiency, dark counts, afterpulsing
// and optical misalignment.
struct ChannelDetectorParams {
  double channel_loss_db = 2.0;
  double receiver_loss_db = 2.0;
  double detector_efficiency = 0.31;
  // 450 kHz combined over two detectors at 1 GHz gating.
  double dark_count_prob = 2.25e-4;  // per detector per gate
  double afterpulse_prob = 0.044;
  double misalignment_error = 0.0035;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

inline ValidationReport validate(const ProtocolParams& p) {
  ValidationReport r;
  auto fail = [&r](const std::string& msg) { r.violations.push_back(msg); };

  double sum = p.prob_signal + p.prob_decoy + p.prob_vacuum;
  if (std::fabs(sum - 1.0) > 1e-9) fail("p_u + p_v + p_w must equal 1");
  if (p.prob_signal < 0 || p.prob_decoy < 0 || p.prob_vacuum < 0)
    fail("intensity probabilities must be non-negative");
  if (std::fabs(p.prob_z + p.prob_x - 1.0) > 1e-9) fail("p_Z + p_X must equal 1");
  if (p.prob_z < 0.5) fail("p_Z >= 1/2");
  if (!(p.flux_signal > p.flux_decoy)) fail("u > v");
  if (!(p.flux_decoy > p.flux_vacuum)) fail("v > w");
  if (p.flux_vacuum < 0) fail("w >= 0");
  if (p.prob_stabilization < 0 || p.prob_stabilization >= 1)
    fail("0 <= p_st < 1");
  if (p.pa_dataset_bits > (1ull << 27)) fail("pa_dataset_bits <= 2^27");
  if (p.pa_dataset_bits == 0) fail("pa_dataset_bits > 0");
  if (!(p.epsilon_security > 0 && p.epsilon_security < 1))
    fail("0 < epsilon < 1");
  if (p.clock_rate_hz <= 0) fail("clock rate > 0");
  return r;
}

inline ValidationReport validate(const ChannelDetectorParams& c) {
  ValidationReport r;
  auto fail = [&r](const std::string& msg) { r.violations.push_back(msg); };
  if (c.channel_loss_db < 0 || c.receiver_loss_db < 0) fail("losses >= 0");
  auto prob_ok = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!prob_ok(c.detector_efficiency)) fail("detector_efficiency in [0,1]");
  if (!prob_ok(c.dark_count_prob)) fail("dark_count_prob in [0,1]");
  if (!prob_ok(c.afterpulse_prob)) fail("afterpulse_prob in [0,1]");
  if (!prob_ok(c.misalignment_error)) fail("misalignment_error in [0,1]");
  return r;
}

// h(x), with h(0) = h(1) = 0 by continuity.
inline double binary_entropy(double x) {
  if (x < 0.0 || x > 1.0) throw std::domain_error("binary_entropy: x outside [0,1]");
  if (x == 0.0 || x == 1.0) return 0.0;
  return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

// Fraction of slots contributing sifted key: (1 - p_st) * p_u * p_Z^2.
inline double sifting_efficiency(const ProtocolParams& p) {
  return (1.0 - p.prob_stabilization) * p.prob_signal * p.prob_z * p.prob_z;
}

// End-to-end transmittance seen by one photon: channel, receiver optics,
// detector efficiency.
inline double total_transmittance(const ChannelDetectorParams& c) {
  return std::pow(10.0, -(c.channel_loss_db + c.receiver_loss_db) / 10.0) *
         c.detector_efficiency;
}

// Click probability of one slot at mean photon number `flux`, without the
// afterpulse contribution.
inline double base_click_prob(const ChannelDetectorParams& c, double flux) {
  double t = total_transmittance(c);
  double no_photon_click = std::exp(-flux * t);
  double no_dark = (1.0 - c.dark_count_prob) * (1.0 - c.dark_count_prob);
  return 1.0 - no_photon_click * no_dark;
}

// Average click probability over the configured slot mix, afterpulses
// included via the steady state m = base / (1 - p_a).
inline double mean_click_prob(const ProtocolParams& p, const ChannelDetectorParams& c) {
  double st = p.prob_stabilization;
  double base = st * base_click_prob(c, p.flux_signal);
  base += (1.0 - st) * p.prob_signal * base_click_prob(c, p.flux_signal);
  base += (1.0 - st) * p.prob_decoy * base_click_prob(c, p.flux_decoy);
  base += (1.0 - st) * p.prob_vacuum * base_click_prob(c, p.flux_vacuum);
  return base / (1.0 - c.afterpulse_prob);
}

// Per-slot detection probability of a signal pulse (eta_d). Closed form
// shared with the simulator so analytic and simulated values agree.
inline double detection_prob(const ProtocolParams& p, const ChannelDetectorParams& c) {
  double q = base_click_prob(c, p.flux_signal);
  double ap = c.afterpulse_prob * mean_click_prob(p, c);
  return 1.0 - (1.0 - q) * (1.0 - ap);
}

// Secure key rate in bits per second, clamped at zero.
inline double asymptotic_rate(const ProtocolParams& p, const ChannelDetectorParams& c,
                              double p1_lower, double e1_upper, double qber,
                              double f_ec) {
  double eta_d = detection_prob(p, c);
  double eta_sift = sifting_efficiency(p);
  double braces = p1_lower * (1.0 - binary_entropy(e1_upper)) -
                  f_ec * binary_entropy(qber);
  double r = p.clock_rate_hz * eta_d * eta_sift * braces;
  return r > 0.0 ? r : 0.0;
}

// ---------------------------------------------------------------------------
// Config file: `key = value` lines, '#' comments, unknown keys are errors.

struct Config {
  ProtocolParams protocol;
  ChannelDetectorParams channel;
};

namespace detail {

inline void apply_config_entry(Config& cfg, const std::string& key, double value) {
  ProtocolParams& p = cfg.protocol;
  ChannelDetectorParams& c = cfg.channel;
  if (key == "clock_rate_hz") p.clock_rate_hz = value;
  else if (key == "flux_signal") p.flux_signal = value;
  else if (key == "flux_decoy") p.flux_decoy = value;
  else if (key == "flux_vacuum") p.flux_vacuum = value;
  else if (key == "prob_signal") p.prob_signal = value;
  else if (key == "prob_decoy") p.prob_decoy = value;
  else if (key == "prob_vacuum") p.prob_vacuum = value;
  else if (key == "prob_z") p.prob_z = value;
  else if (key == "prob_x") p.prob_x = value;
  else if (key == "prob_stabilization") p.prob_stabilization = value;
  else if (key == "pa_dataset_bits") p.pa_dataset_bits = (uint64_t)value;
  else if (key == "epsilon_security") p.epsilon_security = value;
  else if (key == "channel_loss_db") c.channel_loss_db = value;
  else if (key == "receiver_loss_db") c.receiver_loss_db = value;
  else if (key == "detector_efficiency") c.detector_efficiency = value;
  else if (key == "dark_count_prob") c.dark_count_prob = value;
  else if (key == "afterpulse_prob") c.afterpulse_prob = value;
  else if (key == "misalignment_error") c.misalignment_error = value;
  else throw std::runtime_error("unknown config key: " + key);
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline Config parse_config(std::istream& in) {
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    size_t pos = 0;
    double v = std::stod(val, &pos);
    if (pos != val.size())
      throw std::runtime_error("config line " + std::to_string(lineno) + ": bad value '" + val + "'");
    detail::apply_config_entry(cfg, key, v);
  }
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  return parse_config(f);
}

}  // namespace qkd
