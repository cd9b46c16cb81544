#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qkd {

// One reporting-interval row, written per completed PA frame. Rates are
// normalized to simulated clock time, not wall time.
struct RunStats {
  double sifted_rate_bps = 0.0;
  double secure_rate_bps = 0.0;
  double qber = 0.0;
  double ec_failure_rate = 0.0;
  double f_ec_realized = 0.0;
  double compression_ratio = 0.0;
  uint64_t cumulative_secure_bits = 0;
};

inline constexpr const char* kStatsHeader =
    "sifted_rate_bps,secure_rate_bps,qber,ec_failure_rate,f_ec_realized,"
    "compression_ratio,cumulative_secure_bits";

class StatsWriter {
 public:
  explicit StatsWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("stats: cannot open " + path);
    out_ << kStatsHeader << "\n";
    out_.flush();
  }

  void append(const RunStats& s) {
    out_ << s.sifted_rate_bps << ',' << s.secure_rate_bps << ',' << s.qber << ','
         << s.ec_failure_rate << ',' << s.f_ec_realized << ',' << s.compression_ratio
         << ',' << s.cumulative_secure_bits << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct StatsSummary {
  size_t rows = 0;
  double sifted_mean = 0, sifted_std = 0;
  double secure_mean = 0, secure_std = 0;
  double qber_mean = 0;
  double failure_mean = 0;
  double f_ec_mean = 0;
  double compression_mean = 0;
  uint64_t total_secure_bits = 0;

  double secure_fluctuation() const {
    return secure_mean > 0 ? secure_std / secure_mean : 0.0;
  }
};

inline StatsSummary summarize_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("stats: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("stats: empty file");
  if (line != kStatsHeader) throw std::runtime_error("stats: unexpected header");

  std::vector<RunStats> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    RunStats s;
    char comma;
    ss >> s.sifted_rate_bps >> comma >> s.secure_rate_bps >> comma >> s.qber >> comma >>
        s.ec_failure_rate >> comma >> s.f_ec_realized >> comma >> s.compression_ratio >>
        comma >> s.cumulative_secure_bits;
    if (ss.fail()) throw std::runtime_error("stats: malformed row");
    rows.push_back(s);
  }

  StatsSummary sum;
  sum.rows = rows.size();
  if (rows.empty()) return sum;
  for (const auto& r : rows) {
    sum.sifted_mean += r.sifted_rate_bps;
    sum.secure_mean += r.secure_rate_bps;
    sum.qber_mean += r.qber;
    sum.failure_mean += r.ec_failure_rate;
    sum.f_ec_mean += r.f_ec_realized;
    sum.compression_mean += r.compression_ratio;
  }
  sum.sifted_mean /= rows.size();
  sum.secure_mean /= rows.size();
  sum.qber_mean /= rows.size();
  sum.failure_mean /= rows.size();
  sum.f_ec_mean /= rows.size();
  sum.compression_mean /= rows.size();
  for (const auto& r : rows) {
    sum.sifted_std += (r.sifted_rate_bps - sum.sifted_mean) * (r.sifted_rate_bps - sum.sifted_mean);
    sum.secure_std += (r.secure_rate_bps - sum.secure_mean) * (r.secure_rate_bps - sum.secure_mean);
  }
  sum.sifted_std = std::sqrt(sum.sifted_std / rows.size());
  sum.secure_std = std::sqrt(sum.secure_std / rows.size());
  sum.total_secure_bits = rows.back().cumulative_secure_bits;
  return sum;
}

}  // namespace qkd
