#pragma once

#include <cstdio>
#include <deque>
#include <map>
#include <memory>
#include <string>

#include "qkd/ec.hpp"
#include "qkd/keystore.hpp"
#include "qkd/pa.hpp"
#include "qkd/params.hpp"
#include "qkd/photonic.hpp"
#include "qkd/security.hpp"
#include "qkd/sifting.hpp"
#include "qkd/stats.hpp"
#include "qkd/transport.hpp"
#include "qkd/wire.hpp"

namespace qkd {

enum class Role { alice, bob };

struct NodeOptions {
  Role role = Role::alice;
  Config cfg;
  uint64_t session_seed = 1;
  uint64_t pulse_budget = 100'000'000;
  size_t gen_batch = 1u << 20;
  std::string stats_path;
  std::string keys_path;
  std::string frame_log_path;
  std::string dump_events_path;
  std::string codes_path;  // LDPC shift-matrix file; built-in family if empty
  int decode_threads = 2;
  size_t announce_window = 4;  // outstanding sift announces before blocking
};

struct NodeReport {
  uint64_t frames = 0;
  uint64_t secure_bits = 0;
  uint64_t sifted_bits = 0;
  uint64_t blocks_ok = 0;
  uint64_t blocks_failed = 0;
  uint64_t slots_processed = 0;
  bool clean_shutdown = false;
};

namespace detail {

// seed tags for the independent sub-streams of one session
inline constexpr uint64_t kSeedQuantum = 0x0a11ce0001ull;   // shared pulse stream
inline constexpr uint64_t kSeedBobBasis = 0x0b0b00002ull;   // Bob's basis draws
inline constexpr uint64_t kSeedDetector = 0x0de7ec70003ull; // detector noise
inline constexpr uint64_t kSeedPa = 0x70e911720004ull;      // per-frame Toeplitz

class FrameLogWriter {
 public:
  explicit FrameLogWriter(const std::string& path) {
    if (!path.empty()) {
      f_ = std::fopen(path.c_str(), "w");
      if (!f_) throw std::runtime_error("frame log: cannot open " + path);
    }
  }
  ~FrameLogWriter() {
    if (f_) std::fclose(f_);
  }

  void append(uint64_t frame_id, uint64_t n_sifted, double qber, double n1_lower,
              double e1_upper, uint64_t leak_ec, uint64_t secure_bits, double ratio) {
    if (!f_) return;
    std::fprintf(f_,
                 "{\"frame_id\":%llu,\"n_sifted\":%llu,\"qber\":%.6f,"
                 "\"n1_lower\":%.0f,\"e1_upper\":%.6f,\"leak_ec\":%llu,"
                 "\"secure_bits\":%llu,\"ratio\":%.6f}\n",
                 (unsigned long long)frame_id, (unsigned long long)n_sifted, qber,
                 n1_lower, e1_upper, (unsigned long long)leak_ec,
                 (unsigned long long)secure_bits, ratio);
    std::fflush(f_);
  }

 private:
  std::FILE* f_ = nullptr;
};

class EventDumpWriter {
 public:
  explicit EventDumpWriter(const std::string& path) {
    if (!path.empty()) {
      f_ = std::fopen(path.c_str(), "wb");
      if (!f_) throw std::runtime_error("event dump: cannot open " + path);
    }
  }
  ~EventDumpWriter() {
    if (f_) std::fclose(f_);
  }

  void append(const std::vector<DetectionEvent>& events) {
    if (!f_) return;
    for (const auto& ev : events) {
      uint8_t rec[9];
      for (int i = 0; i < 8; ++i) rec[i] = uint8_t(ev.slot_index >> (8 * i));
      rec[8] = ev.detector;
      std::fwrite(rec, 1, 9, f_);
    }
  }

 private:
  std::FILE* f_ = nullptr;
};

inline std::unique_ptr<CodeFamily> load_code_family(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open code file: " + path);
  return std::make_unique<CodeFamily>(load_codes(f));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Alice: reactive end. Regenerates the shared pulse stream on demand,
// answers sifting announces, drives syndromes, finishes frames.

inline NodeReport run_alice(const NodeOptions& opt, Transport& link) {
  const ProtocolParams& params = opt.cfg.protocol;
  NodeReport report;

  std::unique_ptr<CodeFamily> loaded;
  if (!opt.codes_path.empty()) loaded = detail::load_code_family(opt.codes_path);
  const CodeFamily& family = loaded ? *loaded : CodeFamily::shared();

  PulseGenerator gen(params, derive_seed(opt.session_seed, detail::kSeedQuantum));
  SiftAlice sift(params);
  EcAlice ec(family, opt.session_seed);
  FrameAssembler assembler(params.pa_dataset_bits);
  PaEngine pa;
  std::unique_ptr<KeyStoreWriter> keystore;
  if (!opt.keys_path.empty()) keystore = std::make_unique<KeyStoreWriter>(opt.keys_path);
  std::unique_ptr<StatsWriter> stats;
  if (!opt.stats_path.empty()) stats = std::make_unique<StatsWriter>(opt.stats_path);
  detail::FrameLogWriter frame_log(opt.frame_log_path);

  bool tracker_seeded = false;
  uint64_t window_start_slot = 0;
  uint64_t window_sifted_bits = 0;
  uint64_t cumulative_secure = 0;

  for (;;) {
    auto frame = link.recv();
    if (!frame) break;  // peer disconnect: flush and stop

    switch (MsgType(frame->msg_type)) {
      case MsgType::sift_announce: {
        SiftAnnounce ann = unpack_announce(frame->payload);
        while (gen.next_slot() <= ann.end_slot)
          sift.add_pulses(gen.next_batch(opt.gen_batch));
        SiftReply reply = sift.on_announce(ann);

        // syndromes for blocks completed by this announce go out first so
        // the peer sees them before it accounts the reply as processed
        for (auto& block : sift.take_completed_blocks()) {
          if (!tracker_seeded) {
            const DecoyTally& t = sift.tally();
            if (t.detected[0][1] >= 200)
              ec.tracker().set_initial(double(t.errors[0][1]) / t.detected[0][1] + 0.005);
            tracker_seeded = true;
          }
          window_sifted_bits += block.bits.size();
          report.sifted_bits += block.bits.size();
          EcSyndromeMsg msg = ec.process_block(block);
          link.send({uint8_t(MsgType::ec_syndrome), 0, pack(msg)});
        }
        link.send({uint8_t(MsgType::sift_reply), 0, pack(reply)});
        report.slots_processed = ann.end_slot + 1;
        break;
      }

      case MsgType::ec_verify: {
        EcVerifyMsg v = unpack_verify(frame->payload);
        ECBlock blk = ec.on_verify(v);
        if (blk.corrected) ++report.blocks_ok;
        else ++report.blocks_failed;

        for (PAFrame& f : assembler.add_block(blk)) {
          SecurityBounds bounds = decoy_bounds(f.tally, params, params.epsilon_security);
          SecureLengthResult secure =
              secure_length(bounds, f.qber_mean, f.leak_ec_bits, f.verify_bits, params);

          PaSeedMsg seed_msg;
          seed_msg.frame_id = f.frame_id;
          seed_msg.seed_value = derive_seed(opt.session_seed, detail::kSeedPa + f.frame_id);
          seed_msg.secure_bits = secure.secure_bits;
          seed_msg.leak_ec_bits = f.leak_ec_bits;
          seed_msg.verify_bits = f.verify_bits;
          seed_msg.qber_mean = f.qber_mean;
          link.send({uint8_t(MsgType::pa_seed), 0, pack(seed_msg)});

          KeyMaterial key = pa.compress_frame(f, secure, seed_msg.seed_value);
          if (keystore) keystore->append(f.frame_id, key.key);
          cumulative_secure += secure.secure_bits;
          report.secure_bits = cumulative_secure;
          ++report.frames;

          uint64_t slots_now = report.slots_processed;
          uint64_t window_slots = slots_now > window_start_slot
                                      ? slots_now - window_start_slot
                                      : 1;
          if (stats) {
            RunStats row;
            row.sifted_rate_bps =
                double(window_sifted_bits) * params.clock_rate_hz / double(window_slots);
            row.secure_rate_bps =
                double(secure.secure_bits) * params.clock_rate_hz / double(window_slots);
            row.qber = f.qber_mean;
            uint64_t blocks_in_frame = f.block_ids.size() + f.blocks_failed;
            row.ec_failure_rate =
                blocks_in_frame ? double(f.blocks_failed) / blocks_in_frame : 0.0;
            double h = binary_entropy(std::min(std::max(f.qber_mean, 1e-6), 0.5));
            row.f_ec_realized =
                h > 0 && !f.block_ids.empty()
                    ? double(f.leak_ec_bits + f.verify_bits) /
                          (double(f.block_ids.size()) * kEcPayloadBits * h)
                    : 0.0;
            row.compression_ratio = secure.compression_ratio;
            row.cumulative_secure_bits = cumulative_secure;
            stats->append(row);
          }
          frame_log.append(f.frame_id, window_sifted_bits, f.qber_mean,
                           bounds.p1_lower * double(f.tally.detected[0][0]),
                           bounds.e1_upper, f.leak_ec_bits, secure.secure_bits,
                           secure.asymptotic_bits
                               ? double(secure.secure_bits) / secure.asymptotic_bits
                               : 0.0);
          window_start_slot = slots_now;
          window_sifted_bits = 0;
        }
        break;
      }

      case MsgType::stats_ping:
        break;  // keepalive

      case MsgType::shutdown:
        report.clean_shutdown = true;
        link.close();
        return report;

      default:
        throw ProtocolError("alice: unexpected message type");
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Bob: paces the run. Regenerates the pulse stream, detects, announces,
// decodes, and mirrors frame extraction.

inline NodeReport run_bob(const NodeOptions& opt, Transport& link) {
  const ProtocolParams& params = opt.cfg.protocol;
  const ChannelDetectorParams& channel = opt.cfg.channel;
  NodeReport report;

  std::unique_ptr<CodeFamily> loaded;
  if (!opt.codes_path.empty()) loaded = detail::load_code_family(opt.codes_path);
  const CodeFamily& family = loaded ? *loaded : CodeFamily::shared();

  PulseGenerator gen(params, derive_seed(opt.session_seed, detail::kSeedQuantum));
  Detector det(channel, derive_seed(opt.session_seed, detail::kSeedDetector));
  SiftBob sift(params, derive_seed(opt.session_seed, detail::kSeedBobBasis));
  EcBob ec(family, opt.session_seed, opt.decode_threads);
  FrameAssembler assembler(params.pa_dataset_bits);
  PaEngine pa;
  std::unique_ptr<KeyStoreWriter> keystore;
  if (!opt.keys_path.empty()) keystore = std::make_unique<KeyStoreWriter>(opt.keys_path);
  std::unique_ptr<StatsWriter> stats;
  if (!opt.stats_path.empty()) stats = std::make_unique<StatsWriter>(opt.stats_path);
  detail::FrameLogWriter frame_log(opt.frame_log_path);
  detail::EventDumpWriter dump(opt.dump_events_path);

  std::deque<SiftAnnounce> outstanding;
  std::deque<SiftedBlock> blocks;
  std::deque<EcSyndromeMsg> syndromes;
  std::map<uint64_t, PAFrame> frames;
  uint64_t cumulative_secure = 0;

  auto resolve_blocks = [&]() {
    while (!blocks.empty() && !syndromes.empty()) {
      EcSyndromeMsg msg = std::move(syndromes.front());
      syndromes.pop_front();
      SiftedBlock block = std::move(blocks.front());
      blocks.pop_front();
      report.sifted_bits += block.bits.size();
      auto [reply, blk] = ec.on_syndrome(msg, block);
      link.send({uint8_t(MsgType::ec_verify), 0, pack(reply)});
      if (blk.corrected) ++report.blocks_ok;
      else ++report.blocks_failed;
      for (PAFrame& f : assembler.add_block(blk))
        frames.emplace(f.frame_id, std::move(f));
    }
  };

  auto handle = [&](WireFrame&& frame) {
    switch (MsgType(frame.msg_type)) {
      case MsgType::sift_reply: {
        if (outstanding.empty()) throw ProtocolError("bob: reply without announce");
        SiftReply reply = unpack_reply(frame.payload);
        sift.on_reply(reply, outstanding.front());
        outstanding.pop_front();
        for (auto& b : sift.take_completed_blocks()) blocks.push_back(std::move(b));
        resolve_blocks();
        break;
      }
      case MsgType::ec_syndrome: {
        syndromes.push_back(unpack_syndrome(frame.payload));
        resolve_blocks();
        break;
      }
      case MsgType::pa_seed: {
        PaSeedMsg msg = unpack_pa_seed(frame.payload);
        auto it = frames.find(msg.frame_id);
        if (it == frames.end()) throw ProtocolError("bob: pa seed for unknown frame");
        PAFrame f = std::move(it->second);
        frames.erase(it);

        SecurityBounds bounds = decoy_bounds(f.tally, params, params.epsilon_security);
        SecureLengthResult secure =
            secure_length(bounds, f.qber_mean, f.leak_ec_bits, f.verify_bits, params);
        if (secure.secure_bits != msg.secure_bits)
          throw ProtocolError("bob: secure length disagrees with peer");

        KeyMaterial key = pa.compress_frame(f, secure, msg.seed_value);
        if (keystore) keystore->append(f.frame_id, key.key);
        cumulative_secure += secure.secure_bits;
        report.secure_bits = cumulative_secure;
        ++report.frames;
        frame_log.append(f.frame_id, 0, f.qber_mean,
                         bounds.p1_lower * double(f.tally.detected[0][0]),
                         bounds.e1_upper, f.leak_ec_bits, secure.secure_bits,
                         secure.asymptotic_bits
                             ? double(secure.secure_bits) / secure.asymptotic_bits
                             : 0.0);
        break;
      }
      case MsgType::stats_ping:
      case MsgType::shutdown:
        break;
      default:
        throw ProtocolError("bob: unexpected message type");
    }
  };

  uint64_t remaining = opt.pulse_budget;
  while (remaining > 0) {
    size_t take = size_t(std::min<uint64_t>(remaining, opt.gen_batch));
    PulseBatch batch = gen.next_batch(take);
    remaining -= take;
    uint64_t start = batch.base_slot;
    uint64_t end = batch.base_slot + batch.size() - 1;
    report.slots_processed = end + 1;
    auto events = det.detect(batch);
    dump.append(events);
    for (auto& ann : sift.add_events(events, start, end)) {
      link.send({uint8_t(MsgType::sift_announce), 0, pack(ann)});
      outstanding.push_back(std::move(ann));
      while (outstanding.size() > opt.announce_window) {
        auto f = link.recv();
        if (!f) return report;
        handle(std::move(*f));
      }
    }
  }

  // drain: every announce replied, every block resolved, every locally
  // completed frame matched with its extraction seed
  while (!outstanding.empty() || !blocks.empty() || !frames.empty()) {
    auto f = link.recv();
    if (!f) return report;
    handle(std::move(*f));
  }

  link.send({uint8_t(MsgType::shutdown), 0, {}});
  report.clean_shutdown = true;
  link.close();
  return report;
}

inline NodeReport run_node(const NodeOptions& opt, Transport& link) {
  return opt.role == Role::alice ? run_alice(opt, link) : run_bob(opt, link);
}

}  // namespace qkd
