// qkd-pipeline: two-node decoy-state BB84 post-processing pipeline driver.
//
// Subcommands:
//   run     one node (or an in-process loopback pair) of the pipeline
//   bench   standalone throughput of the sifting / EC / PA stages
//   report  summarize a stats CSV produced by `run --stats`

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <cstdio>
#include <thread>

#include "qkd/node.hpp"

using namespace qkd;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_run(const std::string& role_str, const std::string& config_path,
            const std::string& listen, const std::string& connect, bool loopback,
            uint64_t pulses, uint64_t seed, const std::string& stats,
            const std::string& keys, const std::string& frame_log,
            const std::string& dump_events, const std::string& codes) {
  NodeOptions opt;
  if (!config_path.empty()) opt.cfg = load_config(config_path);
  opt.codes_path = codes;

  ValidationReport vr = validate(opt.cfg.protocol);
  for (const auto& v : validate(opt.cfg.channel).violations) vr.violations.push_back(v);
  if (!vr.ok()) {
    for (const auto& v : vr.violations) std::fprintf(stderr, "config: %s\n", v.c_str());
    return 2;
  }

  opt.session_seed = seed;
  opt.pulse_budget = pulses;
  opt.stats_path = stats;
  opt.keys_path = keys;
  opt.frame_log_path = frame_log;
  opt.dump_events_path = dump_events;

  if (loopback) {
    NodeOptions a = opt, b = opt;
    a.role = Role::alice;
    b.role = Role::bob;
    if (!keys.empty()) {
      a.keys_path = keys + ".alice";
      b.keys_path = keys + ".bob";
    }
    b.stats_path.clear();
    b.frame_log_path.clear();
    auto [ta, tb] = LoopbackTransport::make_pair();
    NodeReport ra, rb;
    std::thread alice([&] { ra = run_node(a, *ta); });
    rb = run_node(b, *tb);
    alice.join();
    std::printf("frames=%llu secure_bits=%llu sifted_bits=%llu blocks_ok=%llu "
                "blocks_failed=%llu clean=%d stores_match=%d\n",
                (unsigned long long)ra.frames, (unsigned long long)ra.secure_bits,
                (unsigned long long)ra.sifted_bits, (unsigned long long)ra.blocks_ok,
                (unsigned long long)ra.blocks_failed, int(rb.clean_shutdown),
                int(ra.secure_bits == rb.secure_bits && ra.frames == rb.frames));
    return rb.clean_shutdown ? 0 : 1;
  }

  opt.role = role_str == "alice" ? Role::alice : Role::bob;
  std::unique_ptr<Transport> link;
  if (!listen.empty()) link = TcpTransport::listen_on(listen);
  else if (!connect.empty()) link = TcpTransport::connect_to(connect);
  else {
    std::fprintf(stderr, "run: need --listen, --connect or --loopback\n");
    return 2;
  }
  NodeReport r = run_node(opt, *link);
  std::printf("frames=%llu secure_bits=%llu sifted_bits=%llu blocks_ok=%llu "
              "blocks_failed=%llu clean=%d\n",
              (unsigned long long)r.frames, (unsigned long long)r.secure_bits,
              (unsigned long long)r.sifted_bits, (unsigned long long)r.blocks_ok,
              (unsigned long long)r.blocks_failed, int(r.clean_shutdown));
  return r.clean_shutdown ? 0 : 1;
}

int bench_sift() {
  ProtocolParams p;
  ChannelDetectorParams c;
  const size_t slots = 40'000'000;

  PulseGenerator gen(p, 1);
  Detector det(c, 2);
  SiftAlice alice(p);
  SiftBob bob(p, 3);

  size_t detections = 0;
  auto t0 = std::chrono::steady_clock::now();
  double gen_time = 0, sift_time = 0;
  for (size_t done = 0; done < slots;) {
    size_t take = std::min<size_t>(slots - done, 1 << 20);
    auto g0 = std::chrono::steady_clock::now();
    PulseBatch batch = gen.next_batch(take);
    auto events = det.detect(batch);
    gen_time += seconds_since(g0);
    detections += events.size();
    uint64_t start = batch.base_slot, end = batch.base_slot + batch.size() - 1;

    auto s0 = std::chrono::steady_clock::now();
    alice.add_pulses(std::move(batch));
    for (auto& ann : bob.add_events(events, start, end)) {
      SiftReply reply = alice.on_announce(ann);
      bob.on_reply(reply, ann);
    }
    sift_time += seconds_since(s0);
    done += take;
  }
  double total = seconds_since(t0);
  std::printf("sift: %zu detections over %zu slots\n", detections, slots);
  std::printf("sift: source+detector %.1f Mslot/s, sifting %.1f Mdetection/s "
              "(reference target 50-60 MC/s)\n",
              slots / gen_time / 1e6, detections / sift_time / 1e6);
  std::printf("sift: end-to-end %.2f s\n", total);
  return 0;
}

int bench_ec() {
  const CodeFamily& family = CodeFamily::shared();
  EcAlice alice(family, 42, 0.032);
  EcBob bob(family, 42);

  const int blocks = 8;
  Xoshiro256 rng(7);
  double alice_time = 0, bob_time = 0;
  size_t failures = 0;
  for (int i = 0; i < blocks; ++i) {
    SiftedBlock a, b;
    a.bits = BitVec::random(kEcBlockBits, rng.next());
    b.bits = a.bits;
    for (size_t j = 0; j < kEcBlockBits; ++j)
      if (rng.next_double() < 0.03) b.bits.flip(j);

    auto t0 = std::chrono::steady_clock::now();
    EcSyndromeMsg msg = alice.process_block(a);
    alice_time += seconds_since(t0);

    auto t1 = std::chrono::steady_clock::now();
    auto [reply, blk] = bob.on_syndrome(msg, b);
    bob_time += seconds_since(t1);
    alice.on_verify(reply);
    if (!reply.ok) ++failures;
  }
  double mbits = double(blocks) * kEcBlockBits / 1e6;
  std::printf("ec: %d blocks of 2^20 bits at 3%% QBER, %zu failures\n", blocks, failures);
  std::printf("ec: syndrome generation %.1f Mb/s, decode+verify %.1f Mb/s "
              "(reference target 55 Mb/s)\n",
              mbits / alice_time, mbits / bob_time);
  return 0;
}

int bench_pa() {
  ProtocolParams p;
  const uint64_t n = p.pa_dataset_bits;
  const uint64_t m = uint64_t(n * 0.29);
  BitVec input = BitVec::random(n, 11);
  ToeplitzSeed seed = ToeplitzSeed::expand(n, m, 12);

  auto t0 = std::chrono::steady_clock::now();
  BitVec key = toeplitz_ntt(seed, input);
  double dt = seconds_since(t0);
  std::printf("pa: %llu -> %llu bits in %.2f s, %.1f Mb/s "
              "(reference target 108 Mb/s)\n",
              (unsigned long long)n, (unsigned long long)key.size(), dt, n / dt / 1e6);
  return 0;
}

int cmd_report(const std::string& csv) {
  StatsSummary s = summarize_stats(csv);
  std::printf("rows: %zu\n", s.rows);
  if (s.rows == 0) return 0;
  std::printf("sifted rate:  %.3f Mb/s (std %.3f)\n", s.sifted_mean / 1e6, s.sifted_std / 1e6);
  std::printf("secure rate:  %.3f Mb/s (std %.3f, fluctuation %.1f%%)\n",
              s.secure_mean / 1e6, s.secure_std / 1e6, 100.0 * s.secure_fluctuation());
  std::printf("qber:         %.3f%%\n", 100.0 * s.qber_mean);
  std::printf("ec failure:   %.3f%%\n", 100.0 * s.failure_mean);
  std::printf("f_ec:         %.3f\n", s.f_ec_mean);
  std::printf("compression:  %.4f\n", s.compression_mean);
  std::printf("total secure: %.3f Mb\n", s.total_secure_bits / 1e6);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoy-state BB84 post-processing pipeline"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run one node or a loopback pair");
  std::string role = "alice", config_path, listen, connect, stats, keys, frame_log,
              dump_events, codes;
  bool loopback = false;
  uint64_t pulses = 100'000'000, seed = 1;
  run->add_option("--role", role, "alice|bob")->check(CLI::IsMember({"alice", "bob"}));
  run->add_option("--config", config_path, "key = value config file");
  run->add_option("--listen", listen, "listen address host:port");
  run->add_option("--connect", connect, "connect address host:port");
  run->add_flag("--loopback", loopback, "run both nodes in-process");
  run->add_option("--pulses", pulses, "simulated pulse budget");
  run->add_option("--seed", seed, "session seed");
  run->add_option("--stats", stats, "stats CSV output");
  run->add_option("--keys", keys, "key store output path");
  run->add_option("--frame-log", frame_log, "per-frame JSON-lines security log");
  run->add_option("--dump-events", dump_events, "raw detection event dump (bob)");
  run->add_option("--codes", codes, "LDPC shift-matrix file (shared by both nodes)");

  // codes
  auto* codes_cmd = app.add_subcommand("codes", "write the built-in LDPC family to a file");
  std::string codes_out;
  codes_cmd->add_option("path", codes_out, "output path")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "standalone stage throughput");
  std::string stage;
  bench->add_option("stage", stage, "sift|ec|pa")
      ->required()
      ->check(CLI::IsMember({"sift", "ec", "pa"}));

  // report
  auto* report = app.add_subcommand("report", "summarize a stats CSV");
  std::string csv;
  report->add_option("csv", csv, "stats CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(role, config_path, listen, connect, loopback, pulses, seed, stats,
                     keys, frame_log, dump_events, codes);
    if (codes_cmd->parsed()) {
      std::ofstream out(codes_out);
      if (!out) {
        std::fprintf(stderr, "cannot open %s\n", codes_out.c_str());
        return 1;
      }
      save_codes(CodeFamily::shared(), out);
      return 0;
    }
    if (bench->parsed()) {
      if (stage == "sift") return bench_sift();
      if (stage == "ec") return bench_ec();
      return bench_pa();
    }
    if (report->parsed()) return cmd_report(csv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
