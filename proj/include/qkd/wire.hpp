#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkd/bitvec.hpp"
#include "qkd/ec.hpp"
#include "qkd/sifting.hpp"

namespace qkd {

enum class MsgType : uint8_t {
  sift_announce = 0x01,
  sift_reply = 0x02,
  ec_syndrome = 0x03,
  ec_verify = 0x04,
  pa_seed = 0x05,
  stats_ping = 0x06,
  shutdown = 0x07,
};

inline constexpr uint32_t kMaxFrameLength = 1u << 26;
inline constexpr size_t kWireHeaderBytes = 13;  // length u32 + type u8 + seq u64

struct WireFrame {
  uint8_t msg_type = 0;
  uint64_t frame_seq = 0;
  std::vector<uint8_t> payload;
};

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// length covers msg_type + frame_seq + payload; length and seq big endian.
inline std::vector<uint8_t> encode_frame(const WireFrame& f) {
  uint64_t body = 9 + f.payload.size();
  if (body > kMaxFrameLength) throw ProtocolError("frame length overflow");
  std::vector<uint8_t> out;
  out.reserve(kWireHeaderBytes + f.payload.size());
  uint32_t len = uint32_t(body);
  for (int i = 3; i >= 0; --i) out.push_back(uint8_t(len >> (8 * i)));
  out.push_back(f.msg_type);
  for (int i = 7; i >= 0; --i) out.push_back(uint8_t(f.frame_seq >> (8 * i)));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

inline bool msg_type_known(uint8_t t) {
  return t >= uint8_t(MsgType::sift_announce) && t <= uint8_t(MsgType::shutdown);
}

// Decodes one complete frame from `bytes`; returns consumed size.
inline size_t decode_frame(const uint8_t* bytes, size_t available, WireFrame& out) {
  if (available < kWireHeaderBytes) throw ProtocolError("truncated frame header");
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len = (len << 8) | bytes[i];
  if (len < 9) throw ProtocolError("frame length too small");
  if (len > kMaxFrameLength) throw ProtocolError("frame length overflow");
  if (available < 4 + size_t(len)) throw ProtocolError("truncated frame body");
  out.msg_type = bytes[4];
  if (!msg_type_known(out.msg_type))
    throw ProtocolError("unknown msg_type " + std::to_string(out.msg_type));
  out.frame_seq = 0;
  for (int i = 0; i < 8; ++i) out.frame_seq = (out.frame_seq << 8) | bytes[5 + i];
  out.payload.assign(bytes + 13, bytes + 4 + len);
  return 4 + size_t(len);
}

// --------------------------------------------------------------------------
// Payload serialization, little endian.

namespace detail {

struct Writer {
  std::vector<uint8_t> buf;
  void u8(uint8_t v) { buf.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(uint8_t(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(uint8_t(v >> (8 * i)));
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void bits(const BitVec& v) {
    u64(v.size());
    auto bytes = v.to_bytes();
    buf.insert(buf.end(), bytes.begin(), bytes.end());
  }
};

struct Reader {
  const uint8_t* p;
  size_t n;
  size_t off = 0;

  void need(size_t k) const {
    if (off + k > n) throw ProtocolError("payload underrun");
  }
  uint8_t u8() {
    need(1);
    return p[off++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  BitVec bits() {
    uint64_t count = u64();
    size_t nbytes = size_t((count + 7) / 8);
    need(nbytes);
    BitVec v = BitVec::from_bytes(p + off, size_t(count));
    off += nbytes;
    return v;
  }
  void done() const {
    if (off != n) throw ProtocolError("payload trailing bytes");
  }
};

}  // namespace detail

inline std::vector<uint8_t> pack(const SiftAnnounce& m) {
  detail::Writer w;
  w.u64(m.start_slot);
  w.u64(m.end_slot);
  w.u32(uint32_t(m.records.size()));
  for (const auto& r : m.records) {
    w.u32(r.slot_offset);
    w.u8(uint8_t(r.basis | (r.bit << 1)));
  }
  return std::move(w.buf);
}

inline SiftAnnounce unpack_announce(const std::vector<uint8_t>& buf) {
  detail::Reader r{buf.data(), buf.size()};
  SiftAnnounce m;
  m.start_slot = r.u64();
  m.end_slot = r.u64();
  uint32_t n = r.u32();
  m.records.resize(n);
  for (auto& rec : m.records) {
    rec.slot_offset = r.u32();
    uint8_t f = r.u8();
    rec.basis = f & 1;
    rec.bit = (f >> 1) & 1;
  }
  r.done();
  return m;
}

inline std::vector<uint8_t> pack(const SiftReply& m) {
  detail::Writer w;
  w.u64(m.start_slot);
  w.u64(m.end_slot);
  w.u32(uint32_t(m.records.size()));
  for (const auto& r : m.records)
    w.u8(uint8_t(r.disposition | (r.intensity << 3) | (r.alice_x_bit << 5)));
  for (int i = 0; i < 3; ++i)
    for (int b = 0; b < 2; ++b) w.u64(m.sent_cumulative[i][b]);
  return std::move(w.buf);
}

inline SiftReply unpack_reply(const std::vector<uint8_t>& buf) {
  detail::Reader r{buf.data(), buf.size()};
  SiftReply m;
  m.start_slot = r.u64();
  m.end_slot = r.u64();
  uint32_t n = r.u32();
  m.records.resize(n);
  for (auto& rec : m.records) {
    uint8_t f = r.u8();
    rec.disposition = f & 7;
    rec.intensity = (f >> 3) & 3;
    rec.alice_x_bit = (f >> 5) & 1;
  }
  for (int i = 0; i < 3; ++i)
    for (int b = 0; b < 2; ++b) m.sent_cumulative[i][b] = r.u64();
  r.done();
  return m;
}

inline std::vector<uint8_t> pack(const EcSyndromeMsg& m) {
  detail::Writer w;
  w.u64(m.block_id);
  w.u8(m.discard);
  w.u8(m.rate_index);
  w.f64(m.qber_used);
  w.f64(m.margin_used);
  w.bits(m.alice_sample);
  w.bits(m.syndrome_bits);
  w.u64(m.alice_tag);
  return std::move(w.buf);
}

inline EcSyndromeMsg unpack_syndrome(const std::vector<uint8_t>& buf) {
  detail::Reader r{buf.data(), buf.size()};
  EcSyndromeMsg m;
  m.block_id = r.u64();
  m.discard = r.u8();
  m.rate_index = r.u8();
  m.qber_used = r.f64();
  m.margin_used = r.f64();
  m.alice_sample = r.bits();
  m.syndrome_bits = r.bits();
  m.alice_tag = r.u64();
  r.done();
  return m;
}

inline std::vector<uint8_t> pack(const EcVerifyMsg& m) {
  detail::Writer w;
  w.u64(m.block_id);
  w.u8(m.ok);
  w.u64(m.bob_tag);
  w.f64(m.qber_sample);
  w.u64(m.realized_errors);
  return std::move(w.buf);
}

inline EcVerifyMsg unpack_verify(const std::vector<uint8_t>& buf) {
  detail::Reader r{buf.data(), buf.size()};
  EcVerifyMsg m;
  m.block_id = r.u64();
  m.ok = r.u8();
  m.bob_tag = r.u64();
  m.qber_sample = r.f64();
  m.realized_errors = r.u64();
  r.done();
  return m;
}

struct PaSeedMsg {
  uint64_t frame_id = 0;
  uint64_t seed_value = 0;
  uint64_t secure_bits = 0;
  uint64_t leak_ec_bits = 0;
  uint64_t verify_bits = 0;
  double qber_mean = 0.0;
};

inline std::vector<uint8_t> pack(const PaSeedMsg& m) {
  detail::Writer w;
  w.u64(m.frame_id);
  w.u64(m.seed_value);
  w.u64(m.secure_bits);
  w.u64(m.leak_ec_bits);
  w.u64(m.verify_bits);
  w.f64(m.qber_mean);
  return std::move(w.buf);
}

inline PaSeedMsg unpack_pa_seed(const std::vector<uint8_t>& buf) {
  detail::Reader r{buf.data(), buf.size()};
  PaSeedMsg m;
  m.frame_id = r.u64();
  m.seed_value = r.u64();
  m.secure_bits = r.u64();
  m.leak_ec_bits = r.u64();
  m.verify_bits = r.u64();
  m.qber_mean = r.f64();
  r.done();
  return m;
}

}  // namespace qkd
