#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkd/bitvec.hpp"

namespace qkd {

namespace detail {

inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
  static uint32_t table[256];
  static bool init = [] {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    return true;
  }();
  (void)init;
  crc = ~crc;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

}  // namespace detail

// Append-only binary key store. Record layout, little endian:
//   frame_id u64 | bit_length u32 | key bytes (ceil(bits/8)) | crc32 u32
// The checksum covers frame_id through the key bytes, so a forced kill
// leaves a parseable checksum-valid prefix.
class KeyStoreWriter {
 public:
  explicit KeyStoreWriter(const std::string& path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw std::runtime_error("keystore: cannot open " + path);
  }
  ~KeyStoreWriter() {
    if (f_) std::fclose(f_);
  }
  KeyStoreWriter(const KeyStoreWriter&) = delete;
  KeyStoreWriter& operator=(const KeyStoreWriter&) = delete;

  void append(uint64_t frame_id, const BitVec& key) {
    std::vector<uint8_t> rec;
    detail::put_u64(rec, frame_id);
    detail::put_u32(rec, uint32_t(key.size()));
    auto bytes = key.to_bytes();
    rec.insert(rec.end(), bytes.begin(), bytes.end());
    uint32_t crc = detail::crc32(rec.data(), rec.size());
    detail::put_u32(rec, crc);
    if (std::fwrite(rec.data(), 1, rec.size(), f_) != rec.size())
      throw std::runtime_error("keystore: short write");
    std::fflush(f_);
  }

 private:
  std::FILE* f_ = nullptr;
};

struct KeyRecord {
  uint64_t frame_id = 0;
  BitVec key;
};

// Reads the checksum-valid prefix; a truncated or corrupt tail is dropped.
inline std::vector<KeyRecord> read_keystore(const std::string& path) {
  std::vector<KeyRecord> out;
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return out;
  for (;;) {
    uint8_t head[12];
    if (std::fread(head, 1, 12, f) != 12) break;
    uint64_t frame_id = 0;
    for (int i = 0; i < 8; ++i) frame_id |= uint64_t(head[i]) << (8 * i);
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= uint32_t(head[8 + i]) << (8 * i);
    size_t nbytes = (bits + 7) / 8;
    if (bits > (1u << 27)) break;  // implausible record
    std::vector<uint8_t> body(nbytes + 4);
    if (std::fread(body.data(), 1, body.size(), f) != body.size()) break;
    uint32_t crc = detail::crc32(head, 12);
    crc = detail::crc32(body.data(), nbytes, crc);
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= uint32_t(body[nbytes + i]) << (8 * i);
    if (crc != stored) break;
    KeyRecord rec;
    rec.frame_id = frame_id;
    rec.key = BitVec::from_bytes(body.data(), bits);
    out.push_back(std::move(rec));
  }
  std::fclose(f);
  return out;
}

}  // namespace qkd
