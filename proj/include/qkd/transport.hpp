#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "qkd/queue.hpp"
#include "qkd/wire.hpp"

namespace qkd {

// Authentication of the classical channel is assumed pre-shared. This slot
// exists so a real authenticator can be dropped in; the default passes
// frames through untouched.
class Authenticator {
 public:
  virtual ~Authenticator() = default;
  virtual void on_send(const WireFrame&) {}
  virtual bool on_receive(const WireFrame&) { return true; }
};

// One direction-pair endpoint. send() applies backpressure; recv() blocks
// and returns nullopt on orderly shutdown or peer disconnect.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(WireFrame frame) = 0;
  virtual std::optional<WireFrame> recv() = 0;
  virtual void close() = 0;

  void set_authenticator(std::shared_ptr<Authenticator> a) { auth_ = std::move(a); }

 protected:
  void authenticate_send(const WireFrame& f) {
    if (auth_) auth_->on_send(f);
  }
  void authenticate_recv(const WireFrame& f) {
    if (auth_ && !auth_->on_receive(f)) throw ProtocolError("authentication failed");
  }

 private:
  std::shared_ptr<Authenticator> auth_;
};

// In-process pair of bounded frame queues.
class LoopbackTransport : public Transport {
 public:
  using Queue = BoundedQueue<WireFrame>;

  LoopbackTransport(std::shared_ptr<Queue> tx, std::shared_ptr<Queue> rx)
      : tx_(std::move(tx)), rx_(std::move(rx)) {}

  static std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_pair(
      size_t capacity = 64) {
    auto a2b = std::make_shared<Queue>(capacity);
    auto b2a = std::make_shared<Queue>(capacity);
    return {std::make_unique<LoopbackTransport>(a2b, b2a),
            std::make_unique<LoopbackTransport>(b2a, a2b)};
  }

  void send(WireFrame frame) override {
    frame.frame_seq = next_seq_++;
    authenticate_send(frame);
    tx_->push(std::move(frame));
  }

  std::optional<WireFrame> recv() override {
    auto f = rx_->pop();
    if (f) {
      if (f->frame_seq != expect_seq_++) throw ProtocolError("frame_seq out of order");
      authenticate_recv(*f);
    }
    return f;
  }

  void close() override {
    tx_->close();
    rx_->close();
  }

 private:
  std::shared_ptr<Queue> tx_, rx_;
  uint64_t next_seq_ = 0;
  uint64_t expect_seq_ = 0;
};

// Blocking TCP transport with the length-prefixed framing.
class TcpTransport : public Transport {
 public:
  explicit TcpTransport(int fd) : fd_(fd) {
    int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpTransport() override { close(); }

  static std::unique_ptr<TcpTransport> listen_on(const std::string& addr) {
    auto [host, port] = split(addr);
    int srv = ::socket(AF_INET, SOCK_STREAM, 0);
    if (srv < 0) throw std::runtime_error("socket failed");
    int one = 1;
    setsockopt(srv, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    sa.sin_addr.s_addr = host.empty() ? INADDR_ANY : inet_addr(host.c_str());
    if (bind(srv, (sockaddr*)&sa, sizeof sa) != 0) {
      ::close(srv);
      throw std::runtime_error("bind failed on " + addr);
    }
    if (::listen(srv, 1) != 0) {
      ::close(srv);
      throw std::runtime_error("listen failed");
    }
    int fd = accept(srv, nullptr, nullptr);
    ::close(srv);
    if (fd < 0) throw std::runtime_error("accept failed");
    return std::make_unique<TcpTransport>(fd);
  }

  static std::unique_ptr<TcpTransport> connect_to(const std::string& addr,
                                                  int retries = 50) {
    auto [host, port] = split(addr);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    sa.sin_addr.s_addr = inet_addr(host.empty() ? "127.0.0.1" : host.c_str());
    for (int attempt = 0;; ++attempt) {
      int fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw std::runtime_error("socket failed");
      if (::connect(fd, (sockaddr*)&sa, sizeof sa) == 0)
        return std::make_unique<TcpTransport>(fd);
      ::close(fd);
      if (attempt >= retries) throw std::runtime_error("connect failed to " + addr);
      usleep(100'000);
    }
  }

  void send(WireFrame frame) override {
    frame.frame_seq = next_seq_++;
    authenticate_send(frame);
    auto bytes = encode_frame(frame);
    size_t off = 0;
    while (off < bytes.size()) {
      ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n <= 0) throw std::runtime_error("tcp send failed");
      off += size_t(n);
    }
  }

  std::optional<WireFrame> recv() override {
    uint8_t head[kWireHeaderBytes];
    if (!read_fully(head, sizeof head)) return std::nullopt;
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len = (len << 8) | head[i];
    if (len < 9 || len > kMaxFrameLength) throw ProtocolError("bad frame length");
    std::vector<uint8_t> rest(len - 9);
    if (!rest.empty() && !read_fully(rest.data(), rest.size()))
      throw ProtocolError("truncated frame");
    std::vector<uint8_t> whole(head, head + sizeof head);
    whole.insert(whole.end(), rest.begin(), rest.end());
    WireFrame f;
    decode_frame(whole.data(), whole.size(), f);
    if (f.frame_seq != expect_seq_++) throw ProtocolError("frame_seq out of order");
    authenticate_recv(f);
    return f;
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  static std::pair<std::string, uint16_t> split(const std::string& addr) {
    auto colon = addr.rfind(':');
    if (colon == std::string::npos)
      return {"", uint16_t(std::stoi(addr))};
    return {addr.substr(0, colon), uint16_t(std::stoi(addr.substr(colon + 1)))};
  }

  bool read_fully(uint8_t* dst, size_t n) {
    size_t off = 0;
    while (off < n) {
      ssize_t r = ::recv(fd_, dst + off, n - off, 0);
      if (r == 0) return false;  // peer closed
      if (r < 0) return false;
      off += size_t(r);
    }
    return true;
  }

  int fd_ = -1;
  uint64_t next_seq_ = 0;
  uint64_t expect_seq_ = 0;
};

}  // namespace qkd
