#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "circa/errors.hpp"
#include "circa/field.hpp"

namespace circa {

enum class FrameType : std::uint8_t {
  kConfigHash = 0x01,
  kLinearMasked = 0x02,
  kGcLabels = 0x03,
  kGcOutputLabels = 0x04,
  kBeaverOpen = 0x05,
  kLogits = 0x06,
  kOfflineMaterial = 0x07,
  kAbort = 0x7F,
};

/// Wire limit on the 4-byte length field (type byte plus payload).
constexpr std::uint32_t kMaxFrameLen = 64u * 1024 * 1024;

inline const char* frame_type_name(FrameType t) {
  switch (t) {
    case FrameType::kConfigHash: return "ConfigHash";
    case FrameType::kLinearMasked: return "LinearMasked";
    case FrameType::kGcLabels: return "GcLabels";
    case FrameType::kGcOutputLabels: return "GcOutputLabels";
    case FrameType::kBeaverOpen: return "BeaverOpen";
    case FrameType::kLogits: return "Logits";
    case FrameType::kOfflineMaterial: return "OfflineMaterial";
    case FrameType::kAbort: return "Abort";
  }
  return "Unknown";
}

struct Frame {
  FrameType type;
  std::vector<std::uint8_t> payload;
};

/// Append-only little-endian serializer for frame payloads.
struct WireWriter {
  std::vector<std::uint8_t> buf;

  void u8(std::uint8_t v) { buf.push_back(v); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void fe(FieldElement e) { u64(e.v); }

  void bytes(const std::uint8_t* data, std::size_t len) { buf.insert(buf.end(), data, data + len); }

  void fe_vec(const std::vector<FieldElement>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (FieldElement e : v) fe(e);
  }
};

/// Bounds-checked little-endian deserializer; underrun is a protocol error.
struct WireReader {
  const std::uint8_t* data;
  std::size_t len;
  std::size_t pos = 0;

  explicit WireReader(const std::vector<std::uint8_t>& v) : data(v.data()), len(v.size()) {}
  WireReader(const std::uint8_t* d, std::size_t n) : data(d), len(n) {}

  void need(std::size_t n) const {
    if (len - pos < n) throw ProtocolError("frame payload truncated");
  }

  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }

  FieldElement fe() { return {u64()}; }

  void bytes(std::uint8_t* out, std::size_t n) {
    need(n);
    std::memcpy(out, data + pos, n);
    pos += n;
  }

  std::vector<FieldElement> fe_vec() {
    std::uint32_t n = u32();
    need(std::size_t{n} * 8);
    std::vector<FieldElement> v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = fe();
    return v;
  }

  bool done() const { return pos == len; }

  void expect_done() const {
    if (!done()) throw ProtocolError("frame payload has trailing bytes");
  }
};

/// Encode one frame to raw wire bytes: u32 LE length, type byte, payload.
inline std::vector<std::uint8_t> encode_frame(FrameType type, const std::vector<std::uint8_t>& payload) {
  if (payload.size() + 1 > kMaxFrameLen) throw ProtocolError("frame exceeds length cap");
  std::uint32_t n = static_cast<std::uint32_t>(payload.size() + 1);
  std::vector<std::uint8_t> out;
  out.reserve(4 + n);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.push_back(static_cast<std::uint8_t>(type));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

/// Reliable ordered byte stream with frame helpers layered on top. Counters
/// track all bytes on the wire, headers included.
class Channel {
 public:
  virtual ~Channel() = default;

  virtual void send_bytes(const std::uint8_t* data, std::size_t len) = 0;
  /// Returns bytes read (>= 1) or 0 on orderly peer close.
  virtual std::size_t recv_some(std::uint8_t* data, std::size_t len) = 0;

  void send_frame(FrameType type, const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> wire = encode_frame(type, payload);
    send_bytes(wire.data(), wire.size());
    sent_ += wire.size();
  }

  void send_frame(FrameType type, const WireWriter& w) { send_frame(type, w.buf); }

  void send_abort() { send_frame(FrameType::kAbort, std::vector<std::uint8_t>{}); }

  Frame recv_frame() {
    std::uint8_t hdr[4];
    recv_exact(hdr, 4);
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(hdr[i]) << (8 * i);
    if (n == 0) throw ProtocolError("frame missing type byte");
    if (n > kMaxFrameLen) throw ProtocolError("frame exceeds length cap");
    std::vector<std::uint8_t> body(n);
    recv_exact(body.data(), n);
    received_ += 4 + std::size_t{n};
    Frame f;
    f.type = static_cast<FrameType>(body[0]);
    f.payload.assign(body.begin() + 1, body.end());
    switch (f.type) {
      case FrameType::kConfigHash:
      case FrameType::kLinearMasked:
      case FrameType::kGcLabels:
      case FrameType::kGcOutputLabels:
      case FrameType::kBeaverOpen:
      case FrameType::kLogits:
      case FrameType::kOfflineMaterial:
      case FrameType::kAbort:
        return f;
    }
    throw ProtocolError("unknown frame type " + std::to_string(body[0]));
  }

  /// Receive and require one specific type. A peer Abort, or any other
  /// mismatch (after sending our own Abort), is fatal.
  Frame expect_frame(FrameType type) {
    Frame f = recv_frame();
    if (f.type == type) return f;
    if (f.type == FrameType::kAbort) throw ProtocolError("peer sent Abort");
    try {
      send_abort();
    } catch (const ProtocolError&) {
    }
    throw ProtocolError(std::string("expected ") + frame_type_name(type) + " frame, got " +
                        frame_type_name(f.type));
  }

  std::uint64_t bytes_sent() const { return sent_; }
  std::uint64_t bytes_received() const { return received_; }

  void reset_counters() {
    sent_ = 0;
    received_ = 0;
  }

 protected:
  void recv_exact(std::uint8_t* out, std::size_t len) {
    std::size_t got = 0;
    while (got < len) {
      std::size_t r = recv_some(out + got, len - got);
      if (r == 0) throw ProtocolError("connection closed mid-frame");
      got += r;
    }
  }

 private:
  std::uint64_t sent_ = 0;
  std::uint64_t received_ = 0;
};

/// In-process pipe pair for tests: two endpoints, each direction an ordered
/// byte queue guarded by a mutex and condition variable.
class LoopbackChannel : public Channel {
  struct Pipe {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::uint8_t> bytes;
    bool closed = false;
  };

 public:
  static std::pair<std::unique_ptr<LoopbackChannel>, std::unique_ptr<LoopbackChannel>> make_pair() {
    auto a = std::make_shared<Pipe>();
    auto b = std::make_shared<Pipe>();
    auto left = std::unique_ptr<LoopbackChannel>(new LoopbackChannel(a, b));
    auto right = std::unique_ptr<LoopbackChannel>(new LoopbackChannel(b, a));
    return {std::move(left), std::move(right)};
  }

  ~LoopbackChannel() override {
    std::lock_guard<std::mutex> lk(out_->mu);
    out_->closed = true;
    out_->cv.notify_all();
  }

  void send_bytes(const std::uint8_t* data, std::size_t len) override {
    std::lock_guard<std::mutex> lk(out_->mu);
    if (out_->closed) throw ProtocolError("loopback pipe closed");
    out_->bytes.insert(out_->bytes.end(), data, data + len);
    out_->cv.notify_all();
  }

  std::size_t recv_some(std::uint8_t* data, std::size_t len) override {
    std::unique_lock<std::mutex> lk(in_->mu);
    in_->cv.wait(lk, [&] { return !in_->bytes.empty() || in_->closed; });
    if (in_->bytes.empty()) return 0;
    std::size_t n = std::min(len, in_->bytes.size());
    for (std::size_t i = 0; i < n; ++i) {
      data[i] = in_->bytes.front();
      in_->bytes.pop_front();
    }
    return n;
  }

 private:
  LoopbackChannel(std::shared_ptr<Pipe> out, std::shared_ptr<Pipe> in)
      : out_(std::move(out)), in_(std::move(in)) {}

  std::shared_ptr<Pipe> out_;
  std::shared_ptr<Pipe> in_;
};

class TcpChannel;

namespace detail {
inline std::string errno_text() { return std::strerror(errno); }
}  // namespace detail

/// Bound listening socket. Binding separately from accepting lets callers use
/// port 0 and publish the kernel-assigned port before blocking in accept.
class TcpListener {
 public:
  static TcpListener bind(std::uint16_t port) {
    int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (lfd < 0) throw ProtocolError("socket: " + detail::errno_text());
    int one = 1;
    ::setsockopt(lfd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
      std::string err = detail::errno_text();
      ::close(lfd);
      throw ProtocolError("bind: " + err);
    }
    if (::listen(lfd, 1) < 0) {
      std::string err = detail::errno_text();
      ::close(lfd);
      throw ProtocolError("listen: " + err);
    }
    socklen_t alen = sizeof(addr);
    ::getsockname(lfd, reinterpret_cast<sockaddr*>(&addr), &alen);
    return TcpListener(lfd, ntohs(addr.sin_port));
  }

  TcpListener(TcpListener&& o) noexcept : fd_(o.fd_), port_(o.port_) { o.fd_ = -1; }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::uint16_t port() const { return port_; }

  std::unique_ptr<TcpChannel> accept();

 private:
  TcpListener(int fd, std::uint16_t port) : fd_(fd), port_(port) {}

  int fd_;
  std::uint16_t port_;
};

/// Blocking TCP transport. The connecting side retries until the listener is
/// up or the timeout elapses, so either process may be launched first.
class TcpChannel : public Channel {
 public:
  static std::unique_ptr<TcpChannel> listen_accept(std::uint16_t port) {
    return TcpListener::bind(port).accept();
  }

  static std::unique_ptr<TcpChannel> connect(const std::string& host, std::uint16_t port,
                                             int timeout_ms = 10000) {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      int fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw ProtocolError("socket: " + detail::errno_text());
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_port = htons(port);
      if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        hostent* he = ::gethostbyname(host.c_str());
        if (he == nullptr || he->h_addrtype != AF_INET) {
          ::close(fd);
          throw ProtocolError("cannot resolve host " + host);
        }
        std::memcpy(&addr.sin_addr, he->h_addr_list[0], sizeof(addr.sin_addr));
      }
      if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) return finish(fd);
      ::close(fd);
      if (std::chrono::steady_clock::now() >= deadline)
        throw ProtocolError("connect to " + host + ": timed out");
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }

  ~TcpChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }

  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  void send_bytes(const std::uint8_t* data, std::size_t len) override {
    std::size_t sent = 0;
    while (sent < len) {
      ssize_t r = ::send(fd_, data + sent, len - sent, MSG_NOSIGNAL);
      if (r < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError("send: " + detail::errno_text());
      }
      sent += static_cast<std::size_t>(r);
    }
  }

  std::size_t recv_some(std::uint8_t* data, std::size_t len) override {
    for (;;) {
      ssize_t r = ::recv(fd_, data, len, 0);
      if (r >= 0) return static_cast<std::size_t>(r);
      if (errno == EINTR) continue;
      throw ProtocolError("recv: " + detail::errno_text());
    }
  }

 private:
  friend class TcpListener;

  explicit TcpChannel(int fd) : fd_(fd) {}

  static std::unique_ptr<TcpChannel> finish(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::unique_ptr<TcpChannel>(new TcpChannel(fd));
  }

  int fd_ = -1;
};

inline std::unique_ptr<TcpChannel> TcpListener::accept() {
  int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) throw ProtocolError("accept: " + detail::errno_text());
  return TcpChannel::finish(fd);
}

}  // namespace circa
