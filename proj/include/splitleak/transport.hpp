#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>

#include "splitleak/bytes.hpp"
#include "splitleak/error.hpp"

namespace splitleak {

/// The peer closed the channel; no further messages will arrive.
class ConnectionClosed : public IoError {
 public:
  using IoError::IoError;
};

/// Message-oriented duplex channel carrying encoded wire messages.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(std::span<const std::uint8_t> message) = 0;
  /// Blocks for the next complete message. Throws ConnectionClosed.
  virtual Bytes receive() = 0;
};

/// Loopback channel: every sent message is handed synchronously to `peer`,
/// whose reply (if any) is queued for receive(). The bytes still pass through
/// the codec, so numerics match the socket path exactly.
class InProcessTransport final : public Transport {
 public:
  using Handler = std::function<std::optional<Bytes>(std::span<const std::uint8_t>)>;
  explicit InProcessTransport(Handler peer) : peer_(std::move(peer)) {}

  void send(std::span<const std::uint8_t> message) override;
  Bytes receive() override;

 private:
  Handler peer_;
  std::deque<Bytes> inbox_;
};

/// Framed wire messages over a connected stream socket. Owns the descriptor.
class SocketTransport final : public Transport {
 public:
  explicit SocketTransport(int fd) : fd_(fd) {}
  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;
  SocketTransport(SocketTransport&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
  ~SocketTransport() override { close(); }

  void send(std::span<const std::uint8_t> message) override;
  Bytes receive() override;
  void close();

 private:
  void read_exact(std::uint8_t* out, std::size_t count);
  int fd_;
};

/// TCP listener bound to 127.0.0.1 on an ephemeral port.
class LocalListener {
 public:
  LocalListener();
  LocalListener(const LocalListener&) = delete;
  LocalListener& operator=(const LocalListener&) = delete;
  ~LocalListener();

  std::uint16_t port() const noexcept { return port_; }
  SocketTransport accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

SocketTransport connect_local(std::uint16_t port);

}  // namespace splitleak
