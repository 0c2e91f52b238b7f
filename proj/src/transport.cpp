#include "splitleak/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>

#include "splitleak/wire.hpp"

namespace splitleak {
namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

}  // namespace

void InProcessTransport::send(std::span<const std::uint8_t> message) {
  if (!peer_) throw ConnectionClosed("in-process peer is gone");
  if (auto reply = peer_(message)) inbox_.push_back(std::move(*reply));
}

Bytes InProcessTransport::receive() {
  if (inbox_.empty()) throw ConnectionClosed("in-process peer sent no reply");
  Bytes out = std::move(inbox_.front());
  inbox_.pop_front();
  return out;
}

void SocketTransport::send(std::span<const std::uint8_t> message) {
  if (fd_ < 0) throw ConnectionClosed("socket is closed");
  std::size_t sent = 0;
  while (sent < message.size()) {
    const ssize_t n = ::send(fd_, message.data() + sent, message.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EPIPE || errno == ECONNRESET) throw ConnectionClosed(errno_text("send"));
      throw IoError(errno_text("send"));
    }
    sent += static_cast<std::size_t>(n);
  }
}

void SocketTransport::read_exact(std::uint8_t* out, std::size_t count) {
  std::size_t got = 0;
  while (got < count) {
    const ssize_t n = ::recv(fd_, out + got, count - got, 0);
    if (n == 0) throw ConnectionClosed("peer closed the connection");
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == ECONNRESET) throw ConnectionClosed(errno_text("recv"));
      throw IoError(errno_text("recv"));
    }
    got += static_cast<std::size_t>(n);
  }
}

Bytes SocketTransport::receive() {
  if (fd_ < 0) throw ConnectionClosed("socket is closed");
  Bytes buf(wire::kHeaderSize);
  read_exact(buf.data(), buf.size());
  const std::uint8_t type = buf[5];
  if (type < 1 || type > 3) {
    // Let the decoder produce the precise error for magic/version/type.
    wire::decode_message(buf);
  }
  const std::size_t fixed = wire::fixed_body_size(static_cast<wire::MessageType>(type));
  buf.resize(wire::kHeaderSize + fixed);
  read_exact(buf.data() + wire::kHeaderSize, fixed);
  const std::size_t total = wire::message_length(buf);
  const std::size_t have = buf.size();
  buf.resize(total);
  read_exact(buf.data() + have, total - have);
  return buf;
}

void SocketTransport::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

LocalListener::LocalListener() {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw IoError(errno_text("socket"));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(fd_, 1) < 0) {
    const auto msg = errno_text("bind/listen");
    ::close(fd_);
    throw IoError(msg);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

LocalListener::~LocalListener() {
  if (fd_ >= 0) ::close(fd_);
}

SocketTransport LocalListener::accept() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return SocketTransport(fd);
    }
    if (errno != EINTR) throw IoError(errno_text("accept"));
  }
}

SocketTransport connect_local(std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw IoError(errno_text("socket"));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const auto msg = errno_text("connect");
    ::close(fd);
    throw IoError(msg);
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return SocketTransport(fd);
}

}  // namespace splitleak
