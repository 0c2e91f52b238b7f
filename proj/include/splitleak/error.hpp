#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace splitleak {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DecodeErrorKind {
  kBadMagic,
  kUnsupportedVersion,
  kUnknownType,
  kTruncated,
  kMalformed,
};

/// Raised by every binary decoder in the library (wire messages, transcript,
/// checkpoint and dataset containers).
class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  DecodeErrorKind kind() const noexcept { return kind_; }

 private:
  DecodeErrorKind kind_;
};

enum class IdxErrorKind {
  kBadMagic,
  kTruncated,
  kDimensionOverflow,
};

class IdxParseError : public std::runtime_error {
 public:
  IdxParseError(IdxErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  IdxErrorKind kind() const noexcept { return kind_; }

 private:
  IdxErrorKind kind_;
};

/// The peer disappeared or sent something out of sequence. Carries the id of
/// the last batch whose backward message was received, if any.
class ProtocolAbort : public std::runtime_error {
 public:
  ProtocolAbort(const std::string& what, std::optional<std::uint64_t> last_completed_batch)
      : std::runtime_error(what), last_completed_batch_(last_completed_batch) {}
  std::optional<std::uint64_t> last_completed_batch() const noexcept {
    return last_completed_batch_;
  }

 private:
  std::optional<std::uint64_t> last_completed_batch_;
};

}  // namespace splitleak
