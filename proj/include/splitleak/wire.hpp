#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "splitleak/bytes.hpp"
#include "splitleak/matrix.hpp"

namespace splitleak::wire {

// Layout (little-endian):
//   "SPLT" | version u8 = 1 | type u8
//   type 1 ForwardBatch:  batch_id u64 | n u32 | d u32 | ids u64[n] | z f32[n*d]
//   type 2 BackwardBatch: batch_id u64 | n u32 | d u32 | grads f32[n*d]
//   type 3 EndEpoch:      epoch u32
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 6;

enum class MessageType : std::uint8_t { kForwardBatch = 1, kBackwardBatch = 2, kEndEpoch = 3 };

/// Row-major f32 matrix as carried on the wire.
struct F32Matrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;

  static F32Matrix quantize(const Matrix& m);
  Matrix to_f64() const;
};

struct ForwardBatch {
  std::uint64_t batch_id = 0;
  std::vector<std::uint64_t> ids;
  F32Matrix z;
};

struct BackwardBatch {
  std::uint64_t batch_id = 0;
  F32Matrix grads;
};

struct EndEpoch {
  std::uint32_t epoch = 0;
};

using WireMessage = std::variant<ForwardBatch, BackwardBatch, EndEpoch>;

/// Bit-level equality (floats compared by representation).
bool bit_equal(const WireMessage& a, const WireMessage& b);

Bytes encode_message(const WireMessage& message);

/// Throws DecodeError: kBadMagic, kUnsupportedVersion, kUnknownType,
/// kTruncated, or kMalformed (inconsistent shape / trailing bytes).
WireMessage decode_message(std::span<const std::uint8_t> bytes);

/// Bytes of fixed fields following the 6-byte header for a given type.
std::size_t fixed_body_size(MessageType type);

/// Total encoded length given at least kHeaderSize + fixed_body_size bytes of
/// a message. Validates the header on the way.
std::size_t message_length(std::span<const std::uint8_t> prefix);

}  // namespace splitleak::wire
