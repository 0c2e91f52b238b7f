#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitleak/bytes.hpp"
#include "splitleak/matrix.hpp"

namespace splitleak {

/// One (embedding, received gradient) pair seen by the input owner.
struct TranscriptRecord {
  std::uint64_t input_id = 0;
  std::uint32_t epoch = 0;
  std::vector<double> z;
  std::vector<double> grad_z;

  friend bool operator==(const TranscriptRecord&, const TranscriptRecord&) = default;
};

struct TranscriptMeta {
  std::uint32_t embedding_dim = 0;
  std::uint32_t num_epochs = 0;
  std::uint32_t batch_size = 0;
  double noise_sigma = 0.0;  // 0 when no defense was applied

  friend bool operator==(const TranscriptMeta&, const TranscriptMeta&) = default;
};

/// Records of one epoch packed as matrices, rows in transcript order.
struct GradientSet {
  std::vector<std::uint64_t> ids;
  Matrix z;      // [n x D]
  Matrix grads;  // [n x D]

  std::size_t size() const noexcept { return ids.size(); }
  GradientSet subset(std::span<const std::size_t> rows) const;
};

struct Transcript {
  TranscriptMeta meta;
  std::vector<TranscriptRecord> records;

  /// Throws InvalidArgument unless every record has D-length vectors and ids
  /// are unique within each epoch.
  void validate() const;

  /// Highest epoch index present. Throws on an empty transcript.
  std::uint32_t last_epoch() const;
  GradientSet epoch_slice(std::uint32_t epoch) const;

  friend bool operator==(const Transcript&, const Transcript&) = default;
};

/// "SPLT" "TR" | version u8 | D u32 | epochs u32 | batch u32 | sigma f64 |
/// count u64 | records (id u64, epoch u32, z f32[D], grad f32[D]).
Bytes encode_transcript(const Transcript& t);
Transcript decode_transcript(std::span<const std::uint8_t> bytes);
void save_transcript(const Transcript& t, const std::string& path);
Transcript load_transcript(const std::string& path);

}  // namespace splitleak
