#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "splitleak/data.hpp"
#include "splitleak/defense.hpp"
#include "splitleak/nn.hpp"
#include "splitleak/transcript.hpp"
#include "splitleak/transport.hpp"

namespace splitleak::protocol {

struct OptimizerConfig {
  enum class Kind { kAdam, kSgd };
  Kind kind = Kind::kAdam;
  double lr = 0.001;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;  // input owner's shuffle stream
};

/// Holds x and f. Drives the exchange: per epoch it shuffles, sends one
/// ForwardBatch per batch, waits for the matching BackwardBatch, records every
/// (id, z, grad) pair, and updates f. Never sees labels or g.
class InputOwner {
 public:
  InputOwner(nn::MlpModel f, Matrix inputs, std::vector<std::uint64_t> ids, TrainConfig config);

  /// Runs all epochs over `transport`. Throws ProtocolAbort if the peer
  /// vanishes or answers out of sequence.
  Transcript run(Transport& transport);

  const nn::MlpModel& model() const noexcept { return f_; }

 private:
  void step(const Matrix& x, const Matrix& grads);

  nn::MlpModel f_;
  Matrix inputs_;
  std::vector<std::uint64_t> ids_;
  TrainConfig config_;
  nn::AdamState adam_;
};

/// Holds labels and g. Answers each ForwardBatch with the per-example
/// gradients of its softmax cross-entropy loss with respect to z, perturbed by
/// the defense if configured, and updates g with the clean batch gradient.
class LabelOwner {
 public:
  LabelOwner(nn::MlpModel g, std::span<const std::uint64_t> ids, std::span<const std::size_t> labels,
             OptimizerConfig optimizer, std::optional<defense::NoiseConfig> noise = std::nullopt);

  /// Processes one encoded message; returns the encoded reply, if any.
  std::optional<Bytes> handle(std::span<const std::uint8_t> message);

  /// Serves until the peer closes the connection.
  void serve(Transport& transport);

  const nn::MlpModel& model() const noexcept { return g_; }
  std::uint32_t epochs_completed() const noexcept { return epochs_completed_; }

 private:
  nn::MlpModel g_;
  std::unordered_map<std::uint64_t, std::size_t> label_of_;
  OptimizerConfig optimizer_;
  nn::AdamState adam_;
  std::optional<defense::NoiseConfig> noise_;
  Rng noise_rng_;
  std::uint32_t epochs_completed_ = 0;
};

struct SplitResult {
  nn::MlpModel f;
  nn::MlpModel g;
  Transcript transcript;
};

enum class TransportKind { kInProcess, kSocket };

/// Full two-party training run. The socket transport runs the label owner on
/// a second thread behind a 127.0.0.1 listener.
SplitResult split_train(const nn::MlpModel& f, const nn::MlpModel& g, const data::Dataset& train,
                        const TrainConfig& config,
                        std::optional<defense::NoiseConfig> noise = std::nullopt,
                        TransportKind transport = TransportKind::kInProcess);

}  // namespace splitleak::protocol
