#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitleak/bytes.hpp"
#include "splitleak/matrix.hpp"
#include "splitleak/rng.hpp"

namespace splitleak::nn {

/// One fully-connected layer: out = weight * in + bias, weight is [out x in].
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Gradients share the layer shape.
using ParamGrads = std::vector<DenseLayer>;

/// ReLU multilayer perceptron producing raw logits (no activation on the
/// last layer).
class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(std::vector<DenseLayer> layers);

  /// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero biases.
  /// `dims` lists layer widths from input to output (at least two entries).
  static MlpModel glorot(std::span<const std::size_t> dims, Rng& rng);
  static MlpModel zeros(std::span<const std::size_t> dims);

  std::size_t input_dim() const noexcept;
  std::size_t output_dim() const noexcept;
  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t num_params() const noexcept;
  std::vector<std::size_t> dims() const;

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  ParamGrads zero_grads() const;

  friend bool operator==(const MlpModel&, const MlpModel&) = default;

 private:
  std::vector<DenseLayer> layers_;
};

struct GradientBundle {
  ParamGrads param_grads;
  Matrix input_grads;
};

struct BackwardResult {
  double loss = 0.0;
  GradientBundle grads;
};

/// Second-order output: gradients of <cotangent, input_grads> with respect to
/// the parameters and to the target probabilities.
struct SecondOrderGrads {
  ParamGrads param_grads;
  Matrix target_grads;
};

/// One forward and backward pass of softmax cross-entropy, kept so that the
/// second-order product can reuse it. The model must outlive the tape.
class BackwardTape {
 public:
  struct ForwardCache {
    std::vector<Matrix> inputs;  // inputs[l] feeds layer l (post-activation)
    std::vector<Matrix> pre;     // pre[l] is layer l's pre-activation
  };

  BackwardTape(const MlpModel& model, const Matrix& inputs, const Matrix& target_probs);

  /// What backward() returns for the same arguments.
  const BackwardResult& result() const noexcept { return result_; }
  const Matrix& logits() const noexcept { return cache_.pre.back(); }
  const Matrix& probs() const noexcept { return probs_; }

  /// grad_of_input_grad() for this tape's batch.
  SecondOrderGrads grad_of_input_grad(const Matrix& cotangent) const;

 private:
  const MlpModel* model_;
  ForwardCache cache_;
  Matrix probs_;
  std::vector<double> mass_;
  std::vector<Matrix> deltas_;
  BackwardResult result_;
};

Matrix forward(const MlpModel& model, const Matrix& inputs);

/// Softmax cross-entropy against soft targets. Returns the batch-mean loss,
/// batch-mean parameter gradients, and per-example input gradients: row i of
/// input_grads is the gradient of example i's own loss with respect to its
/// input row, not divided by the batch size.
BackwardResult backward(const MlpModel& model, const Matrix& inputs, const Matrix& target_probs);

/// Pulls an arbitrary output cotangent back through the network: gradients of
/// sum_i <cotangent_i, model(inputs_i)>. Parameter gradients are summed, not
/// averaged.
GradientBundle backprop_cotangent(const MlpModel& model, const Matrix& inputs,
                                  const Matrix& output_cotangent);

/// Vector-Jacobian product through the backward pass. With G the per-example
/// input gradients that backward() would return for (inputs, target_probs),
/// returns the gradients of sum_i <cotangent_i, G_i> with respect to the
/// parameters and the target probabilities. The ReLU masks are treated as
/// locally constant.
SecondOrderGrads grad_of_input_grad(const MlpModel& model, const Matrix& inputs,
                                    const Matrix& target_probs, const Matrix& cotangent);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments for a flat parameter vector.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::size_t num_params, AdamConfig config = {})
      : config_(config), first_(num_params, 0.0), second_(num_params, 0.0) {}
  static AdamState for_model(const MlpModel& model, AdamConfig config = {}) {
    return AdamState(model.num_params(), config);
  }

  std::uint64_t step() const noexcept { return step_; }
  std::size_t size() const noexcept { return first_.size(); }
  const AdamConfig& config() const noexcept { return config_; }

  /// One bias-corrected Adam update of `params` in place.
  void update(std::span<double> params, std::span<const double> grads, double lr);

  friend bool operator==(const AdamState&, const AdamState&) = default;

 private:
  AdamConfig config_;
  std::vector<double> first_;
  std::vector<double> second_;
  std::uint64_t step_ = 0;
};

void adam_step(MlpModel& model, const ParamGrads& grads, AdamState& state, double lr);
void sgd_step(MlpModel& model, const ParamGrads& grads, double lr);

/// Flattened parameter view in layer order (weight then bias per layer).
std::vector<double> flatten(const ParamGrads& params);
void unflatten(std::span<const double> flat, ParamGrads& params);

/// Checkpoint container: "MLPC", version u8, layer count u32, (in u32, out u32)
/// per layer, then f64 weights (row-major) and biases per layer.
Bytes encode_model(const MlpModel& model);
MlpModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

}  // namespace splitleak::nn
