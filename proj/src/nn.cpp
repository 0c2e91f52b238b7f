#include "splitleak/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "splitleak/error.hpp"
#include "splitleak/numerics.hpp"

namespace splitleak::nn {
namespace {

using ForwardCache = BackwardTape::ForwardCache;

void check_layer(const DenseLayer& layer, std::size_t index) {
  if (layer.weight.rows() == 0 || layer.weight.cols() == 0) {
    throw InvalidArgument("MlpModel: layer " + std::to_string(index) + " has an empty weight");
  }
  if (layer.bias.size() != layer.weight.rows()) {
    throw InvalidArgument("MlpModel: layer " + std::to_string(index) +
                          " bias length does not match weight rows");
  }
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

ConstView view(const Matrix& m) { return {m.values().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }
View view(Matrix& m) { return {m.values().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }

Matrix linear(const Matrix& in, const DenseLayer& layer) {
  Matrix out(in.rows(), layer.weight.rows());
  auto y = view(out);
  y.noalias() = view(in) * view(layer.weight).transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(layer.bias.data(), Eigen::Index(layer.bias.size()));
  return out;
}

// out = in * W^T without bias (tangent propagation).
Matrix linear_no_bias(const Matrix& in, const Matrix& weight) {
  Matrix out(in.rows(), weight.rows());
  view(out).noalias() = view(in) * view(weight).transpose();
  return out;
}

void apply_relu_mask(Matrix& m, const Matrix& pre) {
  auto v = m.values();
  const auto p = pre.values();
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!(p[k] > 0.0)) v[k] = 0.0;
  }
}

ForwardCache run_forward(const MlpModel& model, const Matrix& inputs) {
  if (model.num_layers() == 0) throw InvalidArgument("forward: model has no layers");
  if (inputs.cols() != model.input_dim()) {
    throw InvalidArgument("forward: input dim " + std::to_string(inputs.cols()) +
                          " does not match model input dim " +
                          std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  const auto& layers = model.layers();
  cache.inputs.reserve(layers.size());
  cache.pre.reserve(layers.size());
  cache.inputs.push_back(inputs);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    cache.pre.push_back(linear(cache.inputs.back(), layers[l]));
    if (l + 1 < layers.size()) {
      Matrix act = cache.pre.back();
      for (double& v : act.values()) v = std::max(v, 0.0);
      cache.inputs.push_back(std::move(act));
    }
  }
  return cache;
}

// Backpropagates `delta` (cotangent at the logits). Accumulates summed
// parameter gradients into `grads` when given, stores the per-layer signal at
// each pre-activation into `deltas` when given, returns the input gradient.
Matrix run_backward(const MlpModel& model, const ForwardCache& cache, Matrix delta,
                    ParamGrads* grads, std::vector<Matrix>* deltas) {
  const auto& layers = model.layers();
  if (deltas) deltas->assign(layers.size(), Matrix());
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix& in = cache.inputs[l];
    const Matrix& weight = layers[l].weight;
    if (grads) {
      auto& g = (*grads)[l];
      view(g.weight).noalias() += view(delta).transpose() * view(in);
      Eigen::Map<Eigen::RowVectorXd>(g.bias.data(), Eigen::Index(g.bias.size())) +=
          view(delta).colwise().sum();
    }
    Matrix prev(delta.rows(), weight.cols());
    view(prev).noalias() = view(delta) * view(weight);
    if (l > 0) apply_relu_mask(prev, cache.pre[l - 1]);
    if (deltas) (*deltas)[l] = std::move(delta);
    delta = std::move(prev);
  }
  return delta;
}

void check_targets(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                   const char* where) {
  if (targets.rows() != inputs.rows() || targets.cols() != model.output_dim()) {
    throw InvalidArgument(std::string(where) + ": targets shape " +
                          std::to_string(targets.rows()) + "x" + std::to_string(targets.cols()) +
                          " does not match batch " + std::to_string(inputs.rows()) + "x" +
                          std::to_string(model.output_dim()));
  }
}

void scale(ParamGrads& grads, double factor) {
  for (auto& g : grads) {
    for (double& v : g.weight.values()) v *= factor;
    for (double& v : g.bias) v *= factor;
  }
}

void check_grad_shapes(const MlpModel& model, const ParamGrads& grads, const char* where) {
  const auto& layers = model.layers();
  bool ok = grads.size() == layers.size();
  for (std::size_t l = 0; ok && l < layers.size(); ++l) {
    ok = grads[l].weight.same_shape(layers[l].weight) &&
         grads[l].bias.size() == layers[l].bias.size();
  }
  if (!ok) throw InvalidArgument(std::string(where) + ": gradient shapes do not mirror the model");
}

}  // namespace

MlpModel::MlpModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    check_layer(layers_[l], l);
    if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows()) {
      throw InvalidArgument("MlpModel: layer " + std::to_string(l) + " input dim " +
                            std::to_string(layers_[l].weight.cols()) +
                            " does not chain with previous output dim " +
                            std::to_string(layers_[l - 1].weight.rows()));
    }
    const bool finite = layers_[l].weight.all_finite() &&
                        std::all_of(layers_[l].bias.begin(), layers_[l].bias.end(),
                                    [](double v) { return std::isfinite(v); });
    if (!finite) throw InvalidArgument("MlpModel: non-finite parameter");
  }
}

MlpModel MlpModel::glorot(std::span<const std::size_t> dims, Rng& rng) {
  if (dims.size() < 2) throw InvalidArgument("MlpModel::glorot: need at least two dims");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    DenseLayer layer{Matrix(dims[l + 1], dims[l]), std::vector<double>(dims[l + 1], 0.0)};
    for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
    layers.push_back(std::move(layer));
  }
  return MlpModel(std::move(layers));
}

MlpModel MlpModel::zeros(std::span<const std::size_t> dims) {
  if (dims.size() < 2) throw InvalidArgument("MlpModel::zeros: need at least two dims");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    layers.push_back({Matrix(dims[l + 1], dims[l]), std::vector<double>(dims[l + 1], 0.0)});
  }
  return MlpModel(std::move(layers));
}

std::size_t MlpModel::input_dim() const noexcept {
  return layers_.empty() ? 0 : layers_.front().weight.cols();
}

std::size_t MlpModel::output_dim() const noexcept {
  return layers_.empty() ? 0 : layers_.back().weight.rows();
}

std::size_t MlpModel::num_params() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<std::size_t> MlpModel::dims() const {
  std::vector<std::size_t> out;
  if (layers_.empty()) return out;
  out.push_back(input_dim());
  for (const auto& l : layers_) out.push_back(l.weight.rows());
  return out;
}

ParamGrads MlpModel::zero_grads() const {
  ParamGrads grads;
  grads.reserve(layers_.size());
  for (const auto& l : layers_) {
    grads.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size())});
  }
  return grads;
}

Matrix forward(const MlpModel& model, const Matrix& inputs) {
  return std::move(run_forward(model, inputs).pre.back());
}

BackwardTape::BackwardTape(const MlpModel& model, const Matrix& inputs, const Matrix& target_probs)
    : model_(&model), cache_(run_forward(model, inputs)) {
  check_targets(model, inputs, target_probs, "backward");
  const Matrix& logits = cache_.pre.back();
  const std::size_t n = inputs.rows(), k = model.output_dim();

  probs_ = Matrix(n, k);
  mass_.assign(n, 0.0);
  Matrix delta(n, k);
  std::vector<double> log_p(k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    detail::log_softmax_into(logits.row(i), log_p);
    const auto y = target_probs.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      loss -= y[c] * log_p[c];
      mass_[i] += y[c];
      probs_(i, c) = std::exp(log_p[c]);
    }
    // d/dlogits of -sum_c y_c log p_c is p * sum(y) - y.
    for (std::size_t c = 0; c < k; ++c) delta(i, c) = probs_(i, c) * mass_[i] - y[c];
  }

  result_.grads.param_grads = model.zero_grads();
  result_.grads.input_grads =
      run_backward(model, cache_, std::move(delta), &result_.grads.param_grads, &deltas_);
  if (n > 0) {
    scale(result_.grads.param_grads, 1.0 / static_cast<double>(n));
    result_.loss = loss / static_cast<double>(n);
  }
}

SecondOrderGrads BackwardTape::grad_of_input_grad(const Matrix& cotangent) const {
  const auto& layers = model_->layers();
  if (!cotangent.same_shape(cache_.inputs.front())) {
    throw InvalidArgument("grad_of_input_grad: cotangent shape does not match input gradients");
  }
  const std::size_t n = probs_.rows(), k = probs_.cols();

  // The input gradient is G_i = J_i^T r_i with J_i the logit Jacobian and
  // r_i = p_i * sum(y_i) - y_i. Hence <c_i, G_i> = <u_i, r_i> where u_i = J_i c_i
  // is a forward-mode tangent. Differentiate that through (a) the Jacobian
  // factors with r fixed and (b) r through the softmax with u fixed.
  SecondOrderGrads out;
  out.param_grads = model_->zero_grads();

  // (a) Tangent pass. tangent_in is the masked tangent entering layer l; the
  // weight gradient of <r, u> is deltas[l]^T tangent_in.
  Matrix tangent_in = cotangent;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    view(out.param_grads[l].weight).noalias() += view(deltas_[l]).transpose() * view(tangent_in);
    Matrix next = linear_no_bias(tangent_in, layers[l].weight);
    if (l + 1 < layers.size()) apply_relu_mask(next, cache_.pre[l]);
    tangent_in = std::move(next);
  }
  const Matrix& tangent_out = tangent_in;  // u, [n x k]

  // d<u, r>/dy_c = <u, p> - u_c; d<u, r>/dlogits = sum(y) * (diag(p) - p p^T) u.
  out.target_grads = Matrix(n, k);
  Matrix logit_cotangent(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = tangent_out.row(i);
    const auto p = probs_.row(i);
    double pu = 0.0;
    for (std::size_t c = 0; c < k; ++c) pu += p[c] * u[c];
    for (std::size_t c = 0; c < k; ++c) {
      out.target_grads(i, c) = pu - u[c];
      logit_cotangent(i, c) = mass_[i] * p[c] * (u[c] - pu);
    }
  }

  // (b) Ordinary backward of the softmax path.
  run_backward(*model_, cache_, std::move(logit_cotangent), &out.param_grads, nullptr);
  return out;
}

BackwardResult backward(const MlpModel& model, const Matrix& inputs, const Matrix& target_probs) {
  return BackwardTape(model, inputs, target_probs).result();
}

GradientBundle backprop_cotangent(const MlpModel& model, const Matrix& inputs,
                                  const Matrix& output_cotangent) {
  const ForwardCache cache = run_forward(model, inputs);
  check_targets(model, inputs, output_cotangent, "backprop_cotangent");
  GradientBundle out;
  out.param_grads = model.zero_grads();
  out.input_grads = run_backward(model, cache, output_cotangent, &out.param_grads, nullptr);
  return out;
}

SecondOrderGrads grad_of_input_grad(const MlpModel& model, const Matrix& inputs,
                                    const Matrix& target_probs, const Matrix& cotangent) {
  const BackwardTape tape(model, inputs, target_probs);
  return tape.grad_of_input_grad(cotangent);
}

void AdamState::update(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != first_.size() || grads.size() != first_.size()) {
    throw InvalidArgument("AdamState::update: size mismatch (state " +
                          std::to_string(first_.size()) + ", params " +
                          std::to_string(params.size()) + ", grads " +
                          std::to_string(grads.size()) + ")");
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    first_[k] = b1 * first_[k] + (1.0 - b1) * grads[k];
    second_[k] = b2 * second_[k] + (1.0 - b2) * grads[k] * grads[k];
    const double m_hat = first_[k] / correction1;
    const double v_hat = second_[k] / correction2;
    params[k] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

std::vector<double> flatten(const ParamGrads& params) {
  std::vector<double> flat;
  for (const auto& l : params) {
    flat.insert(flat.end(), l.weight.values().begin(), l.weight.values().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void unflatten(std::span<const double> flat, ParamGrads& params) {
  std::size_t pos = 0;
  for (auto& l : params) {
    const std::size_t need = l.weight.size() + l.bias.size();
    if (flat.size() - pos < need) throw InvalidArgument("unflatten: too few values");
    std::copy_n(flat.begin() + pos, l.weight.size(), l.weight.values().begin());
    pos += l.weight.size();
    std::copy_n(flat.begin() + pos, l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
  if (pos != flat.size()) throw InvalidArgument("unflatten: too many values");
}

void adam_step(MlpModel& model, const ParamGrads& grads, AdamState& state, double lr) {
  check_grad_shapes(model, grads, "adam_step");
  std::vector<double> params = flatten(model.layers());
  const std::vector<double> flat_grads = flatten(grads);
  state.update(params, flat_grads, lr);
  unflatten(params, model.layers());
}

void sgd_step(MlpModel& model, const ParamGrads& grads, double lr) {
  check_grad_shapes(model, grads, "sgd_step");
  auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto w = layers[l].weight.values();
    const auto gw = grads[l].weight.values();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
    for (std::size_t k = 0; k < layers[l].bias.size(); ++k) {
      layers[l].bias[k] -= lr * grads[l].bias[k];
    }
  }
}

namespace {
constexpr std::uint8_t kModelVersion = 1;
}

Bytes encode_model(const MlpModel& model) {
  ByteWriter w;
  w.put_tag("MLPC");
  w.put_u8(kModelVersion);
  w.put_u32(static_cast<std::uint32_t>(model.num_layers()));
  for (const auto& l : model.layers()) {
    w.put_u32(static_cast<std::uint32_t>(l.weight.cols()));
    w.put_u32(static_cast<std::uint32_t>(l.weight.rows()));
  }
  for (const auto& l : model.layers()) {
    for (double v : l.weight.values()) w.put_f64(v);
    for (double v : l.bias) w.put_f64(v);
  }
  return std::move(w).take();
}

MlpModel decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "model checkpoint");
  if (!r.tag_matches("MLPC")) throw DecodeError(DecodeErrorKind::kBadMagic, "model checkpoint: bad magic");
  const auto version = r.u8();
  if (version != kModelVersion) {
    throw DecodeError(DecodeErrorKind::kUnsupportedVersion,
                      "model checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  r.require(std::size_t{count} * 8);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(count);
  std::uint64_t total = 0;
  for (auto& [in, out] : shapes) {
    in = r.u32();
    out = r.u32();
    total += std::uint64_t{in} * out + out;
  }
  if (total > r.remaining() / 8) {
    throw DecodeError(DecodeErrorKind::kTruncated,
                      "model checkpoint: truncated, expected " + std::to_string(total * 8) +
                          " payload bytes, have " + std::to_string(r.remaining()));
  }
  std::vector<DenseLayer> layers;
  for (const auto& [in, out] : shapes) {
    DenseLayer layer{Matrix(out, in), std::vector<double>(out)};
    for (double& v : layer.weight.values()) v = r.f64();
    for (double& v : layer.bias) v = r.f64();
    layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) {
    throw DecodeError(DecodeErrorKind::kMalformed, "model checkpoint: trailing bytes");
  }
  try {
    return MlpModel(std::move(layers));
  } catch (const InvalidArgument& e) {
    throw DecodeError(DecodeErrorKind::kMalformed, std::string("model checkpoint: ") + e.what());
  }
}

void save_model(const MlpModel& model, const std::string& path) {
  write_file(path, encode_model(model));
}

MlpModel load_model(const std::string& path) { return decode_model(read_file(path)); }

}  // namespace splitleak::nn
