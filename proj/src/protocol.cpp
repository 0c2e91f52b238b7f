#include "splitleak/protocol.hpp"

#include <algorithm>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "splitleak/error.hpp"
#include "splitleak/wire.hpp"

namespace splitleak::protocol {
namespace {

void apply_update(nn::MlpModel& model, const nn::ParamGrads& grads, nn::AdamState& adam,
                  const OptimizerConfig& opt) {
  if (opt.kind == OptimizerConfig::Kind::kAdam) {
    nn::adam_step(model, grads, adam, opt.lr);
  } else {
    nn::sgd_step(model, grads, opt.lr);
  }
}

}  // namespace

InputOwner::InputOwner(nn::MlpModel f, Matrix inputs, std::vector<std::uint64_t> ids,
                       TrainConfig config)
    : f_(std::move(f)),
      inputs_(std::move(inputs)),
      ids_(std::move(ids)),
      config_(config),
      adam_(nn::AdamState::for_model(f_)) {
  if (inputs_.rows() != ids_.size()) throw InvalidArgument("InputOwner: ids do not match inputs");
  if (inputs_.cols() != f_.input_dim()) {
    throw InvalidArgument("InputOwner: input dim does not match f");
  }
  if (config_.batch_size == 0) throw InvalidArgument("InputOwner: batch_size must be positive");
}

void InputOwner::step(const Matrix& x, const Matrix& grads) {
  // grads rows are per-example dL_i/dz_i; f follows the batch-mean loss.
  Matrix cotangent = grads;
  const double inv = 1.0 / static_cast<double>(grads.rows());
  for (double& v : cotangent.values()) v *= inv;
  const auto bundle = nn::backprop_cotangent(f_, x, cotangent);
  apply_update(f_, bundle.param_grads, adam_, config_.optimizer);
}

Transcript InputOwner::run(Transport& transport) {
  Transcript transcript;
  transcript.meta.embedding_dim = static_cast<std::uint32_t>(f_.output_dim());
  transcript.meta.num_epochs = static_cast<std::uint32_t>(config_.epochs);
  transcript.meta.batch_size = static_cast<std::uint32_t>(config_.batch_size);

  const std::size_t n = inputs_.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(config_.seed);
  std::uint64_t next_batch = 0;
  std::optional<std::uint64_t> last_done;

  auto exchange = [&](const Bytes& out, bool expect_reply) -> std::optional<wire::WireMessage> {
    try {
      transport.send(out);
      if (!expect_reply) return std::nullopt;
      return wire::decode_message(transport.receive());
    } catch (const IoError& e) {
      throw ProtocolAbort(std::string("label owner unreachable: ") + e.what(), last_done);
    } catch (const DecodeError& e) {
      throw ProtocolAbort(std::string("undecodable reply: ") + e.what(), last_done);
    }
  };

  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += config_.batch_size) {
      const std::size_t stop = std::min(n, start + config_.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const Matrix x = inputs_.gather_rows(rows);

      wire::ForwardBatch fwd;
      fwd.batch_id = next_batch;
      for (auto r : rows) fwd.ids.push_back(ids_[r]);
      fwd.z = wire::F32Matrix::quantize(nn::forward(f_, x));

      const auto reply = exchange(wire::encode_message(fwd), true);
      const auto* back = std::get_if<wire::BackwardBatch>(&*reply);
      if (!back || back->batch_id != fwd.batch_id || back->grads.rows != fwd.z.rows ||
          back->grads.cols != fwd.z.cols) {
        throw ProtocolAbort("reply does not match batch " + std::to_string(fwd.batch_id),
                            last_done);
      }
      const Matrix grads = back->grads.to_f64();
      const Matrix z = fwd.z.to_f64();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        TranscriptRecord rec;
        rec.input_id = fwd.ids[i];
        rec.epoch = static_cast<std::uint32_t>(epoch);
        rec.z.assign(z.row(i).begin(), z.row(i).end());
        rec.grad_z.assign(grads.row(i).begin(), grads.row(i).end());
        transcript.records.push_back(std::move(rec));
      }
      step(x, grads);
      last_done = next_batch++;
    }
    exchange(wire::encode_message(wire::EndEpoch{static_cast<std::uint32_t>(epoch)}), false);
  }
  return transcript;
}

LabelOwner::LabelOwner(nn::MlpModel g, std::span<const std::uint64_t> ids,
                       std::span<const std::size_t> labels, OptimizerConfig optimizer,
                       std::optional<defense::NoiseConfig> noise)
    : g_(std::move(g)),
      optimizer_(optimizer),
      adam_(nn::AdamState::for_model(g_)),
      noise_(noise),
      noise_rng_(noise ? noise->seed : 0) {
  if (ids.size() != labels.size()) throw InvalidArgument("LabelOwner: ids do not match labels");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (labels[i] >= g_.output_dim()) {
      throw InvalidArgument("LabelOwner: label " + std::to_string(labels[i]) +
                            " out of range for g with " + std::to_string(g_.output_dim()) +
                            " outputs");
    }
    label_of_[ids[i]] = labels[i];
  }
  if (noise_ && !(noise_->sigma >= 0.0)) throw InvalidArgument("LabelOwner: negative sigma");
}

std::optional<Bytes> LabelOwner::handle(std::span<const std::uint8_t> message) {
  const auto decoded = wire::decode_message(message);
  if (const auto* end = std::get_if<wire::EndEpoch>(&decoded)) {
    epochs_completed_ = end->epoch + 1;
    return std::nullopt;
  }
  const auto* fwd = std::get_if<wire::ForwardBatch>(&decoded);
  if (!fwd) throw InvalidArgument("LabelOwner: unexpected BackwardBatch");
  if (fwd->z.cols != g_.input_dim()) {
    throw InvalidArgument("LabelOwner: embedding dim " + std::to_string(fwd->z.cols) +
                          " does not match g input dim " + std::to_string(g_.input_dim()));
  }
  const Matrix z = fwd->z.to_f64();
  Matrix targets(z.rows(), g_.output_dim());
  for (std::size_t i = 0; i < fwd->ids.size(); ++i) {
    const auto it = label_of_.find(fwd->ids[i]);
    if (it == label_of_.end()) {
      throw InvalidArgument("LabelOwner: unknown input id " + std::to_string(fwd->ids[i]));
    }
    targets(i, it->second) = 1.0;
  }
  auto result = nn::backward(g_, z, targets);
  apply_update(g_, result.grads.param_grads, adam_, optimizer_);

  Matrix& grads = result.grads.input_grads;
  if (noise_) {
    for (std::size_t i = 0; i < grads.rows(); ++i) {
      const auto noisy = defense::perturb_gradient(grads.row(i), *noise_, noise_rng_);
      std::copy(noisy.begin(), noisy.end(), grads.row(i).begin());
    }
  }
  wire::BackwardBatch reply{fwd->batch_id, wire::F32Matrix::quantize(grads)};
  return wire::encode_message(reply);
}

void LabelOwner::serve(Transport& transport) {
  for (;;) {
    Bytes message;
    try {
      message = transport.receive();
    } catch (const ConnectionClosed&) {
      return;
    }
    if (auto reply = handle(message)) transport.send(*reply);
  }
}

SplitResult split_train(const nn::MlpModel& f, const nn::MlpModel& g, const data::Dataset& train,
                        const TrainConfig& config, std::optional<defense::NoiseConfig> noise,
                        TransportKind transport) {
  train.validate();
  if (f.output_dim() != g.input_dim()) {
    throw InvalidArgument("split_train: f output dim " + std::to_string(f.output_dim()) +
                          " does not match g input dim " + std::to_string(g.input_dim()));
  }
  InputOwner input_owner(f, train.inputs, train.ids, config);
  LabelOwner label_owner(g, train.ids, train.labels, config.optimizer, noise);

  Transcript transcript;
  if (transport == TransportKind::kInProcess) {
    InProcessTransport channel(
        [&label_owner](std::span<const std::uint8_t> m) { return label_owner.handle(m); });
    transcript = input_owner.run(channel);
  } else {
    LocalListener listener;
    std::exception_ptr server_error;
    std::thread server([&] {
      try {
        SocketTransport conn = listener.accept();
        label_owner.serve(conn);
      } catch (...) {
        server_error = std::current_exception();
      }
    });
    std::exception_ptr client_error;
    try {
      SocketTransport conn = connect_local(listener.port());
      transcript = input_owner.run(conn);
    } catch (...) {
      client_error = std::current_exception();
    }
    server.join();
    if (server_error) std::rethrow_exception(server_error);
    if (client_error) std::rethrow_exception(client_error);
  }
  transcript.meta.noise_sigma = noise ? noise->sigma : 0.0;
  return {input_owner.model(), label_owner.model(), std::move(transcript)};
}

}  // namespace splitleak::protocol
