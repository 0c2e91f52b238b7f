#include "splitleak/wire.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "splitleak/error.hpp"

namespace splitleak::wire {
namespace {

MessageType checked_header(ByteReader& r) {
  if (!r.tag_matches("SPLT")) throw DecodeError(DecodeErrorKind::kBadMagic, "wire: bad magic");
  const auto version = r.u8();
  if (version != kVersion) {
    throw DecodeError(DecodeErrorKind::kUnsupportedVersion,
                      "wire: unsupported version " + std::to_string(version));
  }
  const auto type = r.u8();
  if (type < 1 || type > 3) {
    throw DecodeError(DecodeErrorKind::kUnknownType,
                      "wire: unknown message type " + std::to_string(type));
  }
  return static_cast<MessageType>(type);
}

void put_shape(ByteWriter& w, const F32Matrix& m) {
  if (m.values.size() != std::size_t{m.rows} * m.cols) {
    throw InvalidArgument("wire: matrix payload does not match its shape");
  }
  w.put_u32(m.rows);
  w.put_u32(m.cols);
}

void put_values(ByteWriter& w, const F32Matrix& m) {
  for (float v : m.values) w.put_f32(v);
}

F32Matrix read_values(ByteReader& r, std::uint32_t rows, std::uint32_t cols) {
  F32Matrix m{rows, cols, {}};
  const std::uint64_t count = std::uint64_t{rows} * cols;
  r.require(static_cast<std::size_t>(count * 4));
  m.values.resize(count);
  for (float& v : m.values) v = r.f32();
  return m;
}

bool same_bits(const F32Matrix& a, const F32Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.values.size() == b.values.size() &&
         (a.values.empty() ||
          std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0);
}

}  // namespace

F32Matrix F32Matrix::quantize(const Matrix& m) {
  F32Matrix out{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {}};
  out.values.reserve(m.size());
  for (double v : m.values()) out.values.push_back(static_cast<float>(v));
  return out;
}

Matrix F32Matrix::to_f64() const {
  std::vector<double> data(values.begin(), values.end());
  return Matrix(rows, cols, std::move(data));
}

bool bit_equal(const WireMessage& a, const WireMessage& b) {
  if (a.index() != b.index()) return false;
  if (const auto* fa = std::get_if<ForwardBatch>(&a)) {
    const auto& fb = std::get<ForwardBatch>(b);
    return fa->batch_id == fb.batch_id && fa->ids == fb.ids && same_bits(fa->z, fb.z);
  }
  if (const auto* ba = std::get_if<BackwardBatch>(&a)) {
    const auto& bb = std::get<BackwardBatch>(b);
    return ba->batch_id == bb.batch_id && same_bits(ba->grads, bb.grads);
  }
  return std::get<EndEpoch>(a).epoch == std::get<EndEpoch>(b).epoch;
}

Bytes encode_message(const WireMessage& message) {
  ByteWriter w;
  w.put_tag("SPLT");
  w.put_u8(kVersion);
  std::visit(
      [&w](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ForwardBatch>) {
          if (m.ids.size() != m.z.rows) {
            throw InvalidArgument("wire: ForwardBatch id count does not match z rows");
          }
          w.put_u8(static_cast<std::uint8_t>(MessageType::kForwardBatch));
          w.put_u64(m.batch_id);
          put_shape(w, m.z);
          for (auto id : m.ids) w.put_u64(id);
          put_values(w, m.z);
        } else if constexpr (std::is_same_v<T, BackwardBatch>) {
          w.put_u8(static_cast<std::uint8_t>(MessageType::kBackwardBatch));
          w.put_u64(m.batch_id);
          put_shape(w, m.grads);
          put_values(w, m.grads);
        } else {
          w.put_u8(static_cast<std::uint8_t>(MessageType::kEndEpoch));
          w.put_u32(m.epoch);
        }
      },
      message);
  return std::move(w).take();
}

WireMessage decode_message(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "wire");
  const MessageType type = checked_header(r);
  WireMessage out;
  switch (type) {
    case MessageType::kForwardBatch: {
      ForwardBatch m;
      m.batch_id = r.u64();
      const std::uint32_t n = r.u32();
      const std::uint32_t d = r.u32();
      r.require(std::size_t{n} * 8);
      m.ids.resize(n);
      for (auto& id : m.ids) id = r.u64();
      m.z = read_values(r, n, d);
      out = std::move(m);
      break;
    }
    case MessageType::kBackwardBatch: {
      BackwardBatch m;
      m.batch_id = r.u64();
      const std::uint32_t n = r.u32();
      const std::uint32_t d = r.u32();
      m.grads = read_values(r, n, d);
      out = std::move(m);
      break;
    }
    case MessageType::kEndEpoch:
      out = EndEpoch{r.u32()};
      break;
  }
  if (r.remaining() != 0) {
    throw DecodeError(DecodeErrorKind::kMalformed,
                      "wire: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return out;
}

std::size_t fixed_body_size(MessageType type) {
  switch (type) {
    case MessageType::kForwardBatch:
    case MessageType::kBackwardBatch:
      return 16;
    case MessageType::kEndEpoch:
      return 4;
  }
  return 0;
}

std::size_t message_length(std::span<const std::uint8_t> prefix) {
  ByteReader r(prefix, "wire");
  const MessageType type = checked_header(r);
  if (type == MessageType::kEndEpoch) return kHeaderSize + 4;
  r.u64();
  const std::uint64_t n = r.u32();
  const std::uint64_t d = r.u32();
  std::uint64_t body = 16 + n * d * 4;
  if (type == MessageType::kForwardBatch) body += n * 8;
  return static_cast<std::size_t>(kHeaderSize + body);
}

}  // namespace splitleak::wire
