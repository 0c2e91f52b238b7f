#include "splitleak/transcript.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "splitleak/error.hpp"

namespace splitleak {
namespace {
constexpr std::uint8_t kTranscriptVersion = 1;
}

GradientSet GradientSet::subset(std::span<const std::size_t> rows) const {
  GradientSet out;
  out.z = z.gather_rows(rows);
  out.grads = grads.gather_rows(rows);
  for (auto r : rows) out.ids.push_back(ids[r]);
  return out;
}

void Transcript::validate() const {
  std::map<std::uint32_t, std::set<std::uint64_t>> seen;
  for (const auto& rec : records) {
    if (rec.z.size() != meta.embedding_dim || rec.grad_z.size() != meta.embedding_dim) {
      throw InvalidArgument("Transcript: record " + std::to_string(rec.input_id) +
                            " does not have embedding dim " + std::to_string(meta.embedding_dim));
    }
    if (!seen[rec.epoch].insert(rec.input_id).second) {
      throw InvalidArgument("Transcript: id " + std::to_string(rec.input_id) +
                            " repeated within epoch " + std::to_string(rec.epoch));
    }
  }
}

std::uint32_t Transcript::last_epoch() const {
  if (records.empty()) throw InvalidArgument("Transcript: empty");
  std::uint32_t last = 0;
  for (const auto& rec : records) last = std::max(last, rec.epoch);
  return last;
}

GradientSet Transcript::epoch_slice(std::uint32_t epoch) const {
  std::vector<const TranscriptRecord*> picked;
  for (const auto& rec : records) {
    if (rec.epoch == epoch) picked.push_back(&rec);
  }
  const std::size_t d = meta.embedding_dim;
  GradientSet out;
  out.z = Matrix(picked.size(), d);
  out.grads = Matrix(picked.size(), d);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    out.ids.push_back(picked[i]->input_id);
    std::copy(picked[i]->z.begin(), picked[i]->z.end(), out.z.row(i).begin());
    std::copy(picked[i]->grad_z.begin(), picked[i]->grad_z.end(), out.grads.row(i).begin());
  }
  return out;
}

Bytes encode_transcript(const Transcript& t) {
  t.validate();
  ByteWriter w;
  w.put_tag("SPLT");
  w.put_tag("TR");
  w.put_u8(kTranscriptVersion);
  w.put_u32(t.meta.embedding_dim);
  w.put_u32(t.meta.num_epochs);
  w.put_u32(t.meta.batch_size);
  w.put_f64(t.meta.noise_sigma);
  w.put_u64(t.records.size());
  for (const auto& rec : t.records) {
    w.put_u64(rec.input_id);
    w.put_u32(rec.epoch);
    for (double v : rec.z) w.put_f32(static_cast<float>(v));
    for (double v : rec.grad_z) w.put_f32(static_cast<float>(v));
  }
  return std::move(w).take();
}

Transcript decode_transcript(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "transcript file");
  if (!r.tag_matches("SPLT") || !r.tag_matches("TR")) {
    throw DecodeError(DecodeErrorKind::kBadMagic, "transcript file: bad magic");
  }
  const auto version = r.u8();
  if (version != kTranscriptVersion) {
    throw DecodeError(DecodeErrorKind::kUnsupportedVersion,
                      "transcript file: unsupported version " + std::to_string(version));
  }
  Transcript t;
  t.meta.embedding_dim = r.u32();
  t.meta.num_epochs = r.u32();
  t.meta.batch_size = r.u32();
  t.meta.noise_sigma = r.f64();
  const std::uint64_t count = r.u64();
  const std::uint64_t record_bytes = 12 + 8 * std::uint64_t{t.meta.embedding_dim};
  if (count > r.remaining() / record_bytes) {
    throw DecodeError(DecodeErrorKind::kTruncated,
                      "transcript file: truncated, " + std::to_string(count) + " records need " +
                          std::to_string(count * record_bytes) + " bytes, have " +
                          std::to_string(r.remaining()));
  }
  t.records.resize(count);
  for (auto& rec : t.records) {
    rec.input_id = r.u64();
    rec.epoch = r.u32();
    rec.z.resize(t.meta.embedding_dim);
    rec.grad_z.resize(t.meta.embedding_dim);
    for (double& v : rec.z) v = r.f32();
    for (double& v : rec.grad_z) v = r.f32();
  }
  if (r.remaining() != 0) {
    throw DecodeError(DecodeErrorKind::kMalformed, "transcript file: trailing bytes");
  }
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw DecodeError(DecodeErrorKind::kMalformed, std::string("transcript file: ") + e.what());
  }
  return t;
}

void save_transcript(const Transcript& t, const std::string& path) {
  write_file(path, encode_transcript(t));
}

Transcript load_transcript(const std::string& path) { return decode_transcript(read_file(path)); }

}  // namespace splitleak
