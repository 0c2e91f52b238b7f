#include "splitleak/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "splitleak/error.hpp"
#include "splitleak/rng.hpp"

namespace splitleak::data {
namespace {

std::vector<double> random_unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm < 1e-12) {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
  }
  for (double& x : v) x /= norm;
  return v;
}

double min_pairwise_distance(const std::vector<std::vector<double>>& centers) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < centers.size(); ++a) {
    for (std::size_t b = a + 1; b < centers.size(); ++b) {
      double d = 0.0;
      for (std::size_t j = 0; j < centers[a].size(); ++j) {
        const double t = centers[a][j] - centers[b][j];
        d += t * t;
      }
      best = std::min(best, std::sqrt(d));
    }
  }
  return best;
}

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t pos) {
  return (std::uint32_t{b[pos]} << 24) | (std::uint32_t{b[pos + 1]} << 16) |
         (std::uint32_t{b[pos + 2]} << 8) | std::uint32_t{b[pos + 3]};
}

void write_be32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

constexpr std::uint8_t kDatasetVersion = 1;

}  // namespace

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (inputs.rows() != n || ids.size() != n) {
    throw InvalidArgument("Dataset: inputs, labels and ids disagree on the row count");
  }
  if (num_classes == 0) throw InvalidArgument("Dataset: num_classes must be positive");
  for (auto y : labels) {
    if (y >= num_classes) throw InvalidArgument("Dataset: label " + std::to_string(y) + " out of range");
  }
  std::unordered_set<std::uint64_t> seen(ids.begin(), ids.end());
  if (seen.size() != n) throw InvalidArgument("Dataset: ids are not unique");
}

Dataset generate_blobs(std::size_t num_classes, std::size_t n, std::size_t dim, double spread,
                       std::uint64_t seed) {
  if (num_classes < 2) throw InvalidArgument("generate_blobs: need at least 2 classes");
  if (n < num_classes) throw InvalidArgument("generate_blobs: n must be at least K");
  if (dim < 1) throw InvalidArgument("generate_blobs: dim must be at least 1");
  if (!(spread >= 0.0) || !std::isfinite(spread)) {
    throw InvalidArgument("generate_blobs: spread must be finite and non-negative");
  }
  Rng rng(seed);
  const double radius = spread > 0.0 ? 4.0 * spread : 1.0;

  std::vector<std::vector<double>> centers;
  double best_gap = -1.0;
  for (int candidate = 0; candidate < 64; ++candidate) {
    std::vector<std::vector<double>> trial;
    for (std::size_t k = 0; k < num_classes; ++k) {
      auto c = random_unit_vector(rng, dim);
      for (double& x : c) x *= radius;
      trial.push_back(std::move(c));
    }
    const double gap = min_pairwise_distance(trial);
    if (gap > best_gap) {
      best_gap = gap;
      centers = std::move(trial);
    }
  }

  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % num_classes;
  rng.shuffle(labels);

  Dataset ds;
  ds.num_classes = num_classes;
  ds.inputs = Matrix(n, dim);
  ds.labels = std::move(labels);
  ds.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.ids[i] = i;
    const auto& c = centers[ds.labels[i]];
    auto row = ds.inputs.row(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = c[j] + spread * rng.normal();
  }
  return ds;
}

Dataset generate_imbalanced_binary(std::size_t n, std::size_t dim, double positive_rate,
                                   std::uint64_t seed, double separation) {
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) {
    throw InvalidArgument("generate_imbalanced_binary: positive_rate must lie in (0, 1)");
  }
  if (n == 0 || dim == 0) throw InvalidArgument("generate_imbalanced_binary: empty shape");
  Rng rng(seed);
  const auto direction = random_unit_vector(rng, dim);
  Dataset ds;
  ds.num_classes = 2;
  ds.inputs = Matrix(n, dim);
  ds.labels.resize(n);
  ds.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.ids[i] = i;
    ds.labels[i] = rng.uniform() < positive_rate ? 1 : 0;
    auto row = ds.inputs.row(i);
    for (std::size_t j = 0; j < dim; ++j) {
      row[j] = rng.normal() + (ds.labels[i] ? separation * direction[j] : 0.0);
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_at(const Dataset& ds, std::size_t count) {
  if (count > ds.size()) throw InvalidArgument("split_at: count exceeds dataset size");
  std::vector<std::size_t> head(count), tail(ds.size() - count);
  std::iota(head.begin(), head.end(), 0);
  std::iota(tail.begin(), tail.end(), count);
  auto take = [&](const std::vector<std::size_t>& idx) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.inputs = ds.inputs.gather_rows(idx);
    for (auto i : idx) {
      out.labels.push_back(ds.labels[i]);
      out.ids.push_back(ds.ids[i]);
    }
    return out;
  };
  return {take(head), take(tail)};
}

LabelPrior empirical_prior(std::span<const std::size_t> labels, std::size_t num_classes) {
  if (labels.empty()) throw InvalidArgument("empirical_prior: empty labels");
  if (num_classes == 0) throw InvalidArgument("empirical_prior: num_classes must be positive");
  std::vector<double> counts(num_classes, 0.0);
  for (auto y : labels) {
    if (y >= num_classes) throw InvalidArgument("empirical_prior: label out of range");
    counts[y] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(labels.size());
  return LabelPrior{ProbVector(std::move(counts))};
}

IdxContent parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw IdxParseError(IdxErrorKind::kTruncated,
                        "IDX: truncated header, expected 4 bytes, have " +
                            std::to_string(bytes.size()));
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  std::size_t ndims = 0;
  IdxContent out;
  if (magic == kIdxImageMagic) {
    ndims = 3;
    out.kind = IdxContent::Kind::kImages;
  } else if (magic == kIdxLabelMagic) {
    ndims = 1;
    out.kind = IdxContent::Kind::kLabels;
  } else {
    throw IdxParseError(IdxErrorKind::kBadMagic, "IDX: unsupported magic " + std::to_string(magic));
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw IdxParseError(IdxErrorKind::kTruncated,
                        "IDX: truncated header, expected " + std::to_string(header) +
                            " bytes, have " + std::to_string(bytes.size()));
  }
  std::uint64_t payload = 1;
  std::vector<std::uint32_t> dims(ndims);
  for (std::size_t k = 0; k < ndims; ++k) {
    dims[k] = read_be32(bytes, 4 + 4 * k);
    // Three u32 factors cannot overflow 128 bits, but they can exceed any
    // buffer we could hold; cap the product well below SIZE_MAX.
    if (dims[k] != 0 && payload > (std::uint64_t{1} << 48) / dims[k]) {
      throw IdxParseError(IdxErrorKind::kDimensionOverflow, "IDX: dimension product overflows");
    }
    payload *= dims[k];
  }
  const std::uint64_t expected = header + payload;
  if (bytes.size() < expected) {
    throw IdxParseError(IdxErrorKind::kTruncated,
                        "IDX: truncated payload, expected " + std::to_string(expected) +
                            " bytes, have " + std::to_string(bytes.size()));
  }
  const auto data = bytes.subspan(header);
  if (out.kind == IdxContent::Kind::kLabels) {
    out.labels.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(payload));
  } else {
    out.image_rows = dims[1];
    out.image_cols = dims[2];
    const std::size_t width = out.image_rows * out.image_cols;
    out.images = Matrix(dims[0], width);
    auto v = out.images.values();
    for (std::size_t k = 0; k < payload; ++k) v[k] = data[k] / 255.0;
  }
  return out;
}

Bytes serialize_idx_labels(std::span<const std::size_t> labels) {
  Bytes out;
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (auto y : labels) {
    if (y > 255) throw InvalidArgument("serialize_idx_labels: label exceeds u8");
    out.push_back(static_cast<std::uint8_t>(y));
  }
  return out;
}

Bytes serialize_idx_images(const Matrix& images, std::size_t rows, std::size_t cols) {
  if (images.cols() != rows * cols) {
    throw InvalidArgument("serialize_idx_images: row width does not equal rows * cols");
  }
  Bytes out;
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.rows()));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (double v : images.values()) {
    out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)));
  }
  return out;
}

Dataset dataset_from_idx(const IdxContent& images, const IdxContent& labels,
                         std::size_t num_classes) {
  if (images.kind != IdxContent::Kind::kImages || labels.kind != IdxContent::Kind::kLabels) {
    throw InvalidArgument("dataset_from_idx: expected an image file and a label file");
  }
  if (images.images.rows() != labels.labels.size()) {
    throw InvalidArgument("dataset_from_idx: image and label counts differ");
  }
  Dataset ds;
  ds.inputs = images.images;
  ds.labels = labels.labels;
  ds.num_classes = num_classes;
  ds.ids.resize(ds.labels.size());
  std::iota(ds.ids.begin(), ds.ids.end(), std::uint64_t{0});
  ds.validate();
  return ds;
}

Bytes encode_dataset(const Dataset& ds) {
  ds.validate();
  ByteWriter w;
  w.put_tag("SPLT");
  w.put_tag("DS");
  w.put_u8(kDatasetVersion);
  w.put_u64(ds.size());
  w.put_u32(static_cast<std::uint32_t>(ds.dim()));
  w.put_u32(static_cast<std::uint32_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.put_u64(ds.ids[i]);
    w.put_u32(static_cast<std::uint32_t>(ds.labels[i]));
    for (double v : ds.inputs.row(i)) w.put_f64(v);
  }
  return std::move(w).take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset file");
  if (!r.tag_matches("SPLT") || !r.tag_matches("DS")) {
    throw DecodeError(DecodeErrorKind::kBadMagic, "dataset file: bad magic");
  }
  const auto version = r.u8();
  if (version != kDatasetVersion) {
    throw DecodeError(DecodeErrorKind::kUnsupportedVersion,
                      "dataset file: unsupported version " + std::to_string(version));
  }
  const std::uint64_t n = r.u64();
  const std::uint32_t d = r.u32();
  const std::uint32_t k = r.u32();
  const std::uint64_t row_bytes = 12 + 8 * std::uint64_t{d};
  if (n > r.remaining() / row_bytes) {
    throw DecodeError(DecodeErrorKind::kTruncated,
                      "dataset file: truncated, " + std::to_string(n) + " rows need " +
                          std::to_string(n * row_bytes) + " bytes, have " +
                          std::to_string(r.remaining()));
  }
  Dataset ds;
  ds.num_classes = k;
  ds.inputs = Matrix(n, d);
  ds.labels.resize(n);
  ds.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.ids[i] = r.u64();
    ds.labels[i] = r.u32();
    for (double& v : ds.inputs.row(i)) v = r.f64();
  }
  if (r.remaining() != 0) throw DecodeError(DecodeErrorKind::kMalformed, "dataset file: trailing bytes");
  try {
    ds.validate();
  } catch (const InvalidArgument& e) {
    throw DecodeError(DecodeErrorKind::kMalformed, std::string("dataset file: ") + e.what());
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) { write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace splitleak::data
