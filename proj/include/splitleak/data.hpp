#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitleak/bytes.hpp"
#include "splitleak/matrix.hpp"
#include "splitleak/numerics.hpp"

namespace splitleak::data {

struct Dataset {
  Matrix inputs;                     // [n x d]
  std::vector<std::size_t> labels;   // [n], each in [0, num_classes)
  std::vector<std::uint64_t> ids;    // [n], unique
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return inputs.cols(); }

  /// Throws InvalidArgument on any broken invariant.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Class distribution P_y known to the attacker.
struct LabelPrior {
  ProbVector probs;

  std::size_t num_classes() const noexcept { return probs.size(); }
  friend bool operator==(const LabelPrior&, const LabelPrior&) = default;
};

/// K Gaussian clusters with isotropic std `spread`. Centers lie on a sphere of
/// radius 4 * spread (radius 1 when spread is 0); the most spread-out of 64
/// candidate center sets is kept. Class counts differ by at most one.
Dataset generate_blobs(std::size_t num_classes, std::size_t n, std::size_t dim, double spread,
                       std::uint64_t seed);

/// Binary task with Bernoulli(positive_rate) labels. Negatives ~ N(0, I),
/// positives ~ N(separation * u, I) for a random unit direction u.
Dataset generate_imbalanced_binary(std::size_t n, std::size_t dim, double positive_rate,
                                   std::uint64_t seed, double separation = 1.0);

/// First `count` rows and the rest, preserving order.
std::pair<Dataset, Dataset> split_at(const Dataset& ds, std::size_t count);

LabelPrior empirical_prior(std::span<const std::size_t> labels, std::size_t num_classes);

// IDX container (big-endian header, u8 payload).
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxContent {
  enum class Kind { kImages, kLabels } kind = Kind::kLabels;
  Matrix images;                     // [count x rows*cols], scaled to [0, 1]
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
  std::vector<std::size_t> labels;
};

IdxContent parse_idx(std::span<const std::uint8_t> bytes);
Bytes serialize_idx_labels(std::span<const std::size_t> labels);
/// Pixels are written as round(255 * x) clamped to [0, 255].
Bytes serialize_idx_images(const Matrix& images, std::size_t rows, std::size_t cols);

/// Pairs an IDX image file with its label file. Ids are 0..n-1.
Dataset dataset_from_idx(const IdxContent& images, const IdxContent& labels,
                         std::size_t num_classes = 10);

/// Dataset cache container: "SPLT" "DS", version u8, n u64, d u32, K u32, then
/// per row: id u64, label u32, d x f64.
Bytes encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace splitleak::data
