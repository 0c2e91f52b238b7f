#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "splitleak/data.hpp"
#include "splitleak/error.hpp"
#include "splitleak/nn.hpp"
#include "splitleak/rng.hpp"

namespace splitleak::data {
namespace {

TEST(Blobs, ZeroSpreadGivesSeparablePointClusters) {
  const auto ds = generate_blobs(2, 50, 3, 0.0, 1);
  ds.validate();
  // Every point sits on its class center, so the two classes collapse to two
  // distinct points.
  std::vector<std::vector<double>> centers(2);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.inputs.row(i);
    auto& c = centers[ds.labels[i]];
    if (c.empty()) c.assign(row.begin(), row.end());
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(row[j], c[j]);
  }
  EXPECT_NE(centers[0], centers[1]);
}

TEST(Blobs, BalancedCounts) {
  const auto ds = generate_blobs(3, 100, 2, 1.0, 2);
  std::vector<int> counts(3, 0);
  for (auto y : ds.labels) ++counts[y];
  for (int c : counts) EXPECT_LE(std::abs(c - 100.0 / 3.0), 1.0);
}

TEST(Blobs, LinearProbeSeparatesFourClasses) {
  const auto ds = generate_blobs(4, 2000, 2, 0.5, 3);
  Matrix targets(ds.size(), 4);
  for (std::size_t i = 0; i < ds.size(); ++i) targets(i, ds.labels[i]) = 1.0;
  Rng rng(4);
  const std::vector<std::size_t> dims{2, 4};
  auto probe = nn::MlpModel::glorot(dims, rng);
  auto state = nn::AdamState::for_model(probe);
  for (int step = 0; step < 500; ++step) {
    nn::adam_step(probe, nn::backward(probe, ds.inputs, targets).grads.param_grads, state, 0.05);
  }
  const auto logits = nn::forward(probe, ds.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) correct += argmax(logits.row(i)) == ds.labels[i];
  EXPECT_GE(static_cast<double>(correct) / ds.size(), 0.95);
}

TEST(Blobs, DeterministicAndValidated) {
  EXPECT_EQ(generate_blobs(4, 40, 2, 0.5, 9), generate_blobs(4, 40, 2, 0.5, 9));
  EXPECT_NE(generate_blobs(4, 40, 2, 0.5, 9), generate_blobs(4, 40, 2, 0.5, 10));
  EXPECT_THROW(generate_blobs(1, 40, 2, 0.5, 9), InvalidArgument);
  EXPECT_THROW(generate_blobs(4, 3, 2, 0.5, 9), InvalidArgument);
  EXPECT_THROW(generate_blobs(4, 40, 0, 0.5, 9), InvalidArgument);
  EXPECT_THROW(generate_blobs(4, 40, 2, -1.0, 9), InvalidArgument);
}

TEST(Blobs, EmpiricalPriorIsUniform) {
  const auto ds = generate_blobs(4, 2000, 2, 0.5, 5);
  const auto prior = empirical_prior(ds.labels, 4);
  for (double p : prior.probs.values()) EXPECT_NEAR(p, 0.25, 1e-3);
}

TEST(Imbalanced, PositiveCountWithinBinomialBound) {
  const auto ds = generate_imbalanced_binary(10000, 4, 0.1, 6);
  std::size_t pos = 0;
  for (auto y : ds.labels) pos += y;
  const double sigma = std::sqrt(10000 * 0.1 * 0.9);
  EXPECT_LE(std::abs(static_cast<double>(pos) - 1000.0), 3 * sigma);
}

TEST(Imbalanced, BalancedRate) {
  const auto ds = generate_imbalanced_binary(10000, 2, 0.5, 7);
  std::size_t pos = 0;
  for (auto y : ds.labels) pos += y;
  EXPECT_LE(std::abs(static_cast<double>(pos) - 5000.0), 3 * 50.0);
}

TEST(Imbalanced, DeterministicAndValidated) {
  EXPECT_EQ(generate_imbalanced_binary(100, 3, 0.2, 1), generate_imbalanced_binary(100, 3, 0.2, 1));
  EXPECT_THROW(generate_imbalanced_binary(100, 3, 0.0, 1), InvalidArgument);
  EXPECT_THROW(generate_imbalanced_binary(100, 3, 1.0, 1), InvalidArgument);
}

TEST(Prior, Counting) {
  const std::vector<std::size_t> a{0, 1, 0, 1}, b{0, 0, 0, 1};
  EXPECT_EQ(empirical_prior(a, 2).probs.values()[0], 0.5);
  EXPECT_EQ(empirical_prior(b, 2).probs.values()[0], 0.75);
  EXPECT_EQ(empirical_prior(b, 2).probs.values()[1], 0.25);
  EXPECT_THROW(empirical_prior(std::vector<std::size_t>{}, 2), InvalidArgument);
}

TEST(Idx, HandAssembledLabels) {
  const Bytes bytes{0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x03, 7, 2, 1};
  const auto content = parse_idx(bytes);
  EXPECT_EQ(content.kind, IdxContent::Kind::kLabels);
  EXPECT_EQ(content.labels, (std::vector<std::size_t>{7, 2, 1}));
}

TEST(Idx, EmptyCount) {
  const Bytes bytes{0x00, 0x00, 0x08, 0x03, 0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28};
  const auto content = parse_idx(bytes);
  EXPECT_EQ(content.images.rows(), 0u);
  EXPECT_EQ(content.images.cols(), 784u);
}

TEST(Idx, Errors) {
  const Bytes truncated{0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x05, 1, 2};
  try {
    parse_idx(truncated);
    FAIL();
  } catch (const IdxParseError& e) {
    EXPECT_EQ(e.kind(), IdxErrorKind::kTruncated);
    EXPECT_NE(std::string(e.what()).find("expected 13"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("have 10"), std::string::npos);
  }
  const Bytes bad_magic{0x00, 0x00, 0x09, 0x01, 0, 0, 0, 0};
  try {
    parse_idx(bad_magic);
    FAIL();
  } catch (const IdxParseError& e) {
    EXPECT_EQ(e.kind(), IdxErrorKind::kBadMagic);
  }
  const Bytes huge{0x00, 0x00, 0x08, 0x03, 0xFF, 0xFF, 0xFF, 0xFF,
                   0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF};
  try {
    parse_idx(huge);
    FAIL();
  } catch (const IdxParseError& e) {
    EXPECT_EQ(e.kind(), IdxErrorKind::kDimensionOverflow);
  }
}

TEST(Idx, RoundTripOnRandomDatasets) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = rng.below(12), rows = 1 + rng.below(5), cols = 1 + rng.below(5);
    Matrix images(n, rows * cols);
    for (double& v : images.values()) v = static_cast<double>(rng.below(256)) / 255.0;
    std::vector<std::size_t> labels(n);
    for (auto& y : labels) y = rng.below(10);
    const auto img = parse_idx(serialize_idx_images(images, rows, cols));
    const auto lab = parse_idx(serialize_idx_labels(labels));
    EXPECT_EQ(img.images, images);
    EXPECT_EQ(img.image_rows, rows);
    EXPECT_EQ(lab.labels, labels);
    const auto ds = dataset_from_idx(img, lab);
    EXPECT_EQ(ds.size(), n);
  }
}

TEST(DatasetFile, RoundTripAndErrors) {
  const auto ds = generate_blobs(3, 30, 4, 0.7, 11);
  const auto bytes = encode_dataset(ds);
  EXPECT_EQ(decode_dataset(bytes), ds);
  auto cut = bytes;
  cut.resize(cut.size() - 1);
  EXPECT_THROW(decode_dataset(cut), DecodeError);
  auto bad = bytes;
  bad[1] = 'Q';
  EXPECT_THROW(decode_dataset(bad), DecodeError);
}

TEST(Split, PreservesOrder) {
  const auto ds = generate_blobs(2, 10, 2, 1.0, 1);
  const auto [a, b] = split_at(ds, 7);
  EXPECT_EQ(a.size(), 7u);
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b.ids.front(), ds.ids[7]);
  EXPECT_EQ(b.labels.back(), ds.labels.back());
}

}  // namespace
}  // namespace splitleak::data
