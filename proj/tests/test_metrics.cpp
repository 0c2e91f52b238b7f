#include <gtest/gtest.h>

#include <json.hpp>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "splitleak/defense.hpp"
#include "splitleak/error.hpp"
#include "splitleak/eval.hpp"
#include "splitleak/normattack.hpp"

namespace splitleak {
namespace {

GradientSet slice_with_grads(const std::vector<std::vector<double>>& grads) {
  GradientSet s;
  const std::size_t d = grads.empty() ? 1 : grads[0].size();
  s.z = Matrix(grads.size(), d);
  s.grads = Matrix(grads.size(), d);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    s.ids.push_back(i);
    std::copy(grads[i].begin(), grads[i].end(), s.grads.row(i).begin());
  }
  return s;
}

GradientSet slice_with_norms(const std::vector<double>& norms) {
  std::vector<std::vector<double>> grads;
  for (double v : norms) grads.push_back({v});
  return slice_with_grads(grads);
}

TEST(GradientNorms, Examples) {
  const auto norms = normattack::gradient_norms(slice_with_grads({{0, 0}, {3, 4}}));
  EXPECT_EQ(norms[0], 0.0);
  EXPECT_EQ(norms[1], 5.0);
  EXPECT_THROW(normattack::gradient_norms(GradientSet{}), InvalidArgument);
}

TEST(GradientNorms, MatchRecomputation) {
  Rng rng(1);
  std::vector<std::vector<double>> grads(50, std::vector<double>(7));
  for (auto& g : grads)
    for (double& v : g) v = rng.normal();
  const auto norms = normattack::gradient_norms(slice_with_grads(grads));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    double sq = 0.0;
    for (double v : grads[i]) sq += v * v;
    EXPECT_NEAR(norms[i], std::sqrt(sq), 1e-12);
  }
}

TEST(NormAttack, SeparableExample) {
  const std::vector<std::size_t> truth{0, 0, 1, 0, 1};
  const auto r =
      normattack::norm_attack_best_threshold(slice_with_norms({0.1, 0.2, 5.0, 0.15, 4.8}), truth);
  EXPECT_EQ(*r.best_accuracy, 1.0);
  EXPECT_GT(r.threshold, 0.2);
  EXPECT_LT(r.threshold, 4.8);
  EXPECT_EQ(r.labels, truth);
}

TEST(NormAttack, EqualNormsGiveMajorityFrequency) {
  const std::vector<std::size_t> truth{1, 0, 1, 1};
  const auto r = normattack::norm_attack_best_threshold(slice_with_norms({2, 2, 2, 2}), truth);
  EXPECT_EQ(*r.best_accuracy, 0.75);
}

TEST(NormAttack, AllNegativeTruthPicksInfiniteThreshold) {
  const std::vector<std::size_t> truth{0, 0, 0};
  const auto r = normattack::norm_attack_best_threshold(slice_with_norms({1, 3, 2}), truth);
  EXPECT_EQ(*r.best_accuracy, 1.0);
  EXPECT_TRUE(std::isinf(r.threshold) && r.threshold > 0);
}

// Exhaustive check: every threshold at a data point or between data points.
TEST(NormAttack, MatchesExhaustiveSweepAndBaselines) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> norms(n);
    std::vector<std::size_t> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      norms[i] = static_cast<double>(rng.below(5));  // many ties
      truth[i] = rng.below(2);
    }
    const auto r = normattack::norm_attack_best_threshold(slice_with_norms(norms), truth);
    double best = 0.0;
    for (double t : {-1.0, 0.5, 1.5, 2.5, 3.5, 10.0}) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < n; ++i) hits += (norms[i] > t ? 1u : 0u) == truth[i];
      best = std::max(best, static_cast<double>(hits) / static_cast<double>(n));
    }
    EXPECT_DOUBLE_EQ(*r.best_accuracy, best);
    const double prior = static_cast<double>(std::accumulate(truth.begin(), truth.end(), 0u)) / n;
    EXPECT_GE(*r.best_accuracy, std::max(prior, 1.0 - prior) - 1e-12);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(r.labels[i], norms[i] > r.threshold ? 1u : 0u);
  }
}

TEST(NormAttack, InvariantUnderMonotoneRescaling) {
  Rng rng(3);
  std::vector<double> norms(40), scaled(40);
  std::vector<std::size_t> truth(40);
  for (std::size_t i = 0; i < 40; ++i) {
    norms[i] = rng.uniform(0.0, 2.0);
    scaled[i] = std::exp(3.0 * norms[i]);
    truth[i] = norms[i] + rng.normal(0.0, 0.3) > 1.2;
  }
  const auto a = normattack::norm_attack_best_threshold(slice_with_norms(norms), truth);
  const auto b = normattack::norm_attack_best_threshold(slice_with_norms(scaled), truth);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(*a.best_accuracy, *b.best_accuracy);
}

TEST(NormAttack, Errors) {
  const std::vector<std::size_t> bad{0, 2};
  EXPECT_THROW(normattack::norm_attack_best_threshold(slice_with_norms({1, 2}), bad),
               InvalidArgument);
  const std::vector<std::size_t> short_truth{0};
  EXPECT_THROW(normattack::norm_attack_best_threshold(slice_with_norms({1, 2}), short_truth),
               InvalidArgument);
}

TEST(NormAttack, CsvShape) {
  const auto r = normattack::threshold_attack(slice_with_norms({1, 3}), 2.0);
  EXPECT_EQ(normattack::norm_attack_csv(r), "input_id,predicted_label,max_confidence\n0,0,1\n1,1,1\n");
}

TEST(LeakAccuracy, InheritsAssignmentAccuracy) {
  const std::vector<std::size_t> truth{0, 0, 1, 1, 2, 2};
  EXPECT_EQ(eval::leak_accuracy(truth, truth), 1.0);
  const std::vector<std::size_t> permuted{2, 2, 0, 0, 1, 1};
  EXPECT_EQ(eval::leak_accuracy(permuted, truth), 1.0);
  const std::vector<std::size_t> merged{0, 0, 0, 0, 1, 1};
  EXPECT_NEAR(eval::leak_accuracy(merged, truth), 4.0 / 6.0, 1e-15);
  EXPECT_THROW(eval::leak_accuracy(merged, std::vector<std::size_t>{0}), InvalidArgument);
}

nn::MlpModel identity_model(std::size_t d) {
  nn::DenseLayer layer{Matrix(d, d), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) layer.weight(i, i) = 1.0;
  return nn::MlpModel({layer});
}

TEST(TestAccuracy, ConstantLogitsScoreTheArgmaxClassFrequency) {
  data::Dataset ds;
  ds.inputs = Matrix(5, 2, 0.3);
  ds.labels = {0, 1, 1, 2, 1};
  ds.ids = {0, 1, 2, 3, 4};
  ds.num_classes = 3;
  nn::DenseLayer layer{Matrix(3, 2), {0.1, 0.5, 0.2}};
  const nn::MlpModel g({layer});
  EXPECT_DOUBLE_EQ(eval::test_accuracy(identity_model(2), g, ds), 0.6);
}

TEST(TestAccuracy, MemorizingModelScoresOne) {
  data::Dataset ds;
  ds.inputs = Matrix::from_rows({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  ds.labels = {2, 0, 3, 1};
  ds.ids = {0, 1, 2, 3};
  ds.num_classes = 4;
  nn::DenseLayer layer{Matrix(4, 4), std::vector<double>(4, 0.0)};
  for (std::size_t i = 0; i < 4; ++i) layer.weight(ds.labels[i], i) = 5.0;
  EXPECT_EQ(eval::test_accuracy(identity_model(4), nn::MlpModel({layer}), ds), 1.0);
}

TEST(TestAccuracy, MatchesManualCount) {
  Rng rng(4);
  const auto ds = data::generate_blobs(3, 20, 4, 1.0, 5);
  const auto f = nn::MlpModel::glorot(std::vector<std::size_t>{4, 6, 5}, rng);
  const auto g = nn::MlpModel::glorot(std::vector<std::size_t>{5, 3}, rng);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto logits = oracle::naive_forward(g, oracle::naive_forward(f, ds.inputs.row(i)));
    hits += argmax(logits) == ds.labels[i];
  }
  EXPECT_DOUBLE_EQ(eval::test_accuracy(f, g, ds), hits / 20.0);
  EXPECT_THROW(eval::test_accuracy(f, f, ds), InvalidArgument);
}

TEST(Nce, HandComputedCase) {
  const Matrix probs = Matrix::from_rows({{0.7, 0.2, 0.1}, {0.1, 0.8, 0.1}, {0.3, 0.3, 0.4}});
  const std::vector<std::size_t> labels{0, 1, 0};
  const data::LabelPrior prior{ProbVector({0.5, 0.25, 0.25})};
  const double expected =
      (-std::log(0.7) - std::log(0.8) - std::log(0.3)) / 3.0 /
      -(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25));
  EXPECT_NEAR(eval::nce_from_probs(probs, labels, prior), expected, 1e-9);
}

TEST(Nce, PerfectPredictorIsNearZero) {
  const Matrix probs = Matrix::from_rows({{1, 0}, {0, 1}});
  const std::vector<std::size_t> labels{0, 1};
  const double v = eval::nce_from_probs(probs, labels, {ProbVector({0.5, 0.5})});
  EXPECT_GE(v, 0.0);
  EXPECT_LT(v, 1e-9);
}

TEST(Nce, PriorPredictorScoresOne) {
  const std::vector<double> prior{0.6, 0.3, 0.1};
  Rng rng(6);
  const std::size_t n = 10000;
  Matrix probs(n, 3);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(prior.begin(), prior.end(), probs.row(i).begin());
    const double u = rng.uniform();
    labels[i] = u < 0.6 ? 0 : (u < 0.9 ? 1 : 2);
  }
  EXPECT_NEAR(eval::nce_from_probs(probs, labels, {ProbVector(prior)}), 1.0, 0.05);
}

TEST(Nce, ThroughModelsAndErrors) {
  const auto ds = data::generate_blobs(2, 30, 2, 1.0, 7);
  Rng rng(8);
  const auto g = nn::MlpModel::glorot(std::vector<std::size_t>{2, 2}, rng);
  const double v = eval::nce(identity_model(2), g, ds, {ProbVector({0.5, 0.5})});
  EXPECT_GT(v, 0.0);
  EXPECT_THROW(eval::nce(identity_model(2), g, ds, {ProbVector({1.0, 0.0})}), InvalidArgument);
}

TEST(MetricsReport, JsonAndTable) {
  eval::MetricsReport r;
  r.leak_accuracy = 0.5;
  r.n_eval = 4;
  const auto doc = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(doc["leak_accuracy"].get<double>(), 0.5);
  EXPECT_FALSE(doc.contains("nce"));
  EXPECT_NE(r.to_table().find("leak_accuracy"), std::string::npos);
}

TEST(GaussianNoise, ZeroSigmaIsIdentityWithoutDraws) {
  Rng rng(9), untouched(9);
  const std::vector<double> grad{1.5, -2.25, 1e-300, 0.0};
  const auto out = defense::perturb_gradient(grad, {0.0, 1}, rng);
  EXPECT_EQ(out, grad);
  EXPECT_EQ(rng.next_u64(), untouched.next_u64());
}

TEST(GaussianNoise, MomentsFollowCltBounds) {
  Rng rng(10);
  const std::vector<double> zero(10000, 0.0);
  const auto noise = defense::perturb_gradient(zero, {1.0, 0}, rng);
  double mean = 0.0;
  for (double v : noise) mean += v;
  mean /= noise.size();
  double var = 0.0;
  for (double v : noise) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (noise.size() - 1));
  EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(10000.0));
  EXPECT_NEAR(sd, 1.0, 0.05);
}

TEST(GaussianNoise, SameSeedSameNoiseAndErrors) {
  const std::vector<double> grad(20, 1.0);
  Rng a(11), b(11);
  EXPECT_EQ(defense::perturb_gradient(grad, {0.3, 0}, a), defense::perturb_gradient(grad, {0.3, 0}, b));
  EXPECT_NE(defense::perturb_gradient(grad, {0.3, 0}, a), defense::perturb_gradient(grad, {0.3, 0}, a));
  EXPECT_THROW(defense::perturb_gradient(grad, {-0.1, 0}, a), InvalidArgument);
  EXPECT_THROW(defense::perturb_gradient(grad, {NAN, 0}, a), InvalidArgument);
}

}  // namespace
}  // namespace splitleak
