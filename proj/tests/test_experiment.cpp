#include <gtest/gtest.h>

#include "splitleak/defense.hpp"
#include "splitleak/error.hpp"
#include "splitleak/eval.hpp"
#include "splitleak/experiment.hpp"

namespace splitleak {
namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.dataset.train_size = 120;
  c.dataset.heldout_size = 40;
  c.train.epochs = 2;
  c.attack.n_outer = 2;
  c.attack.inner_epochs = 3;
  c.attack.surrogate_hidden = {8};
  c.attack.threads = 1;
  c.seeds = {5, 6};
  return c;
}

TEST(ExperimentConfig, DefaultsAndTextRoundTrip) {
  const ExperimentConfig defaults = parse_config("");
  EXPECT_EQ(defaults.train.optimizer.lr, 0.001);
  EXPECT_EQ(defaults.train.epochs, 10u);
  EXPECT_FALSE(defaults.noise.has_value());

  ExperimentConfig c = tiny_config();
  c.noise = defense::NoiseConfig{0.125, 0};
  c.attack.ranges.eta_g = {1.0 / 3.0, 0.7};
  c.attack.epoch = 1;
  c.attack.toggles.use_cer = false;
  c.attack.objective = gia::ObjectiveMode::kFullLossUnitLambdas;
  c.transport = protocol::TransportKind::kSocket;
  const ExperimentConfig back = parse_config(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.attack.ranges.eta_g.lo, 1.0 / 3.0);
  EXPECT_EQ(back.noise->sigma, 0.125);
  EXPECT_EQ(config_hash(back), config_hash(c));
  c.seeds = {7};
  EXPECT_NE(config_hash(back), config_hash(c));
}

TEST(ExperimentConfig, CommentsAndWhitespace) {
  const auto c = parse_config("# header\n  seeds = 1, 2 ,3  # trailing\n\nmodel.f=2,4\r\nmodel.g = 4,4\n");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.f_dims, (std::vector<std::size_t>{2, 4}));
}

TEST(ExperimentConfig, RejectsBadInput) {
  EXPECT_THROW(parse_config("nonsense"), InvalidArgument);
  EXPECT_THROW(parse_config("attack.bogus = 1"), InvalidArgument);
  EXPECT_THROW(parse_config("train.epochs = -1"), InvalidArgument);
  EXPECT_THROW(parse_config("train.lr = fast"), InvalidArgument);
  EXPECT_THROW(parse_config("model.f = 2,16,7"), InvalidArgument);
  EXPECT_THROW(parse_config("model.g = 8,3"), InvalidArgument);
  EXPECT_THROW(parse_config("attack.eta_g = 1"), InvalidArgument);
  EXPECT_THROW(parse_config("attack.eta_g = 1e-3,1e-4"), InvalidArgument);
  EXPECT_THROW(parse_config("seeds ="), InvalidArgument);
  EXPECT_THROW(parse_config("dataset.kind = idx"), InvalidArgument);
  EXPECT_THROW(parse_config("noise.sigma = -1"), InvalidArgument);
  EXPECT_THROW(load_config("/nonexistent/config.txt"), IoError);
}

TEST(Experiment, SeedsAreIndependentStreams) {
  const auto a = RunSeeds::from(1);
  EXPECT_NE(a.data, a.init);
  EXPECT_NE(a.train, a.noise);
  EXPECT_NE(a.attack, RunSeeds::from(2).attack);
}

TEST(Experiment, DatasetsAreDisjointSplits) {
  const auto c = tiny_config();
  const auto [train, heldout] = build_datasets(c, 5);
  EXPECT_EQ(train.size(), 120u);
  EXPECT_EQ(heldout.size(), 40u);
  EXPECT_EQ(build_datasets(c, 5).first, train);
  EXPECT_NE(build_datasets(c, 6).first, train);
}

TEST(Experiment, ImbalancedKindIsBinary) {
  auto c = tiny_config();
  c.dataset.kind = DatasetSpec::Kind::kImbalanced;
  c.f_dims = {2, 4};
  c.g_dims = {4, 2};
  const auto run = train_run(c, 1);
  EXPECT_EQ(run.train.num_classes, 2u);
  EXPECT_EQ(run.split.transcript.records.size(), 240u);
}

TEST(Experiment, TrainRunIsDeterministicAndZeroNoiseIsIdentity) {
  const auto c = tiny_config();
  const auto a = train_run(c, 5);
  const auto b = train_run(c, 5, defense::NoiseConfig{0.0, 0});
  EXPECT_EQ(encode_transcript(a.split.transcript), encode_transcript(b.split.transcript));
  EXPECT_EQ(a.split.g, b.split.g);
  const auto noisy = train_run(c, 5, defense::NoiseConfig{0.5, 0});
  EXPECT_NE(noisy.split.transcript, a.split.transcript);
  EXPECT_EQ(noisy.split.transcript.meta.noise_sigma, 0.5);
}

TEST(Experiment, LabelsForAlignsById) {
  const auto c = tiny_config();
  const auto [train, heldout] = build_datasets(c, 5);
  const std::vector<std::uint64_t> ids{train.ids[3], train.ids[0]};
  EXPECT_EQ(labels_for(train, ids), (std::vector<std::size_t>{train.labels[3], train.labels[0]}));
  const std::vector<std::uint64_t> missing{heldout.ids[0]};
  EXPECT_THROW(labels_for(train, missing), InvalidArgument);
}

TEST(NoiseSweep, ZeroSigmaReproducesTheUndefendedPipeline) {
  const auto c = tiny_config();
  const std::vector<double> sigmas{0.0};
  const auto rows = defense::noise_sweep(sigmas, c, 1);
  ASSERT_EQ(rows.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto run = train_run(c, c.seeds[s]);
    gia::AttackConfig attack = c.attack;
    attack.objective = gia::ObjectiveMode::kFullLossUnitLambdas;
    EXPECT_EQ(rows[s].seed, c.seeds[s]);
    EXPECT_EQ(rows[s].test_accuracy, eval::test_accuracy(run.split.f, run.split.g, run.heldout));
    EXPECT_EQ(rows[s].leak_accuracy, attack_run(run, attack, c.seeds[s]).leak_accuracy);
  }
}

TEST(NoiseSweep, RowOrderAndThreadIndependence) {
  auto c = tiny_config();
  c.seeds = {1};
  const std::vector<double> sigmas{0.3, 0.0, 1.0};
  const auto one = defense::noise_sweep(sigmas, c, 1);
  const auto three = defense::noise_sweep(sigmas, c, 3);
  ASSERT_EQ(one.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(one[i].sigma, sigmas[i]);
    EXPECT_EQ(one[i].leak_accuracy, three[i].leak_accuracy);
    EXPECT_EQ(one[i].test_accuracy, three[i].test_accuracy);
  }
  EXPECT_EQ(defense::tradeoff_csv(one).substr(0, 38), "sigma,test_accuracy,leak_accuracy,seed");
  EXPECT_THROW(defense::noise_sweep(std::vector<double>{}, c, 1), InvalidArgument);
  EXPECT_THROW(defense::noise_sweep(std::vector<double>{-1.0}, c, 1), InvalidArgument);
}

TEST(NoiseSweep, ScaleIsMedianNormOverRootDim) {
  const auto c = tiny_config();
  const auto run = train_run(c, 5);
  const auto& t = run.split.transcript;
  const auto slice = t.epoch_slice(t.last_epoch());
  std::vector<double> norms;
  for (std::size_t i = 0; i < slice.size(); ++i) {
    double sq = 0.0;
    for (double v : slice.grads.row(i)) sq += v * v;
    norms.push_back(std::sqrt(sq));
  }
  std::sort(norms.begin(), norms.end());
  const double median = 0.5 * (norms[59] + norms[60]);
  EXPECT_DOUBLE_EQ(defense::gradient_noise_scale(c, 5), median / std::sqrt(8.0));
}

TEST(Ablation, FourColumnsOneRowPerSeed) {
  const auto c = tiny_config();
  const auto rows = ablation(c, 1);
  ASSERT_EQ(rows.size(), 2u);
  const std::string text = ablation_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), "Original,No LPR,No CER,\"No LPR, CER\"");
  for (const auto& r : rows) {
    for (double v : {r.original, r.no_lpr, r.no_cer, r.no_lpr_cer}) {
      EXPECT_GE(v, 0.25);
      EXPECT_LE(v, 1.0);
    }
  }
  const auto run = train_run(c, c.seeds[1]);
  gia::AttackConfig attack = c.attack;
  attack.toggles = {false, true};
  EXPECT_EQ(rows[1].no_lpr, attack_run(run, attack, c.seeds[1]).leak_accuracy);
}

}  // namespace
}  // namespace splitleak
