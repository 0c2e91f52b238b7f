#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "splitleak/data.hpp"
#include "splitleak/defense.hpp"
#include "splitleak/gia.hpp"
#include "splitleak/protocol.hpp"

namespace splitleak {

struct DatasetSpec {
  enum class Kind { kBlobs, kImbalanced, kIdx, kFile };
  Kind kind = Kind::kBlobs;
  std::size_t num_classes = 4;
  std::size_t train_size = 2000;
  std::size_t heldout_size = 500;
  std::size_t dim = 2;
  double spread = 0.5;          // blobs
  double positive_rate = 0.1;   // imbalanced
  double separation = 1.0;      // imbalanced
  std::string images;           // idx image file
  std::string labels;           // idx label file
  std::string path;             // dataset container written by gen-data
};

/// Everything needed to reproduce a train/attack run from a seed.
///
/// Text form is one `key = value` per line; `#` starts a comment. Lists are
/// comma separated. Unknown keys are rejected.
struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<std::size_t> f_dims{2, 16, 8};
  std::vector<std::size_t> g_dims{8, 4};
  protocol::TrainConfig train;
  protocol::TransportKind transport = protocol::TransportKind::kInProcess;
  gia::AttackConfig attack;
  std::optional<defense::NoiseConfig> noise;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = ".";

  /// Dims chain, class count matches g's output, and the attack config is valid.
  void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);
/// FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Independent streams for one experiment seed.
struct RunSeeds {
  std::uint64_t data, init, train, noise, attack;
  static RunSeeds from(std::uint64_t seed);
};

/// Training and held-out data. Generated kinds draw train_size + heldout_size
/// rows and split them in that order.
std::pair<data::Dataset, data::Dataset> build_datasets(const ExperimentConfig& config,
                                                       std::uint64_t seed);

struct TrainedRun {
  data::Dataset train;
  data::Dataset heldout;
  protocol::SplitResult split;
};

/// Glorot-initialized f and g, then split training with the configured noise
/// (or `noise_override` when given).
TrainedRun train_run(const ExperimentConfig& config, std::uint64_t seed,
                     std::optional<defense::NoiseConfig> noise_override = std::nullopt);

/// True labels aligned with `ids`.
std::vector<std::size_t> labels_for(const data::Dataset& ds, std::span<const std::uint64_t> ids);

struct AttackOutcome {
  gia::AttackResult result;
  double leak_accuracy = 0.0;
};

/// GIA on the run's transcript with the empirical training prior.
AttackOutcome attack_run(const TrainedRun& run, const gia::AttackConfig& attack,
                         std::uint64_t seed);

struct AblationRow {
  std::uint64_t seed = 0;
  double original = 0.0;
  double no_lpr = 0.0;
  double no_cer = 0.0;
  double no_lpr_cer = 0.0;
};

/// One trained run per seed, attacked with each regularizer setting.
std::vector<AblationRow> ablation(const ExperimentConfig& config, unsigned threads = 1);

/// Header: Original,No LPR,No CER,"No LPR, CER". One row per seed.
std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace splitleak
