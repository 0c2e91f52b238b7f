#include "splitleak/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <unordered_map>

#include "splitleak/csv.hpp"
#include "splitleak/error.hpp"
#include "splitleak/eval.hpp"
#include "splitleak/parallel.hpp"

namespace splitleak {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw InvalidArgument("config: " + key + " = '" + value + "' is not " + want);
}

template <class T>
T parse_int(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "a non-negative integer");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  bad_value(key, value, "a number");
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::stringstream in(value);
  for (std::string item; std::getline(in, item, ',');) parts.push_back(trim(item));
  return parts;
}

template <class T>
std::vector<T> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  if (trim(value).empty()) return out;
  for (const auto& item : split_list(value)) out.push_back(parse_int<T>(key, item));
  return out;
}

gia::Range parse_range(const std::string& key, const std::string& value) {
  const auto parts = split_list(value);
  if (parts.size() != 2) bad_value(key, value, "a 'lo,hi' pair");
  return {parse_real(key, parts[0]), parse_real(key, parts[1])};
}

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

const char* kind_name(DatasetSpec::Kind k) {
  switch (k) {
    case DatasetSpec::Kind::kBlobs: return "blobs";
    case DatasetSpec::Kind::kImbalanced: return "imbalanced";
    case DatasetSpec::Kind::kIdx: return "idx";
    case DatasetSpec::Kind::kFile: return "file";
  }
  return "blobs";
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["dataset.kind"] = [](auto& c, auto& k, auto& v) {
      static const std::map<std::string, DatasetSpec::Kind> kinds{
          {"blobs", DatasetSpec::Kind::kBlobs},
          {"imbalanced", DatasetSpec::Kind::kImbalanced},
          {"idx", DatasetSpec::Kind::kIdx},
          {"file", DatasetSpec::Kind::kFile}};
      const auto it = kinds.find(v);
      if (it == kinds.end()) bad_value(k, v, "one of blobs, imbalanced, idx, file");
      c.dataset.kind = it->second;
    };
    t["dataset.classes"] = [](auto& c, auto& k, auto& v) { c.dataset.num_classes = parse_int<std::size_t>(k, v); };
    t["dataset.train_size"] = [](auto& c, auto& k, auto& v) { c.dataset.train_size = parse_int<std::size_t>(k, v); };
    t["dataset.heldout_size"] = [](auto& c, auto& k, auto& v) { c.dataset.heldout_size = parse_int<std::size_t>(k, v); };
    t["dataset.dim"] = [](auto& c, auto& k, auto& v) { c.dataset.dim = parse_int<std::size_t>(k, v); };
    t["dataset.spread"] = [](auto& c, auto& k, auto& v) { c.dataset.spread = parse_real(k, v); };
    t["dataset.positive_rate"] = [](auto& c, auto& k, auto& v) { c.dataset.positive_rate = parse_real(k, v); };
    t["dataset.separation"] = [](auto& c, auto& k, auto& v) { c.dataset.separation = parse_real(k, v); };
    t["dataset.images"] = [](auto& c, auto&, auto& v) { c.dataset.images = v; };
    t["dataset.labels"] = [](auto& c, auto&, auto& v) { c.dataset.labels = v; };
    t["dataset.path"] = [](auto& c, auto&, auto& v) { c.dataset.path = v; };
    t["model.f"] = [](auto& c, auto& k, auto& v) { c.f_dims = parse_int_list<std::size_t>(k, v); };
    t["model.g"] = [](auto& c, auto& k, auto& v) { c.g_dims = parse_int_list<std::size_t>(k, v); };
    t["train.epochs"] = [](auto& c, auto& k, auto& v) { c.train.epochs = parse_int<std::size_t>(k, v); };
    t["train.batch_size"] = [](auto& c, auto& k, auto& v) { c.train.batch_size = parse_int<std::size_t>(k, v); };
    t["train.lr"] = [](auto& c, auto& k, auto& v) { c.train.optimizer.lr = parse_real(k, v); };
    t["train.optimizer"] = [](auto& c, auto& k, auto& v) {
      if (v == "adam") c.train.optimizer.kind = protocol::OptimizerConfig::Kind::kAdam;
      else if (v == "sgd") c.train.optimizer.kind = protocol::OptimizerConfig::Kind::kSgd;
      else bad_value(k, v, "adam or sgd");
    };
    t["train.transport"] = [](auto& c, auto& k, auto& v) {
      if (v == "inprocess") c.transport = protocol::TransportKind::kInProcess;
      else if (v == "socket") c.transport = protocol::TransportKind::kSocket;
      else bad_value(k, v, "inprocess or socket");
    };
    t["attack.n_outer"] = [](auto& c, auto& k, auto& v) { c.attack.n_outer = parse_int<std::size_t>(k, v); };
    t["attack.inner_epochs"] = [](auto& c, auto& k, auto& v) { c.attack.inner_epochs = parse_int<std::size_t>(k, v); };
    t["attack.inner_batch"] = [](auto& c, auto& k, auto& v) { c.attack.inner_batch = parse_int<std::size_t>(k, v); };
    t["attack.min_rel_improvement"] = [](auto& c, auto& k, auto& v) { c.attack.min_rel_improvement = parse_real(k, v); };
    t["attack.patience"] = [](auto& c, auto& k, auto& v) { c.attack.patience = parse_int<std::size_t>(k, v); };
    t["attack.surrogate_hidden"] = [](auto& c, auto& k, auto& v) { c.attack.surrogate_hidden = parse_int_list<std::size_t>(k, v); };
    t["attack.lambda_ce"] = [](auto& c, auto& k, auto& v) { c.attack.ranges.lambda_ce = parse_range(k, v); };
    t["attack.lambda_p"] = [](auto& c, auto& k, auto& v) { c.attack.ranges.lambda_p = parse_range(k, v); };
    t["attack.eta_g"] = [](auto& c, auto& k, auto& v) { c.attack.ranges.eta_g = parse_range(k, v); };
    t["attack.eta_y"] = [](auto& c, auto& k, auto& v) { c.attack.ranges.eta_y = parse_range(k, v); };
    t["attack.use_lpr"] = [](auto& c, auto& k, auto& v) { c.attack.toggles.use_lpr = parse_bool(k, v); };
    t["attack.use_cer"] = [](auto& c, auto& k, auto& v) { c.attack.toggles.use_cer = parse_bool(k, v); };
    t["attack.objective"] = [](auto& c, auto& k, auto& v) {
      if (v == "grad_loss") c.attack.objective = gia::ObjectiveMode::kGradLoss;
      else if (v == "full_loss") c.attack.objective = gia::ObjectiveMode::kFullLossUnitLambdas;
      else bad_value(k, v, "grad_loss or full_loss");
    };
    t["attack.prior_mode"] = [](auto& c, auto& k, auto& v) {
      if (v == "batch") c.attack.prior_mode = gia::PriorMode::kBatch;
      else if (v == "full_set") c.attack.prior_mode = gia::PriorMode::kFullSet;
      else bad_value(k, v, "batch or full_set");
    };
    t["attack.y_init_std"] = [](auto& c, auto& k, auto& v) { c.attack.y_init_std = parse_real(k, v); };
    t["attack.epoch"] = [](auto& c, auto& k, auto& v) {
      if (v == "last") c.attack.epoch.reset();
      else c.attack.epoch = parse_int<std::uint32_t>(k, v);
    };
    t["attack.threads"] = [](auto& c, auto& k, auto& v) { c.attack.threads = parse_int<unsigned>(k, v); };
    t["noise.sigma"] = [](auto& c, auto& k, auto& v) {
      if (v == "none") c.noise.reset();
      else c.noise = defense::NoiseConfig{parse_real(k, v), 0};
    };
    t["seeds"] = [](auto& c, auto& k, auto& v) { c.seeds = parse_int_list<std::uint64_t>(k, v); };
    t["output_dir"] = [](auto& c, auto&, auto& v) { c.output_dir = v; };
    return t;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (f_dims.size() < 2 || g_dims.size() < 2) {
    throw InvalidArgument("config: model.f and model.g need at least two dims");
  }
  if (std::find(f_dims.begin(), f_dims.end(), 0) != f_dims.end() ||
      std::find(g_dims.begin(), g_dims.end(), 0) != g_dims.end()) {
    throw InvalidArgument("config: zero-width layer");
  }
  if (f_dims.back() != g_dims.front()) {
    throw InvalidArgument("config: f output dim " + std::to_string(f_dims.back()) +
                          " does not match g input dim " + std::to_string(g_dims.front()));
  }
  const bool generated =
      dataset.kind == DatasetSpec::Kind::kBlobs || dataset.kind == DatasetSpec::Kind::kImbalanced;
  if (generated && f_dims.front() != dataset.dim) {
    throw InvalidArgument("config: f input dim does not match dataset.dim");
  }
  const std::size_t classes =
      dataset.kind == DatasetSpec::Kind::kImbalanced ? 2 : dataset.num_classes;
  if (classes < 2) throw InvalidArgument("config: need at least two classes");
  if (generated && g_dims.back() != classes) {
    throw InvalidArgument("config: g output dim does not match the class count");
  }
  if (dataset.train_size == 0) throw InvalidArgument("config: dataset.train_size is zero");
  if (dataset.kind == DatasetSpec::Kind::kIdx && (dataset.images.empty() || dataset.labels.empty())) {
    throw InvalidArgument("config: idx datasets need dataset.images and dataset.labels");
  }
  if (dataset.kind == DatasetSpec::Kind::kFile && dataset.path.empty()) {
    throw InvalidArgument("config: file datasets need dataset.path");
  }
  if (train.epochs == 0 || train.batch_size == 0) {
    throw InvalidArgument("config: train.epochs and train.batch_size must be positive");
  }
  if (!(train.optimizer.lr > 0.0)) throw InvalidArgument("config: train.lr must be positive");
  if (noise && !(noise->sigma >= 0.0)) throw InvalidArgument("config: noise.sigma is negative");
  if (seeds.empty()) throw InvalidArgument("config: seeds is empty");
  attack.validate();
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second(config, key, value);
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  const Bytes bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream out;
  auto put = [&](const char* key, const std::string& value) { out << key << " = " << value << '\n'; };
  auto range = [](const gia::Range& r) { return exact(r.lo) + "," + exact(r.hi); };
  const auto& a = c.attack;
  put("dataset.kind", kind_name(c.dataset.kind));
  put("dataset.classes", std::to_string(c.dataset.num_classes));
  put("dataset.train_size", std::to_string(c.dataset.train_size));
  put("dataset.heldout_size", std::to_string(c.dataset.heldout_size));
  put("dataset.dim", std::to_string(c.dataset.dim));
  put("dataset.spread", exact(c.dataset.spread));
  put("dataset.positive_rate", exact(c.dataset.positive_rate));
  put("dataset.separation", exact(c.dataset.separation));
  put("dataset.images", c.dataset.images);
  put("dataset.labels", c.dataset.labels);
  put("dataset.path", c.dataset.path);
  put("model.f", join(c.f_dims));
  put("model.g", join(c.g_dims));
  put("train.epochs", std::to_string(c.train.epochs));
  put("train.batch_size", std::to_string(c.train.batch_size));
  put("train.lr", exact(c.train.optimizer.lr));
  put("train.optimizer",
      c.train.optimizer.kind == protocol::OptimizerConfig::Kind::kAdam ? "adam" : "sgd");
  put("train.transport", c.transport == protocol::TransportKind::kSocket ? "socket" : "inprocess");
  put("attack.n_outer", std::to_string(a.n_outer));
  put("attack.inner_epochs", std::to_string(a.inner_epochs));
  put("attack.inner_batch", std::to_string(a.inner_batch));
  put("attack.min_rel_improvement", exact(a.min_rel_improvement));
  put("attack.patience", std::to_string(a.patience));
  put("attack.surrogate_hidden", join(a.surrogate_hidden));
  put("attack.lambda_ce", range(a.ranges.lambda_ce));
  put("attack.lambda_p", range(a.ranges.lambda_p));
  put("attack.eta_g", range(a.ranges.eta_g));
  put("attack.eta_y", range(a.ranges.eta_y));
  put("attack.use_lpr", a.toggles.use_lpr ? "true" : "false");
  put("attack.use_cer", a.toggles.use_cer ? "true" : "false");
  put("attack.objective", a.objective == gia::ObjectiveMode::kGradLoss ? "grad_loss" : "full_loss");
  put("attack.prior_mode", a.prior_mode == gia::PriorMode::kBatch ? "batch" : "full_set");
  put("attack.y_init_std", exact(a.y_init_std));
  put("attack.epoch", a.epoch ? std::to_string(*a.epoch) : "last");
  put("attack.threads", std::to_string(a.threads));
  put("noise.sigma", c.noise ? exact(c.noise->sigma) : "none");
  put("seeds", join(c.seeds));
  put("output_dir", c.output_dir);
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

RunSeeds RunSeeds::from(std::uint64_t seed) {
  return {Rng::derive_seed(seed, 0), Rng::derive_seed(seed, 1), Rng::derive_seed(seed, 2),
          Rng::derive_seed(seed, 3), Rng::derive_seed(seed, 4)};
}

std::pair<data::Dataset, data::Dataset> build_datasets(const ExperimentConfig& config,
                                                       std::uint64_t seed) {
  const auto& spec = config.dataset;
  const std::uint64_t data_seed = RunSeeds::from(seed).data;
  const std::size_t total = spec.train_size + spec.heldout_size;
  data::Dataset all;
  switch (spec.kind) {
    case DatasetSpec::Kind::kBlobs:
      all = data::generate_blobs(spec.num_classes, total, spec.dim, spec.spread, data_seed);
      break;
    case DatasetSpec::Kind::kImbalanced:
      all = data::generate_imbalanced_binary(total, spec.dim, spec.positive_rate, data_seed,
                                             spec.separation);
      break;
    case DatasetSpec::Kind::kIdx:
      all = data::dataset_from_idx(data::parse_idx(read_file(spec.images)),
                                   data::parse_idx(read_file(spec.labels)), spec.num_classes);
      break;
    case DatasetSpec::Kind::kFile:
      all = data::load_dataset(spec.path);
      break;
  }
  return data::split_at(all, std::min(spec.train_size, all.size()));
}

TrainedRun train_run(const ExperimentConfig& config, std::uint64_t seed,
                     std::optional<defense::NoiseConfig> noise_override) {
  config.validate();
  const RunSeeds seeds = RunSeeds::from(seed);
  auto [train, heldout] = build_datasets(config, seed);
  if (train.dim() != config.f_dims.front()) {
    throw InvalidArgument("config: dataset has dim " + std::to_string(train.dim()) +
                          " but f expects " + std::to_string(config.f_dims.front()));
  }
  if (train.num_classes != config.g_dims.back()) {
    throw InvalidArgument("config: dataset has " + std::to_string(train.num_classes) +
                          " classes but g outputs " + std::to_string(config.g_dims.back()));
  }
  Rng init(seeds.init);
  const auto f = nn::MlpModel::glorot(config.f_dims, init);
  const auto g = nn::MlpModel::glorot(config.g_dims, init);
  protocol::TrainConfig tc = config.train;
  tc.seed = seeds.train;
  auto noise = noise_override ? noise_override : config.noise;
  if (noise) noise->seed = seeds.noise;
  auto split = protocol::split_train(f, g, train, tc, noise, config.transport);
  return {std::move(train), std::move(heldout), std::move(split)};
}

std::vector<std::size_t> labels_for(const data::Dataset& ds, std::span<const std::uint64_t> ids) {
  std::unordered_map<std::uint64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < ds.size(); ++i) by_id.emplace(ds.ids[i], ds.labels[i]);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidArgument("labels_for: unknown input id " + std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

AttackOutcome attack_run(const TrainedRun& run, const gia::AttackConfig& attack, std::uint64_t seed) {
  gia::AttackConfig cfg = attack;
  cfg.seed = RunSeeds::from(seed).attack;
  const auto prior = data::empirical_prior(run.train.labels, run.train.num_classes);
  AttackOutcome out;
  out.result = gia::run_gia(run.split.transcript, prior, cfg);
  out.leak_accuracy = eval::leak_accuracy(out.result.labels, labels_for(run.train, out.result.ids),
                                          run.train.num_classes);
  return out;
}

std::vector<AblationRow> ablation(const ExperimentConfig& config, unsigned threads) {
  config.validate();
  struct Setting {
    bool lpr, cer;
  };
  constexpr Setting kSettings[] = {{true, true}, {false, true}, {true, false}, {false, false}};
  const std::size_t n_seeds = config.seeds.size();
  std::vector<TrainedRun> runs(n_seeds);
  parallel_for(0, n_seeds, threads, [&](std::size_t s) { runs[s] = train_run(config, config.seeds[s]); });

  std::vector<double> acc(n_seeds * 4);
  parallel_for(0, acc.size(), threads, [&](std::size_t point) {
    const std::size_t s = point / 4;
    gia::AttackConfig attack = config.attack;
    attack.toggles = {kSettings[point % 4].lpr, kSettings[point % 4].cer};
    if (threads > 1) attack.threads = 1;
    acc[point] = attack_run(runs[s], attack, config.seeds[s]).leak_accuracy;
  });

  std::vector<AblationRow> rows(n_seeds);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    rows[s] = {config.seeds[s], acc[4 * s], acc[4 * s + 1], acc[4 * s + 2], acc[4 * s + 3]};
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = csv::field("Original") + "," + csv::field("No LPR") + "," + csv::field("No CER") +
                    "," + csv::field("No LPR, CER") + "\n";
  for (const auto& r : rows) {
    out += csv::real(r.original) + "," + csv::real(r.no_lpr) + "," + csv::real(r.no_cer) + "," +
           csv::real(r.no_lpr_cer) + "\n";
  }
  return out;
}

}  // namespace splitleak
