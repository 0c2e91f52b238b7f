#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include "splitleak/csv.hpp"
#include "splitleak/error.hpp"
#include "splitleak/eval.hpp"
#include "splitleak/experiment.hpp"
#include "splitleak/normattack.hpp"
#include "splitleak/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace splitleak;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kIoError = 3, kProtocolAbort = 4 };

std::string read_text(const std::string& path) {
  const Bytes bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void ensure_parent(const std::string& path) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json format_versions() {
  return {{"wire", wire::kVersion}, {"transcript", 1}, {"dataset", 1}, {"model", 1}, {"config", 1}};
}

/// Every command leaves `<primary output>.manifest.json` next to its output.
void write_manifest(const std::string& primary, const std::string& command, json details) {
  details["command"] = command;
  details["formats"] = format_versions();
  write_text(primary + ".manifest.json", details.dump(2) + "\n");
}

json config_details(const ExperimentConfig& config) {
  return {{"config_hash", config_hash(config)}, {"config", to_text(config)}};
}

std::vector<std::string> csv_lines(const std::string& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() || lines.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw InvalidArgument(path + ": empty file");
  return lines;
}

std::vector<std::string> csv_rows(const std::string& path, const std::string& expected_header) {
  auto lines = csv_lines(path);
  if (lines.front() != expected_header) {
    throw InvalidArgument(path + ": expected header '" + expected_header + "'");
  }
  lines.erase(lines.begin());
  return lines;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  for (std::string item; std::getline(in, item, ',');) out.push_back(item);
  return out;
}

std::uint64_t to_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("bad " + what + " '" + s + "'");
}

using LabelMap = std::unordered_map<std::uint64_t, std::size_t>;

LabelMap read_truth(const std::string& path) {
  LabelMap out;
  for (const auto& row : csv_rows(path, "input_id,label")) {
    const auto f = split_commas(row);
    if (f.size() != 2) throw InvalidArgument(path + ": malformed row '" + row + "'");
    out[to_u64(f[0], "input id")] = to_u64(f[1], "label");
  }
  return out;
}

/// Attack output, or a truth-format file standing in for one.
std::pair<std::vector<std::uint64_t>, std::vector<std::size_t>> read_predictions(
    const std::string& path) {
  auto lines = csv_lines(path);
  const bool truth_format = lines.front() == "input_id,label";
  if (!truth_format && lines.front() != "input_id,predicted_label,max_confidence") {
    throw InvalidArgument(path + ": expected an attack result or truth CSV header");
  }
  std::vector<std::uint64_t> ids;
  std::vector<std::size_t> labels;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_commas(lines[i]);
    if (f.size() != (truth_format ? 2u : 3u)) {
      throw InvalidArgument(path + ": malformed row '" + lines[i] + "'");
    }
    ids.push_back(to_u64(f[0], "input id"));
    labels.push_back(to_u64(f[1], "label"));
  }
  return {ids, labels};
}

std::string truth_csv(const data::Dataset& ds) {
  std::string out = "input_id,label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += std::to_string(ds.ids[i]) + "," + std::to_string(ds.labels[i]) + "\n";
  }
  return out;
}

std::vector<double> parse_reals(const std::string& text) {
  std::vector<double> out;
  std::string normalized = text;
  for (char& c : normalized) {
    if (c == '\n' || c == '\r' || c == ' ' || c == '\t') c = ',';
  }
  for (const auto& item : split_commas(normalized)) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw InvalidArgument("");
    } catch (const std::exception&) {
      throw InvalidArgument("not a number: '" + item + "'");
    }
  }
  return out;
}

/// A file of weights or an inline comma list; weights are normalized.
data::LabelPrior parse_prior(const std::string& spec) {
  auto values = parse_reals(fs::is_regular_file(spec) ? read_text(spec) : spec);
  double sum = 0.0;
  for (double v : values) {
    if (!(v >= 0.0)) throw InvalidArgument("prior weights must be non-negative");
    sum += v;
  }
  if (values.size() < 2 || !(sum > 0.0)) throw InvalidArgument("prior needs at least two weights");
  for (double& v : values) v /= sum;
  return {ProbVector(std::move(values), 1e-9)};
}

std::string output_path(const ExperimentConfig& config, const std::string& name) {
  return (fs::path(config.output_dir) / name).string();
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string kind = "blobs";
  std::string out;
  std::size_t classes = 4, n = 2000, dim = 2;
  double spread = 0.5, positive_rate = 0.1, separation = 1.0;
  std::string images, labels;
  std::uint64_t seed = 0;
};

int gen_data(const GenDataArgs& a) {
  data::Dataset ds;
  if (a.kind == "blobs") {
    ds = data::generate_blobs(a.classes, a.n, a.dim, a.spread, a.seed);
  } else if (a.kind == "imbalanced") {
    ds = data::generate_imbalanced_binary(a.n, a.dim, a.positive_rate, a.seed, a.separation);
  } else {
    if (a.images.empty() || a.labels.empty()) {
      throw InvalidArgument("gen-data --kind idx needs --images and --labels");
    }
    ds = data::dataset_from_idx(data::parse_idx(read_file(a.images)),
                                data::parse_idx(read_file(a.labels)), a.classes);
  }
  ensure_parent(a.out);
  data::save_dataset(ds, a.out);
  write_manifest(a.out, "gen-data",
                 {{"kind", a.kind}, {"seed", a.seed}, {"n", ds.size()}, {"dim", ds.dim()},
                  {"classes", ds.num_classes}, {"spread", a.spread},
                  {"positive_rate", a.positive_rate}, {"separation", a.separation},
                  {"images", a.images}, {"labels", a.labels}});
  std::cout << "wrote " << ds.size() << " rows to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, transcript_out;
  std::optional<double> noise_sigma;
  std::optional<std::uint64_t> seed;
};

int train(const TrainArgs& a) {
  ExperimentConfig config = load_config(a.config);
  if (a.noise_sigma) config.noise = defense::NoiseConfig{*a.noise_sigma, 0};
  const std::uint64_t seed = a.seed.value_or(config.seeds.front());
  const auto run = train_run(config, seed);
  ensure_parent(a.transcript_out);
  save_transcript(run.split.transcript, a.transcript_out);
  const auto f_path = output_path(config, "f.model");
  const auto g_path = output_path(config, "g.model");
  const auto heldout_path = output_path(config, "heldout.ds");
  const auto truth_path = output_path(config, "truth.csv");
  ensure_parent(truth_path);
  nn::save_model(run.split.f, f_path);
  nn::save_model(run.split.g, g_path);
  data::save_dataset(run.heldout, heldout_path);
  write_text(truth_path, truth_csv(run.train));
  json details = config_details(config);
  details["seed"] = seed;
  details["outputs"] = {{"transcript", a.transcript_out}, {"f", f_path}, {"g", g_path},
                        {"heldout", heldout_path}, {"truth", truth_path}};
  write_manifest(a.transcript_out, "train", details);
  const double acc = run.heldout.size() > 0
                         ? eval::test_accuracy(run.split.f, run.split.g, run.heldout)
                         : 0.0;
  std::cout << "records " << run.split.transcript.records.size() << "  test_accuracy "
            << csv::real(acc) << "\n";
  return kOk;
}

struct AttackGiaArgs {
  std::string transcript, prior, config, out;
  std::optional<std::uint64_t> seed;
};

int attack_gia(const AttackGiaArgs& a) {
  const ExperimentConfig config = load_config(a.config);
  const std::uint64_t seed = a.seed.value_or(config.seeds.front());
  gia::AttackConfig attack = config.attack;
  attack.seed = RunSeeds::from(seed).attack;
  const auto transcript = load_transcript(a.transcript);
  const auto prior = parse_prior(a.prior);
  const auto result = gia::run_gia(transcript, prior, attack);
  write_text(a.out, gia::attack_csv(result));
  write_text(a.out + ".json", gia::attack_json(result));
  json details = config_details(config);
  details["seed"] = seed;
  details["transcript"] = a.transcript;
  details["prior"] = std::vector<double>(prior.probs.values().begin(), prior.probs.values().end());
  write_manifest(a.out, "attack-gia", details);
  std::cout << "best trial " << result.best_trial << "  objective "
            << csv::real(result.best_objective) << "\n";
  return kOk;
}

struct AttackNormArgs {
  std::string transcript, truth, out;
  std::optional<double> threshold;
  std::optional<std::uint32_t> epoch;
};

int attack_norm(const AttackNormArgs& a) {
  const auto transcript = load_transcript(a.transcript);
  const auto slice = transcript.epoch_slice(a.epoch.value_or(transcript.last_epoch()));
  normattack::NormAttackResult result;
  if (a.threshold) {
    result = normattack::threshold_attack(slice, *a.threshold);
  } else {
    if (a.truth.empty()) throw InvalidArgument("attack-norm needs --truth or --threshold");
    const auto truth = read_truth(a.truth);
    std::vector<std::size_t> aligned;
    for (auto id : slice.ids) {
      const auto it = truth.find(id);
      if (it == truth.end()) throw InvalidArgument("truth file lacks input id " + std::to_string(id));
      aligned.push_back(it->second);
    }
    result = normattack::norm_attack_best_threshold(slice, aligned);
  }
  write_text(a.out, normattack::norm_attack_csv(result));
  json details{{"transcript", a.transcript}, {"truth", a.truth}, {"threshold", result.threshold}};
  if (result.best_accuracy) details["best_accuracy"] = *result.best_accuracy;
  write_manifest(a.out, "attack-norm", details);
  std::cout << "threshold " << csv::real(result.threshold);
  if (result.best_accuracy) std::cout << "  accuracy " << csv::real(*result.best_accuracy);
  std::cout << "\n";
  return kOk;
}

struct EvalArgs {
  std::string pred, truth, models, heldout, prior, out;
};

int evaluate(const EvalArgs& a) {
  eval::MetricsReport report;
  json details;
  if (!a.pred.empty()) {
    if (a.truth.empty()) throw InvalidArgument("eval --pred needs --truth");
    const auto [ids, pred] = read_predictions(a.pred);
    const auto truth_map = read_truth(a.truth);
    std::vector<std::size_t> truth;
    for (auto id : ids) {
      const auto it = truth_map.find(id);
      if (it == truth_map.end()) throw InvalidArgument("truth file lacks input id " + std::to_string(id));
      truth.push_back(it->second);
    }
    report.leak_accuracy = eval::leak_accuracy(pred, truth);
    report.n_eval = ids.size();
    details["pred"] = a.pred;
    details["truth"] = a.truth;
  } else {
    if (a.models.empty() || a.heldout.empty()) {
      throw InvalidArgument("eval needs --pred/--truth or --models/--heldout");
    }
    const auto f = nn::load_model((fs::path(a.models) / "f.model").string());
    const auto g = nn::load_model((fs::path(a.models) / "g.model").string());
    const auto heldout = data::load_dataset(a.heldout);
    const auto prior = a.prior.empty() ? data::empirical_prior(heldout.labels, heldout.num_classes)
                                       : parse_prior(a.prior);
    report.test_accuracy = eval::test_accuracy(f, g, heldout);
    report.nce = eval::nce(f, g, heldout, prior);
    report.n_eval = heldout.size();
    details["models"] = a.models;
    details["heldout"] = a.heldout;
  }
  std::cout << report.to_table();
  if (!a.out.empty()) {
    write_text(a.out, report.to_json() + "\n");
    write_manifest(a.out, "eval", details);
  }
  return kOk;
}

struct SweepArgs {
  std::string config, sigmas, seeds, out;
  bool relative = false;
  unsigned threads = 0;
};

int sweep_noise(const SweepArgs& a) {
  ExperimentConfig config = load_config(a.config);
  if (!a.seeds.empty()) {
    config.seeds.clear();
    for (const auto& s : split_commas(a.seeds)) config.seeds.push_back(to_u64(s, "seed"));
  }
  auto sigmas = parse_reals(a.sigmas);
  if (sigmas.empty()) throw InvalidArgument("sweep-noise needs --sigmas");
  const unsigned threads = gia::resolve_threads(a.threads);
  json details = config_details(config);
  details["seeds"] = config.seeds;
  details["sigmas"] = sigmas;
  std::vector<defense::TradeoffRow> rows;
  if (a.relative) {
    // Each seed gets its own reference scale.
    json scales = json::object();
    ExperimentConfig one = config;
    for (auto seed : config.seeds) {
      const double scale = defense::gradient_noise_scale(config, seed);
      scales[std::to_string(seed)] = scale;
      std::vector<double> absolute;
      for (double s : sigmas) absolute.push_back(s * scale);
      one.seeds = {seed};
      for (auto& row : defense::noise_sweep(absolute, one, threads)) rows.push_back(row);
    }
    details["relative_scales"] = scales;
  } else {
    rows = defense::noise_sweep(sigmas, config, threads);
  }
  write_text(a.out, defense::tradeoff_csv(rows));
  write_manifest(a.out, "sweep-noise", details);
  std::cout << defense::tradeoff_csv(rows);
  return kOk;
}

struct AblationArgs {
  std::string config, out;
  unsigned threads = 0;
};

int run_ablation(const AblationArgs& a) {
  const ExperimentConfig config = load_config(a.config);
  const auto rows = ablation(config, gia::resolve_threads(a.threads));
  write_text(a.out, ablation_csv(rows));
  json details = config_details(config);
  details["seeds"] = config.seeds;
  write_manifest(a.out, "ablation", details);
  std::cout << ablation_csv(rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split-learning label leakage laboratory"};
  app.require_subcommand(1);
  std::function<int()> action;

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate or import a dataset");
  gen->add_option("--kind", gd.kind)->check(CLI::IsMember({"blobs", "imbalanced", "idx"}));
  gen->add_option("--out", gd.out)->required();
  gen->add_option("--classes", gd.classes);
  gen->add_option("--n", gd.n);
  gen->add_option("--dim", gd.dim);
  gen->add_option("--spread", gd.spread);
  gen->add_option("--positive-rate", gd.positive_rate);
  gen->add_option("--separation", gd.separation);
  gen->add_option("--images", gd.images);
  gen->add_option("--labels", gd.labels);
  gen->add_option("--seed", gd.seed);
  gen->callback([&] { action = [&] { return gen_data(gd); }; });

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Split-train and record the transcript");
  trn->add_option("--config", tr.config)->required();
  trn->add_option("--transcript-out", tr.transcript_out)->required();
  trn->add_option("--noise-sigma", tr.noise_sigma);
  trn->add_option("--seed", tr.seed);
  trn->callback([&] { action = [&] { return train(tr); }; });

  AttackGiaArgs ag;
  auto* gia_cmd = app.add_subcommand("attack-gia", "Gradient inversion label attack");
  gia_cmd->add_option("--transcript", ag.transcript)->required();
  gia_cmd->add_option("--prior", ag.prior, "Weights file or inline list, e.g. 1,1,1,1")->required();
  gia_cmd->add_option("--config", ag.config)->required();
  gia_cmd->add_option("--out", ag.out)->required();
  gia_cmd->add_option("--seed", ag.seed);
  gia_cmd->callback([&] { action = [&] { return attack_gia(ag); }; });

  AttackNormArgs an;
  auto* norm = app.add_subcommand("attack-norm", "Gradient-norm threshold attack (binary tasks)");
  norm->add_option("--transcript", an.transcript)->required();
  norm->add_option("--truth", an.truth);
  norm->add_option("--threshold", an.threshold);
  norm->add_option("--epoch", an.epoch);
  norm->add_option("--out", an.out)->required();
  norm->callback([&] { action = [&] { return attack_norm(an); }; });

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Leak accuracy or model utility");
  evl->add_option("--pred", ev.pred);
  evl->add_option("--truth", ev.truth);
  evl->add_option("--models", ev.models, "Directory holding f.model and g.model");
  evl->add_option("--heldout", ev.heldout);
  evl->add_option("--prior", ev.prior);
  evl->add_option("--out", ev.out);
  evl->callback([&] { action = [&] { return evaluate(ev); }; });

  SweepArgs sw;
  auto* swp = app.add_subcommand("sweep-noise", "Utility/privacy trade-off over noise levels");
  swp->add_option("--config", sw.config)->required();
  swp->add_option("--sigmas", sw.sigmas)->required();
  swp->add_option("--seeds", sw.seeds);
  swp->add_option("--out", sw.out)->required();
  swp->add_flag("--relative", sw.relative, "Sigmas are multiples of the gradient noise scale");
  swp->add_option("--threads", sw.threads);
  swp->callback([&] { action = [&] { return sweep_noise(sw); }; });

  AblationArgs ab;
  auto* abl = app.add_subcommand("ablation", "Leak accuracy with regularizers removed");
  abl->add_option("--config", ab.config)->required();
  abl->add_option("--out", ab.out)->required();
  abl->add_option("--threads", ab.threads);
  abl->callback([&] { action = [&] { return run_ablation(ab); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    return action();
  } catch (const ProtocolAbort& e) {
    std::cerr << "error: protocol aborted: " << e.what() << "\n";
    return kProtocolAbort;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const DecodeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const IdxParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
