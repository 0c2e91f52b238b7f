#include "splitleak/defense.hpp"

#include <algorithm>
#include <cmath>

#include "splitleak/csv.hpp"
#include "splitleak/error.hpp"
#include "splitleak/eval.hpp"
#include "splitleak/experiment.hpp"
#include "splitleak/parallel.hpp"

namespace splitleak::defense {

std::vector<double> perturb_gradient(std::span<const double> grad, const NoiseConfig& cfg, Rng& rng) {
  if (!(cfg.sigma >= 0.0) || !std::isfinite(cfg.sigma)) {
    throw InvalidArgument("perturb_gradient: sigma must be finite and non-negative");
  }
  std::vector<double> out(grad.begin(), grad.end());
  if (cfg.sigma == 0.0) return out;
  for (double& v : out) v += cfg.sigma * rng.normal();
  return out;
}

std::vector<TradeoffRow> noise_sweep(std::span<const double> sigmas, const ExperimentConfig& config,
                                     unsigned threads) {
  if (sigmas.empty()) throw InvalidArgument("noise_sweep: no sigmas");
  for (double s : sigmas) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("noise_sweep: sigma must be finite and >= 0");
  }
  config.validate();
  gia::AttackConfig attack = config.attack;
  attack.objective = gia::ObjectiveMode::kFullLossUnitLambdas;
  if (threads > 1) attack.threads = 1;

  const std::size_t n_seeds = config.seeds.size();
  std::vector<TradeoffRow> rows(sigmas.size() * n_seeds);
  parallel_for(0, rows.size(), threads, [&](std::size_t point) {
    const double sigma = sigmas[point / n_seeds];
    const std::uint64_t seed = config.seeds[point % n_seeds];
    const auto run = train_run(config, seed, NoiseConfig{sigma, 0});
    auto& row = rows[point];
    row.sigma = sigma;
    row.seed = seed;
    row.test_accuracy = run.heldout.size() > 0
                            ? eval::test_accuracy(run.split.f, run.split.g, run.heldout)
                            : 0.0;
    row.leak_accuracy = attack_run(run, attack, seed).leak_accuracy;
  });
  return rows;
}

double gradient_noise_scale(const ExperimentConfig& config, std::uint64_t seed) {
  ExperimentConfig clean = config;
  clean.noise.reset();
  const auto run = train_run(clean, seed);
  const auto& t = run.split.transcript;
  const auto slice = t.epoch_slice(t.last_epoch());
  std::vector<double> norms(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) {
    double sq = 0.0;
    for (double v : slice.grads.row(i)) sq += v * v;
    norms[i] = std::sqrt(sq);
  }
  const std::size_t mid = norms.size() / 2;
  std::nth_element(norms.begin(), norms.begin() + mid, norms.end());
  double median = norms[mid];
  if (norms.size() % 2 == 0) median = 0.5 * (median + *std::max_element(norms.begin(), norms.begin() + mid));
  return median / std::sqrt(static_cast<double>(slice.z.cols()));
}

std::string tradeoff_csv(std::span<const TradeoffRow> rows) {
  std::string out = "sigma,test_accuracy,leak_accuracy,seed\n";
  for (const auto& r : rows) {
    out += csv::real(r.sigma) + "," + csv::real(r.test_accuracy) + "," + csv::real(r.leak_accuracy) +
           "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

}  // namespace splitleak::defense
