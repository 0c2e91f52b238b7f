#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitleak/rng.hpp"

namespace splitleak {
struct ExperimentConfig;
}

namespace splitleak::defense {

/// Gaussian gradient noise applied by the label owner before transmission.
struct NoiseConfig {
  double sigma = 0.0;  // per-element standard deviation
  std::uint64_t seed = 0;
};

/// grad + N(0, sigma^2) i.i.d. per element. sigma == 0 returns the input
/// unchanged and draws nothing from `rng`.
std::vector<double> perturb_gradient(std::span<const double> grad, const NoiseConfig& cfg, Rng& rng);

struct TradeoffRow {
  double sigma = 0.0;
  double test_accuracy = 0.0;
  double leak_accuracy = 0.0;
  std::uint64_t seed = 0;
};

/// For each sigma (in order) and each configured seed: split-train with the
/// defense, measure test accuracy, attack the last epoch with GIA in the
/// defense objective mode, and measure leak accuracy. Points run on up to
/// `threads` workers; results do not depend on the worker count.
std::vector<TradeoffRow> noise_sweep(std::span<const double> sigmas, const ExperimentConfig& config,
                                     unsigned threads = 1);

/// Reference noise scale: median per-record gradient norm of the last epoch
/// of an undefended run divided by sqrt(D_z).
double gradient_noise_scale(const ExperimentConfig& config, std::uint64_t seed);

/// CSV with header sigma,test_accuracy,leak_accuracy,seed.
std::string tradeoff_csv(std::span<const TradeoffRow> rows);

}  // namespace splitleak::defense
