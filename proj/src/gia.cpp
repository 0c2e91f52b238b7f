#include "splitleak/gia.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "splitleak/csv.hpp"
#include "splitleak/error.hpp"
#include "splitleak/parallel.hpp"
#include "splitleak/numerics.hpp"

namespace splitleak::gia {
namespace {

constexpr double kNormFloor = 1e-12;

Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) detail::softmax_inplace(out.row(i));
  return out;
}

double gradient_match(const nn::MlpModel& g_prime, const Matrix& y_prime, const GradientSet& slice) {
  const auto replay = replay_forward_backward(g_prime, slice.z, y_prime);
  double total = 0.0;
  for (std::size_t i = 0; i < slice.size(); ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < slice.grads.cols(); ++k) {
      const double d = slice.grads(i, k) - replay.grads(i, k);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(slice.size());
}

void add_scaled(nn::ParamGrads& acc, const nn::ParamGrads& g, double scale) {
  for (std::size_t l = 0; l < acc.size(); ++l) {
    auto aw = acc[l].weight.values();
    const auto gw = g[l].weight.values();
    for (std::size_t k = 0; k < aw.size(); ++k) aw[k] += scale * gw[k];
    for (std::size_t k = 0; k < acc[l].bias.size(); ++k) acc[l].bias[k] += scale * g[l].bias[k];
  }
}

double log_uniform(Range r, Rng& rng) {
  return std::exp(rng.uniform(std::log(r.lo), std::log(r.hi)));
}

void check_range(Range r, const char* name) {
  if (!(r.lo > 0.0) || !(r.hi >= r.lo) || !std::isfinite(r.hi)) {
    throw InvalidArgument(std::string("search range for ") + name +
                          " must satisfy 0 < lo <= hi < inf");
  }
}

double prior_entropy(const LabelPrior& prior) {
  const double h = entropy(prior.probs);
  if (!(h > 0.0)) {
    throw InvalidArgument("label prior has zero entropy; the cross-entropy normalization is undefined");
  }
  return h;
}

}  // namespace

RowAdam::RowAdam(std::size_t rows, std::size_t cols, nn::AdamConfig config)
    : config_(config), first_(rows, cols), second_(rows, cols), steps_(rows, 0) {}

void RowAdam::update(Matrix& params, std::span<const std::size_t> rows, const Matrix& grads,
                     double lr) {
  if (params.rows() != first_.rows() || params.cols() != first_.cols() ||
      grads.rows() != rows.size() || grads.cols() != params.cols()) {
    throw InvalidArgument("RowAdam::update: shape mismatch");
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const std::size_t r = rows[b];
    const auto t = static_cast<double>(++steps_.at(r));
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (std::size_t k = 0; k < params.cols(); ++k) {
      const double g = grads(b, k);
      first_(r, k) = b1 * first_(r, k) + (1.0 - b1) * g;
      second_(r, k) = b2 * second_(r, k) + (1.0 - b2) * g * g;
      params(r, k) -= lr * (first_(r, k) / c1) / (std::sqrt(second_(r, k) / c2) + config_.epsilon);
    }
  }
}

SurrogateState SurrogateState::make(nn::MlpModel g_prime, Matrix y_hat) {
  SurrogateState s;
  s.g_adam = nn::AdamState::for_model(g_prime);
  s.y_adam = RowAdam(y_hat.rows(), y_hat.cols());
  s.g_prime = std::move(g_prime);
  s.y_hat = std::move(y_hat);
  return s;
}

Matrix SurrogateState::y_prime() const { return softmax_rows(y_hat); }

void SearchRanges::validate() const {
  check_range(lambda_ce, "lambda_ce");
  check_range(lambda_p, "lambda_p");
  check_range(eta_g, "eta_g");
  check_range(eta_y, "eta_y");
}

GiaHyperParams RandomSearch::propose(std::size_t, Rng& rng) {
  GiaHyperParams hp;
  hp.lambda_ce = log_uniform(ranges_.lambda_ce, rng);
  hp.lambda_p = log_uniform(ranges_.lambda_p, rng);
  hp.eta_g = log_uniform(ranges_.eta_g, rng);
  hp.eta_y = log_uniform(ranges_.eta_y, rng);
  return hp;
}

void AttackConfig::validate() const {
  if (n_outer == 0 || inner_epochs == 0 || inner_batch == 0 || patience == 0) {
    throw InvalidArgument(
        "attack config: n_outer, inner_epochs, inner_batch and patience must be positive");
  }
  if (!(min_rel_improvement >= 0.0)) throw InvalidArgument("attack config: negative min_rel_improvement");
  if (!(y_init_std >= 0.0)) throw InvalidArgument("attack config: negative y_init_std");
  for (auto w : surrogate_hidden) {
    if (w == 0) throw InvalidArgument("attack config: zero-width surrogate layer");
  }
  ranges.validate();
}

Replay replay_forward_backward(const nn::MlpModel& g_prime, const Matrix& z, const Matrix& y_prime) {
  if (z.cols() != g_prime.input_dim()) {
    throw InvalidArgument("replay: embedding dim " + std::to_string(z.cols()) +
                          " does not match surrogate input dim " +
                          std::to_string(g_prime.input_dim()));
  }
  if (y_prime.rows() != z.rows() || y_prime.cols() != g_prime.output_dim()) {
    throw InvalidArgument("replay: soft labels must be [n x K] matching the embeddings");
  }
  const nn::BackwardTape tape(g_prime, z, y_prime);
  return {tape.probs(), tape.result().grads.input_grads};
}

GiaLoss gia_loss(const SurrogateState& state, const GradientSet& slice,
                 std::span<const std::size_t> rows, const LabelPrior& prior,
                 const GiaHyperParams& hp, RegularizerToggles toggles, PriorMode prior_mode) {
  const double h_prior = prior_entropy(prior);
  const std::size_t n = slice.size();
  const std::size_t K = prior.num_classes();
  if (state.y_hat.rows() != n || state.y_hat.cols() != K || state.g_prime.output_dim() != K) {
    throw InvalidArgument("gia_loss: surrogate state does not match the slice and prior (" +
                          std::to_string(state.y_hat.rows()) + "x" +
                          std::to_string(state.y_hat.cols()) + " labels for " + std::to_string(n) +
                          " records, " + std::to_string(K) + " classes)");
  }
  if (slice.z.cols() != state.g_prime.input_dim()) {
    throw InvalidArgument("gia_loss: embedding dim does not match surrogate input dim");
  }
  if (rows.empty()) throw InvalidArgument("gia_loss: empty batch");
  for (auto r : rows) {
    if (r >= n) throw InvalidArgument("gia_loss: batch row out of range");
  }

  const std::size_t m = rows.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  const Matrix z = slice.z.gather_rows(rows);
  const Matrix target = slice.grads.gather_rows(rows);
  const Matrix y_prime = softmax_rows(state.y_hat.gather_rows(rows));
  const nn::BackwardTape tape(state.g_prime, z, y_prime);
  const auto& bw = tape.result();
  const Matrix& replayed = bw.grads.input_grads;

  GiaLoss out;
  Matrix cotangent(m, z.cols());
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < z.cols(); ++k) {
      const double d = target(i, k) - replayed(i, k);
      sq += d * d;
    }
    const double norm = std::sqrt(sq);
    out.grad_match += norm;
    // The norm is not differentiable at zero; a matched record contributes nothing.
    if (norm < kNormFloor) continue;
    for (std::size_t k = 0; k < z.cols(); ++k) {
      cotangent(i, k) = -(target(i, k) - replayed(i, k)) * inv_m / norm;
    }
  }
  out.grad_match *= inv_m;
  out.value = out.grad_match;

  auto second = tape.grad_of_input_grad(cotangent);
  out.param_grads = std::move(second.param_grads);
  Matrix dy = std::move(second.target_grads);

  if (toggles.use_cer) {
    out.cer = bw.loss / h_prior;
    out.value += hp.lambda_ce * out.cer;
    const double scale = hp.lambda_ce / h_prior;
    add_scaled(out.param_grads, bw.grads.param_grads, scale);
    const Matrix& logits = tape.logits();
    std::vector<double> log_p(K);
    for (std::size_t i = 0; i < m; ++i) {
      detail::log_softmax_into(logits.row(i), log_p);
      for (std::size_t k = 0; k < K; ++k) dy(i, k) -= scale * inv_m * log_p[k];
    }
  }

  if (toggles.use_lpr) {
    std::vector<double> mean(K, 0.0);
    double weight = inv_m;
    if (prior_mode == PriorMode::kFullSet) {
      const Matrix all = softmax_rows(state.y_hat);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < K; ++k) mean[k] += all(i, k);
      weight = 1.0 / static_cast<double>(n);
    } else {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < K; ++k) mean[k] += y_prime(i, k);
    }
    for (double& v : mean) v = std::max(v * weight, kLogClip);
    double kl = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = prior.probs[k];
      if (p > 0.0) kl += p * std::log(p / mean[k]);
    }
    out.lpr = kl;
    out.value += hp.lambda_p * out.lpr;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < K; ++k) dy(i, k) -= hp.lambda_p * weight * prior.probs[k] / mean[k];
  }

  out.y_hat_grads = Matrix(m, K);
  for (std::size_t i = 0; i < m; ++i) {
    detail::softmax_vjp(y_prime.row(i), dy.row(i), out.y_hat_grads.row(i));
  }
  return out;
}

SurrogateState initial_state(const GradientSet& slice, std::size_t num_classes,
                             const AttackConfig& config, Rng& rng) {
  std::vector<std::size_t> dims{slice.z.cols()};
  dims.insert(dims.end(), config.surrogate_hidden.begin(), config.surrogate_hidden.end());
  dims.push_back(num_classes);
  auto g_prime = nn::MlpModel::glorot(dims, rng);
  Matrix y_hat(slice.size(), num_classes);
  for (double& v : y_hat.values()) v = rng.normal(0.0, config.y_init_std);
  return SurrogateState::make(std::move(g_prime), std::move(y_hat));
}

InnerResult inner_train(SurrogateState state, const GradientSet& slice, const LabelPrior& prior,
                        const GiaHyperParams& hp, const AttackConfig& config, Rng& rng) {
  config.validate();
  if (slice.size() == 0) throw InvalidArgument("inner_train: empty transcript slice");
  const std::size_t n = slice.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  InnerResult result;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += config.inner_batch) {
      const std::size_t stop = std::min(n, start + config.inner_batch);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const auto loss = gia_loss(state, slice, batch, prior, hp, config.toggles, config.prior_mode);
      total += loss.value * static_cast<double>(batch.size());
      nn::adam_step(state.g_prime, loss.param_grads, state.g_adam, hp.eta_g);
      state.y_adam.update(state.y_hat, batch, loss.y_hat_grads, hp.eta_y);
    }
    const double mean = total / static_cast<double>(n);
    result.epoch_losses.push_back(mean);
    if (!std::isfinite(mean)) break;
    if (epoch == 0 || best - mean >= config.min_rel_improvement * std::abs(best)) {
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
    best = std::min(best, mean);
  }
  result.grad_loss = gradient_match(state.g_prime, state.y_prime(), slice);
  result.state = std::move(state);
  return result;
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPLITLEAK_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

AttackResult run_gia(const Transcript& transcript, const LabelPrior& prior,
                     const AttackConfig& config, SearchStrategy* strategy) {
  config.validate();
  if (transcript.records.empty()) throw InvalidArgument("run_gia: empty transcript");
  transcript.validate();
  prior_entropy(prior);
  const std::uint32_t epoch = config.epoch.value_or(transcript.last_epoch());
  const GradientSet slice = transcript.epoch_slice(epoch);
  if (slice.size() == 0) {
    throw InvalidArgument("run_gia: transcript has no records for epoch " + std::to_string(epoch));
  }

  RandomSearch fallback(config.ranges);
  if (strategy == nullptr) strategy = &fallback;
  const unsigned threads = std::min<std::size_t>(resolve_threads(config.threads), config.n_outer);

  AttackResult result;
  result.ids = slice.ids;
  result.trace.resize(config.n_outer);
  double best = std::numeric_limits<double>::infinity();
  bool have_best = false;

  for (std::size_t wave = 0; wave < config.n_outer; wave += threads) {
    const std::size_t wave_end = std::min(config.n_outer, wave + threads);
    for (std::size_t t = wave; t < wave_end; ++t) {
      Rng proposal_rng(Rng::derive_seed(config.seed, 2 * t));
      result.trace[t].hp = strategy->propose(t, proposal_rng);
    }

    std::vector<Matrix> outcomes(wave_end - wave);
    parallel_for(wave, wave_end, threads, [&](std::size_t t) {
      Rng rng(Rng::derive_seed(config.seed, 2 * t + 1));
      const auto& hp = result.trace[t].hp;
      SurrogateState init = config.init_hook ? config.init_hook(slice, rng)
                                             : initial_state(slice, prior.num_classes(), config, rng);
      auto inner = inner_train(std::move(init), slice, prior, hp, config, rng);
      auto& rec = result.trace[t];
      rec.grad_loss = inner.grad_loss;
      rec.epochs_run = inner.epoch_losses.size();
      if (config.objective == ObjectiveMode::kGradLoss) {
        rec.objective = inner.grad_loss;
      } else {
        GiaHyperParams unit = hp;
        unit.lambda_ce = 1.0;
        unit.lambda_p = 1.0;
        std::vector<std::size_t> all(slice.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        rec.objective =
            gia_loss(inner.state, slice, all, prior, unit, config.toggles, config.prior_mode).value;
      }
      outcomes[t - wave] = inner.state.y_prime();
    });

    for (std::size_t t = wave; t < wave_end; ++t) {
      const auto& rec = result.trace[t];
      strategy->observe(t, rec.hp, rec.objective);
      const double score = std::isnan(rec.objective) ? std::numeric_limits<double>::infinity()
                                                     : rec.objective;
      if (!have_best || score < best) {
        have_best = true;
        best = score;
        result.best_trial = t;
        result.y_prime = std::move(outcomes[t - wave]);
      }
    }
  }

  const auto& winner = result.trace[result.best_trial];
  result.best_hparams = winner.hp;
  result.best_objective = winner.objective;
  result.labels = row_argmax(result.y_prime);
  return result;
}

std::string attack_csv(const AttackResult& result) {
  std::ostringstream os;
  os << "input_id,predicted_label,max_confidence\n";
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    const auto row = result.y_prime.row(i);
    os << result.ids[i] << ',' << result.labels[i] << ','
       << csv::real(*std::max_element(row.begin(), row.end())) << '\n';
  }
  return os.str();
}

std::string attack_json(const AttackResult& result) {
  auto hp_json = [](const GiaHyperParams& hp) {
    return nlohmann::json{{"lambda_ce", hp.lambda_ce},
                          {"lambda_p", hp.lambda_p},
                          {"eta_g", hp.eta_g},
                          {"eta_y", hp.eta_y}};
  };
  nlohmann::json trace = nlohmann::json::array();
  for (std::size_t t = 0; t < result.trace.size(); ++t) {
    const auto& rec = result.trace[t];
    trace.push_back({{"trial", t},
                     {"hparams", hp_json(rec.hp)},
                     {"objective", rec.objective},
                     {"grad_loss", rec.grad_loss},
                     {"epochs_run", rec.epochs_run}});
  }
  const nlohmann::json doc{{"best_trial", result.best_trial},
                           {"best_objective", result.best_objective},
                           {"best_hparams", hp_json(result.best_hparams)},
                           {"records", result.ids.size()},
                           {"trace", trace}};
  return doc.dump(2) + "\n";
}

}  // namespace splitleak::gia
