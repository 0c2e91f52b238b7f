#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitleak/data.hpp"
#include "splitleak/matrix.hpp"
#include "splitleak/nn.hpp"
#include "splitleak/rng.hpp"
#include "splitleak/transcript.hpp"

namespace splitleak::gia {

using data::LabelPrior;

/// Adam over the rows of a matrix where each row keeps its own step count and
/// only advances when it takes part in a batch.
class RowAdam {
 public:
  RowAdam() = default;
  RowAdam(std::size_t rows, std::size_t cols, nn::AdamConfig config = {});

  void update(Matrix& params, std::span<const std::size_t> rows, const Matrix& grads, double lr);
  std::uint64_t step(std::size_t row) const { return steps_.at(row); }

 private:
  nn::AdamConfig config_;
  Matrix first_;
  Matrix second_;
  std::vector<std::uint64_t> steps_;
};

/// Learnable stand-ins for the label owner: the surrogate model g' and the
/// label logits y_hat, one row per attacked record. y' = softmax(y_hat).
struct SurrogateState {
  nn::MlpModel g_prime;
  Matrix y_hat;  // [n x K]
  nn::AdamState g_adam;
  RowAdam y_adam;

  /// Builds a state with fresh optimizer moments.
  static SurrogateState make(nn::MlpModel g_prime, Matrix y_hat);

  Matrix y_prime() const;
};

struct GiaHyperParams {
  double lambda_ce = 1.0;
  double lambda_p = 1.0;
  double eta_g = 1e-4;  // surrogate model learning rate
  double eta_y = 1e-1;  // label logit learning rate

  friend bool operator==(const GiaHyperParams&, const GiaHyperParams&) = default;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SearchRanges {
  Range lambda_ce{0.1, 3.0};
  Range lambda_p{0.1, 3.0};
  Range eta_g{1e-5, 1e-4};
  Range eta_y{1e-2, 1e-1};

  void validate() const;
};

struct RegularizerToggles {
  bool use_lpr = true;  // KL(P_y || P_y') term
  bool use_cer = true;  // normalized cross-entropy term
};

enum class ObjectiveMode {
  kGradLoss,              // E||grad - grad'|| only
  kFullLossUnitLambdas,   // L_GIA with lambda_ce = lambda_p = 1
};

enum class PriorMode {
  kBatch,    // P_y' is the mean of y' over the current batch
  kFullSet,  // P_y' is the mean over every attacked record
};

/// Proposes hyperparameters for the outer loop. Trials are proposed in waves;
/// observe() is called in trial order once a wave has been evaluated.
class SearchStrategy {
 public:
  virtual ~SearchStrategy() = default;
  virtual GiaHyperParams propose(std::size_t trial, Rng& rng) = 0;
  virtual void observe(std::size_t /*trial*/, const GiaHyperParams&, double /*objective*/) {}
};

/// Log-uniform sampling over the configured ranges.
class RandomSearch : public SearchStrategy {
 public:
  explicit RandomSearch(SearchRanges ranges) : ranges_(ranges) {}
  GiaHyperParams propose(std::size_t trial, Rng& rng) override;

 private:
  SearchRanges ranges_;
};

using InitHook = std::function<SurrogateState(const GradientSet& slice, Rng& rng)>;

struct AttackConfig {
  std::size_t n_outer = 20;
  std::size_t inner_epochs = 400;
  std::size_t inner_batch = 64;
  double min_rel_improvement = 1e-4;
  std::size_t patience = 5;  // epochs without that much improvement before stopping
  std::vector<std::size_t> surrogate_hidden{32, 32, 32};
  SearchRanges ranges;
  RegularizerToggles toggles;
  ObjectiveMode objective = ObjectiveMode::kGradLoss;
  PriorMode prior_mode = PriorMode::kBatch;
  double y_init_std = 0.1;
  std::uint64_t seed = 0;
  std::optional<std::uint32_t> epoch;  // defaults to the last recorded epoch
  unsigned threads = 0;                // 0: SPLITLEAK_THREADS or hardware
  InitHook init_hook;                  // replaces the fresh initialization

  void validate() const;
};

struct GiaLoss {
  double value = 0.0;
  double grad_match = 0.0;
  double cer = 0.0;  // E[H(y', p')] / H(P_y), before lambda
  double lpr = 0.0;  // KL(P_y || P_y'), before lambda
  nn::ParamGrads param_grads;
  Matrix y_hat_grads;  // [batch x K], rows aligned with the batch
};

/// p' = softmax(g'(z)) and the per-example gradients of H(y', p') with respect
/// to z. Rows of `y_prime` align with rows of `z`.
struct Replay {
  Matrix p_prime;
  Matrix grads;
};
Replay replay_forward_backward(const nn::MlpModel& g_prime, const Matrix& z, const Matrix& y_prime);

/// L_GIA on the records `rows` of `slice` (rows also index state.y_hat),
/// with gradients for g' and the touched y_hat rows.
GiaLoss gia_loss(const SurrogateState& state, const GradientSet& slice,
                 std::span<const std::size_t> rows, const LabelPrior& prior,
                 const GiaHyperParams& hp, RegularizerToggles toggles,
                 PriorMode prior_mode = PriorMode::kBatch);

struct InnerResult {
  SurrogateState state;
  double grad_loss = 0.0;  // gradient-match term over the whole slice
  std::vector<double> epoch_losses;
};

/// Minibatch Adam on L_GIA for up to config.inner_epochs epochs. Stops early
/// after config.patience consecutive epochs whose mean loss fails to beat the
/// best so far by config.min_rel_improvement (relative).
InnerResult inner_train(SurrogateState state, const GradientSet& slice, const LabelPrior& prior,
                        const GiaHyperParams& hp, const AttackConfig& config, Rng& rng);

/// Fresh g' (Glorot) and y_hat ~ N(0, y_init_std) for `slice`.
SurrogateState initial_state(const GradientSet& slice, std::size_t num_classes,
                             const AttackConfig& config, Rng& rng);

struct TrialRecord {
  GiaHyperParams hp;
  double objective = 0.0;
  double grad_loss = 0.0;
  std::size_t epochs_run = 0;
};

struct AttackResult {
  std::vector<std::uint64_t> ids;
  std::vector<std::size_t> labels;  // row argmax of y_prime
  Matrix y_prime;
  GiaHyperParams best_hparams;
  double best_objective = 0.0;
  std::size_t best_trial = 0;
  std::vector<TrialRecord> trace;
};

/// Outer search: each trial samples hyperparameters, trains a fresh
/// surrogate and scores it with the selection objective, which reads only the
/// transcript and the surrogate. The lowest objective wins (lowest index on
/// ties).
AttackResult run_gia(const Transcript& transcript, const LabelPrior& prior,
                     const AttackConfig& config, SearchStrategy* strategy = nullptr);

/// input_id,predicted_label,max_confidence
std::string attack_csv(const AttackResult& result);
/// best_hparams, best_objective and the per-trial trace.
std::string attack_json(const AttackResult& result);

/// Worker count: `requested` if non-zero, else SPLITLEAK_THREADS, else the
/// hardware concurrency.
unsigned resolve_threads(unsigned requested);

}  // namespace splitleak::gia
