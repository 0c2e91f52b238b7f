#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "splitleak/data.hpp"
#include "splitleak/matrix.hpp"
#include "splitleak/nn.hpp"

namespace splitleak::eval {

/// Whichever metrics a command computed.
struct MetricsReport {
  std::optional<double> leak_accuracy;
  std::optional<double> test_accuracy;
  std::optional<double> nce;
  std::size_t n_eval = 0;

  std::string to_json() const;
  /// Two-column human-readable table.
  std::string to_table() const;
};

/// Clustering accuracy of predicted groups against the truth.
double leak_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                     std::size_t num_classes = 0);

/// Split-model logits g(f(x)).
Matrix predict_logits(const nn::MlpModel& f, const nn::MlpModel& g, const Matrix& inputs);

/// Fraction of examples whose argmax prediction equals the label.
double test_accuracy(const nn::MlpModel& f, const nn::MlpModel& g, const data::Dataset& heldout);

/// Mean clipped cross-entropy of one-hot labels against `probs`, divided by
/// the prior entropy.
double nce_from_probs(const Matrix& probs, std::span<const std::size_t> labels,
                      const data::LabelPrior& prior);
double nce(const nn::MlpModel& f, const nn::MlpModel& g, const data::Dataset& heldout,
           const data::LabelPrior& prior);

}  // namespace splitleak::eval
