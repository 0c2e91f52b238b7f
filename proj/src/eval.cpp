#include "splitleak/eval.hpp"

#include <sstream>
#include <vector>

#include <json.hpp>

#include "splitleak/csv.hpp"
#include "splitleak/error.hpp"
#include "splitleak/numerics.hpp"

namespace splitleak::eval {

std::string MetricsReport::to_json() const {
  nlohmann::json doc{{"n_eval", n_eval}};
  if (leak_accuracy) doc["leak_accuracy"] = *leak_accuracy;
  if (test_accuracy) doc["test_accuracy"] = *test_accuracy;
  if (nce) doc["nce"] = *nce;
  return doc.dump(2) + "\n";
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  auto line = [&](const char* name, const std::string& value) {
    os << name << std::string(16 - std::string(name).size(), ' ') << value << '\n';
  };
  line("metric", "value");
  if (leak_accuracy) line("leak_accuracy", csv::real(*leak_accuracy));
  if (test_accuracy) line("test_accuracy", csv::real(*test_accuracy));
  if (nce) line("nce", csv::real(*nce));
  line("n_eval", std::to_string(n_eval));
  return os.str();
}

double leak_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                     std::size_t num_classes) {
  if (predicted.size() != truth.size()) {
    throw InvalidArgument("leak_accuracy: " + std::to_string(predicted.size()) +
                          " predictions for " + std::to_string(truth.size()) + " labels");
  }
  return optimal_assignment_accuracy(predicted, truth, num_classes);
}

Matrix predict_logits(const nn::MlpModel& f, const nn::MlpModel& g, const Matrix& inputs) {
  if (f.output_dim() != g.input_dim()) {
    throw InvalidArgument("f output dim " + std::to_string(f.output_dim()) +
                          " does not match g input dim " + std::to_string(g.input_dim()));
  }
  return nn::forward(g, nn::forward(f, inputs));
}

double test_accuracy(const nn::MlpModel& f, const nn::MlpModel& g, const data::Dataset& heldout) {
  if (heldout.size() == 0) throw InvalidArgument("test_accuracy: empty dataset");
  const auto predicted = row_argmax(predict_logits(f, g, heldout.inputs));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == heldout.labels[i];
  return static_cast<double>(hits) / static_cast<double>(heldout.size());
}

double nce_from_probs(const Matrix& probs, std::span<const std::size_t> labels,
                      const data::LabelPrior& prior) {
  const double h = entropy(prior.probs);
  if (!(h > 0.0)) throw InvalidArgument("nce: label prior has zero entropy");
  if (probs.rows() != labels.size() || probs.cols() != prior.num_classes()) {
    throw InvalidArgument("nce: predictions do not match labels and prior");
  }
  if (labels.empty()) throw InvalidArgument("nce: empty dataset");
  const std::size_t K = probs.cols();
  double total = 0.0;
  std::vector<double> onehot(K);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= K) throw InvalidArgument("nce: label out of range");
    std::fill(onehot.begin(), onehot.end(), 0.0);
    onehot[labels[i]] = 1.0;
    const auto row = probs.row(i);
    total += cross_entropy(ProbVector(onehot), ProbVector({row.begin(), row.end()}));
  }
  return total / static_cast<double>(labels.size()) / h;
}

double nce(const nn::MlpModel& f, const nn::MlpModel& g, const data::Dataset& heldout,
           const data::LabelPrior& prior) {
  if (heldout.size() == 0) throw InvalidArgument("nce: empty dataset");
  Matrix probs = predict_logits(f, g, heldout.inputs);
  for (std::size_t i = 0; i < probs.rows(); ++i) detail::softmax_inplace(probs.row(i));
  return nce_from_probs(probs, heldout.labels, prior);
}

}  // namespace splitleak::eval
