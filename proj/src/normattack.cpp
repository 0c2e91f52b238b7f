#include "splitleak/normattack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "splitleak/csv.hpp"
#include "splitleak/error.hpp"

namespace splitleak::normattack {

std::vector<double> gradient_norms(const GradientSet& slice) {
  if (slice.size() == 0) throw InvalidArgument("gradient_norms: empty transcript slice");
  std::vector<double> norms(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) {
    double sq = 0.0;
    for (double v : slice.grads.row(i)) sq += v * v;
    norms[i] = std::sqrt(sq);
  }
  return norms;
}

NormAttackResult threshold_attack(const GradientSet& slice, double threshold) {
  NormAttackResult out;
  out.ids = slice.ids;
  out.norms = gradient_norms(slice);
  out.threshold = threshold;
  out.labels.reserve(out.norms.size());
  for (double v : out.norms) out.labels.push_back(v > threshold ? 1 : 0);
  return out;
}

NormAttackResult norm_attack_best_threshold(const GradientSet& slice,
                                            std::span<const std::size_t> truth) {
  const auto norms = gradient_norms(slice);
  if (truth.size() != norms.size()) {
    throw InvalidArgument("norm attack: " + std::to_string(truth.size()) + " truth labels for " +
                          std::to_string(norms.size()) + " records");
  }
  if (std::any_of(truth.begin(), truth.end(), [](std::size_t y) { return y > 1; })) {
    throw InvalidArgument("norm attack: truth labels must be binary");
  }

  std::vector<std::size_t> order(norms.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return norms[a] < norms[b]; });

  // Threshold below everything: all records predicted positive.
  const auto positives = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), 1u));
  std::size_t correct = positives;
  std::size_t best_correct = correct;
  double best_threshold = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < order.size();) {
    // Move every record with this norm below the threshold.
    const double v = norms[order[k]];
    for (; k < order.size() && norms[order[k]] == v; ++k) {
      correct += truth[order[k]] == 0 ? 1 : 0;
      correct -= truth[order[k]] == 1 ? 1 : 0;
    }
    double t = std::numeric_limits<double>::infinity();
    if (k < order.size()) {
      const double next = norms[order[k]];
      t = v + (next - v) / 2.0;
      if (t >= next) t = v;  // adjacent doubles
    }
    if (correct > best_correct) {
      best_correct = correct;
      best_threshold = t;
    }
  }

  auto out = threshold_attack(slice, best_threshold);
  out.best_accuracy = static_cast<double>(best_correct) / static_cast<double>(norms.size());
  return out;
}

std::string norm_attack_csv(const NormAttackResult& result) {
  std::ostringstream os;
  os << "input_id,predicted_label,max_confidence\n";
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    os << result.ids[i] << ',' << result.labels[i] << ",1\n";
  }
  return os.str();
}

}  // namespace splitleak::normattack
