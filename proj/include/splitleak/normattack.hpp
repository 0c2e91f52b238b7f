#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitleak/transcript.hpp"

namespace splitleak::normattack {

struct NormAttackResult {
  std::vector<std::uint64_t> ids;
  std::vector<std::size_t> labels;  // 1 iff norm > threshold
  double threshold = 0.0;
  std::vector<double> norms;
  std::optional<double> best_accuracy;
};

/// Euclidean norm of each record's gradient.
std::vector<double> gradient_norms(const GradientSet& slice);

/// Labels records by thresholding their gradient norms.
NormAttackResult threshold_attack(const GradientSet& slice, double threshold);

/// Best-case evaluation: tries every threshold that yields a distinct
/// labeling (midpoints between consecutive distinct norms, plus -inf and
/// +inf) and keeps the most accurate against `truth`. Reading the truth makes
/// this an upper bound on the attack, not a deployable attack. Ties go to the
/// smallest threshold.
NormAttackResult norm_attack_best_threshold(const GradientSet& slice,
                                            std::span<const std::size_t> truth);

/// input_id,predicted_label,max_confidence (hard labels, confidence 1).
std::string norm_attack_csv(const NormAttackResult& result);

}  // namespace splitleak::normattack
