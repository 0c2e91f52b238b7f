#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "splitleak/matrix.hpp"

namespace splitleak {

/// Floor applied to probabilities before every log.
inline constexpr double kLogClip = 1e-12;

/// A point on the probability simplex.
class ProbVector {
 public:
  /// Validates entries in [0, 1] summing to 1 within `tolerance`.
  explicit ProbVector(std::vector<double> values, double tolerance = 1e-9);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const noexcept { return values_[k]; }
  std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> values_;
};

ProbVector softmax(std::span<const double> logits);
double entropy(const ProbVector& p);
double kl_divergence(const ProbVector& p, const ProbVector& q);
double cross_entropy(const ProbVector& y, const ProbVector& p);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);
std::vector<std::size_t> row_argmax(const Matrix& m);

/// Max over one-to-one maps of predicted cluster ids onto class ids of the
/// fraction of matches. Ids must lie in [0, K) where K = max id + 1 over both
/// vectors unless `num_classes` is given.
double optimal_assignment_accuracy(std::span<const std::size_t> pred,
                                   std::span<const std::size_t> truth,
                                   std::size_t num_classes = 0);

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// O(K^3)). Returns assignment[row] = column.
std::vector<std::size_t> hungarian_min_cost(const Matrix& cost);

namespace detail {

// Unchecked kernels shared by the nn and gia hot paths.
void softmax_inplace(std::span<double> v);
void log_softmax_into(std::span<const double> logits, std::span<double> out);
/// out = J_softmax(y)^T g = y * (g - <y, g>), for y = softmax(logits).
void softmax_vjp(std::span<const double> y, std::span<const double> g, std::span<double> out);

}  // namespace detail

}  // namespace splitleak
