#include "splitleak/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "splitleak/error.hpp"

namespace splitleak {

ProbVector::ProbVector(std::vector<double> values, double tolerance) : values_(std::move(values)) {
  if (values_.empty()) throw InvalidArgument("ProbVector: empty");
  double sum = 0.0;
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw InvalidArgument("ProbVector: entry " + std::to_string(v) + " outside [0, 1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > tolerance) {
    throw InvalidArgument("ProbVector: entries sum to " + std::to_string(sum));
  }
}

namespace detail {

void softmax_inplace(std::span<double> v) {
  const double peak = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - peak);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

void log_softmax_into(std::span<const double> logits, std::span<double> out) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - peak);
  const double log_norm = peak + std::log(sum);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - log_norm;
}

void softmax_vjp(std::span<const double> y, std::span<const double> g, std::span<double> out) {
  double dot = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) dot += y[k] * g[k];
  for (std::size_t k = 0; k < y.size(); ++k) out[k] = y[k] * (g[k] - dot);
}

}  // namespace detail

ProbVector softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("softmax: empty input");
  for (double x : logits) {
    if (!std::isfinite(x)) throw InvalidArgument("softmax: non-finite logit");
  }
  std::vector<double> out(logits.begin(), logits.end());
  detail::softmax_inplace(out);
  return ProbVector(std::move(out));
}

double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw InvalidArgument("kl_divergence: length mismatch");
  double d = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) d += p[k] * (std::log(p[k]) - std::log(std::max(q[k], kLogClip)));
  }
  // Clipping can push an otherwise-zero sum a hair below zero.
  return std::max(d, 0.0);
}

double cross_entropy(const ProbVector& y, const ProbVector& p) {
  if (y.size() != p.size()) throw InvalidArgument("cross_entropy: length mismatch");
  double h = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] > 0.0) h -= y[k] * std::log(std::max(p[k], kLogClip));
  }
  return h;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

std::vector<std::size_t> row_argmax(const Matrix& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = argmax(m.row(i));
  return out;
}

std::vector<std::size_t> hungarian_min_cost(const Matrix& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) throw InvalidArgument("hungarian_min_cost: cost matrix must be square");
  if (n == 0) return {};
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Potentials u (rows), v (columns); p[j] is the row matched to column j.
  // Index 0 is a sentinel, real rows/columns are 1..n.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double optimal_assignment_accuracy(std::span<const std::size_t> pred,
                                   std::span<const std::size_t> truth, std::size_t num_classes) {
  if (pred.size() != truth.size()) {
    throw InvalidArgument("optimal_assignment_accuracy: length mismatch (" +
                          std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) +
                          ")");
  }
  if (pred.empty()) throw InvalidArgument("optimal_assignment_accuracy: empty input");
  std::size_t k = num_classes;
  if (k == 0) {
    k = 1 + std::max(*std::max_element(pred.begin(), pred.end()),
                     *std::max_element(truth.begin(), truth.end()));
  }
  Matrix counts(k, k);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= k || truth[i] >= k) {
      throw InvalidArgument("optimal_assignment_accuracy: id out of range [0, " +
                            std::to_string(k) + ")");
    }
    counts(pred[i], truth[i]) += 1.0;
  }
  Matrix cost(k, k);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) cost(r, c) = -counts(r, c);
  }
  const auto assignment = hungarian_min_cost(cost);
  // Integer counts summed in double stay exact far beyond any realistic n.
  double matched = 0.0;
  for (std::size_t r = 0; r < k; ++r) matched += counts(r, assignment[r]);
  return matched / static_cast<double>(pred.size());
}

}  // namespace splitleak
