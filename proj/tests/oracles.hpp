#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "splitleak/matrix.hpp"
#include "splitleak/nn.hpp"
#include "splitleak/rng.hpp"

namespace splitleak::oracle {

/// Straight-line evaluation of a ReLU MLP on one input row.
inline std::vector<double> naive_forward(const nn::MlpModel& model, std::span<const double> x) {
  std::vector<double> a(x.begin(), x.end());
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weight;
    std::vector<double> h(w.rows());
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = layers[l].bias[o];
      for (std::size_t j = 0; j < w.cols(); ++j) s += w(o, j) * a[j];
      h[o] = (l + 1 < layers.size() && s < 0.0) ? 0.0 : s;
    }
    a = std::move(h);
  }
  return a;
}

/// -sum_k y_k log softmax(logits)_k for one row, written out directly.
inline double naive_ce(std::span<const double> logits, std::span<const double> y) {
  double peak = logits[0];
  for (double v : logits) peak = std::max(peak, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - peak);
  double loss = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) loss -= y[k] * (logits[k] - peak - std::log(z));
  return loss;
}

inline double naive_mean_ce(const nn::MlpModel& model, const Matrix& inputs, const Matrix& targets) {
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    total += naive_ce(naive_forward(model, inputs.row(i)), targets.row(i));
  }
  return total / static_cast<double>(inputs.rows());
}

/// Central differences of f with respect to every entry of x.
inline std::vector<double> central_diff(std::vector<double> x,
                                        const std::function<double(const std::vector<double>&)>& f,
                                        double h) {
  std::vector<double> grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + h;
    const double up = f(x);
    x[k] = saved - h;
    const double down = f(x);
    x[k] = saved;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline nn::MlpModel with_params(const nn::MlpModel& model, std::span<const double> flat) {
  auto layers = model.layers();
  nn::unflatten(flat, layers);
  return nn::MlpModel(std::move(layers));
}

/// Per-example input gradient of the CE loss by central differences of naive_ce.
inline Matrix fd_input_grads(const nn::MlpModel& model, const Matrix& inputs, const Matrix& targets,
                             double h) {
  Matrix out(inputs.rows(), inputs.cols());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto y = targets.row(i);
    std::vector<double> x(inputs.row(i).begin(), inputs.row(i).end());
    const auto g = central_diff(
        x, [&](const std::vector<double>& v) { return naive_ce(naive_forward(model, v), y); }, h);
    std::copy(g.begin(), g.end(), out.row(i).begin());
  }
  return out;
}

/// Brute force over all K! maps of cluster ids onto class ids.
inline double brute_force_assignment_accuracy(std::span<const std::size_t> pred,
                                              std::span<const std::size_t> truth, std::size_t k) {
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += perm[pred[i]] == truth[i];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

inline bool close_rel(double a, double b, double rel, double abs_floor) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

/// Random simplex point with occasional exact zeros.
inline std::vector<double> random_simplex(Rng& rng, std::size_t k, bool allow_zeros = true) {
  std::vector<double> v(k);
  double s = 0.0;
  for (auto& x : v) {
    x = (allow_zeros && rng.uniform() < 0.1) ? 0.0 : -std::log(1.0 - rng.uniform());
    s += x;
  }
  if (s == 0.0) {
    v[0] = 1.0;
    return v;
  }
  for (auto& x : v) x /= s;
  return v;
}

/// Random ReLU MLP whose pre-activations on `inputs` all stay at least
/// `margin` away from zero, so finite differences never straddle a kink.
inline nn::MlpModel random_model_away_from_kinks(Rng& rng, const std::vector<std::size_t>& dims,
                                                 const Matrix& inputs, double margin = 1e-3) {
  for (;;) {
    auto model = nn::MlpModel::glorot(dims, rng);
    for (auto& l : model.layers()) {
      for (double& b : l.bias) b = rng.uniform(-0.3, 0.3);
    }
    bool ok = true;
    for (std::size_t i = 0; ok && i < inputs.rows(); ++i) {
      std::vector<double> a(inputs.row(i).begin(), inputs.row(i).end());
      const auto& layers = model.layers();
      for (std::size_t l = 0; ok && l + 1 < layers.size(); ++l) {
        std::vector<double> h(layers[l].weight.rows());
        for (std::size_t o = 0; o < h.size(); ++o) {
          double s = layers[l].bias[o];
          for (std::size_t j = 0; j < a.size(); ++j) s += layers[l].weight(o, j) * a[j];
          if (std::abs(s) < margin) ok = false;
          h[o] = std::max(s, 0.0);
        }
        a = std::move(h);
      }
    }
    if (ok) return model;
  }
}

}  // namespace splitleak::oracle
