// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "misac/downstream.hpp"

namespace misac {

double nmse_db(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("nmse_db: shape mismatch");
  double err = 0.0, pow = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    err += e * e;
    pow += target[i] * target[i];
  }
  if (!(pow > 0.0)) throw std::invalid_argument("nmse_db: target has zero power");
  if (err == 0.0) return kNmseFloorDb;
  return std::max(kNmseFloorDb, 10.0 * std::log10(err / pow));
}

double nmse_db(const ComplexTensor& pred, const ComplexTensor& target) {
  if (pred.shape != target.shape) throw ShapeError("nmse_db: shape mismatch");
  double err = 0.0, pow = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    err += std::norm(pred.at(i) - target.at(i));
    pow += std::norm(target.at(i));
  }
  if (!(pow > 0.0)) throw std::invalid_argument("nmse_db: target has zero power");
  if (err == 0.0) return kNmseFloorDb;
  return std::max(kNmseFloorDb, 10.0 * std::log10(err / pow));
}

double topk_accuracy(const Tensor& logits, std::span<const std::size_t> labels, std::size_t k) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) throw ShapeError("topk_accuracy: one logit row per label");
  const std::size_t n = logits.cols();
  if (k < 1 || k > n) throw std::invalid_argument("topk_accuracy: k must lie in [1, n_classes]");
  if (labels.empty()) return 0.0;
  auto x = logits.data();
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const std::size_t y = labels[r];
    if (y >= n) throw std::out_of_range("topk_accuracy: label out of range");
    const double v = x[r * n + y];
    // Rank under the lower-index tie rule.
    std::size_t rank = 0;
    for (std::size_t c = 0; c < n; ++c) {
      const double u = x[r * n + c];
      if (u > v || (u == v && c < y)) ++rank;
    }
    hits += rank < k;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double wrap_angle(double x, double period) {
  const double half = period / 2.0;
  double w = std::fmod(x + half, period);
  if (w <= 0.0) w += period;
  return w - half;
}

double mae_metric(std::span<const double> pred, std::span<const double> target, std::optional<double> period) {
  if (pred.size() != target.size()) throw ShapeError("mae_metric: shape mismatch");
  if (period && !(*period > 0.0)) throw std::invalid_argument("mae_metric: period must be positive");
  if (pred.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    s += std::abs(period ? wrap_angle(e, *period) : e);
  }
  return s / static_cast<double>(pred.size());
}

}  // namespace misac
