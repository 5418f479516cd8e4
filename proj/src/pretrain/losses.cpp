// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "misac/ops.hpp"
#include "misac/pretrain.hpp"

namespace misac {

MaskedError masked_error(const Tensor& recon, const Tensor& target, const MaskSpec& mask) {
  if (recon.shape() != target.shape()) throw ShapeError("masked_error: shape mismatch");
  if (recon.rows() != mask.n_tokens()) throw ShapeError("masked_error: one patch row per token required");
  if (mask.masked.empty()) return {Tensor::scalar(0.0), 0};
  const Tensor diff = sub(gather_rows(recon, mask.masked), gather_rows(target, mask.masked));
  return {sum_squares(diff), mask.masked.size() * recon.cols()};
}

Tensor mask_loss(std::span<const MaskedError> terms) {
  std::size_t count = 0;
  std::vector<Tensor> parts;
  for (const auto& t : terms) {
    if (t.count == 0) continue;
    count += t.count;
    parts.push_back(t.sse);
  }
  if (count == 0) return Tensor::scalar(0.0);
  Tensor acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return scale(acc, 1.0 / static_cast<double>(count));
}

Tensor contrastive_embedding(const Tensor& h, const Tensor& w, const Tensor& b) { return mean_rows(linear(h, w, b)); }

Tensor info_nce(const Tensor& anchor, const Tensor& other, double tau) {
  if (anchor.shape() != other.shape()) throw ShapeError("info_nce: embedding batches differ in shape");
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
  std::vector<std::size_t> labels(anchor.rows());
  std::iota(labels.begin(), labels.end(), 0);
  return cross_entropy(scale(matmul(anchor, other, true), 1.0 / tau), labels);
}

ContrastiveResult contrastive_loss(std::span<const Tensor> z_csi, std::span<const Tensor> z_radar,
                                   std::span<const Tensor> z_map, double tau) {
  if (z_csi.size() != z_radar.size() || z_csi.size() != z_map.size())
    throw std::invalid_argument("contrastive_loss: triplet lists differ in length");
  ContrastiveResult r;
  r.complete = z_csi.size();
  if (r.complete < 2) {
    r.loss = Tensor::scalar(0.0);
    return r;
  }
  auto stack = [](std::span<const Tensor> z) { return concat_rows(z); };
  const Tensor c = stack(z_csi);
  r.loss = add(info_nce(c, stack(z_radar), tau), info_nce(c, stack(z_map), tau));
  r.skipped = false;
  return r;
}

double pool_balance_value(std::span<const double> importance, std::span<const double> load) {
  if (importance.size() != load.size() || importance.empty()) throw std::invalid_argument("pool_balance_value: size mismatch");
  double s = 0.0;
  for (std::size_t e = 0; e < importance.size(); ++e) s += importance[e] * load[e];
  return s / static_cast<double>(importance.size());
}

Tensor load_balance_loss(const RoutingStats& stats, std::size_t n_experts) {
  std::vector<Tensor> terms;
  for (std::size_t l = 0; l < stats.n_layers; ++l) {
    for (std::size_t p = 0; p < kNumPools; ++p) {
      const auto& s = stats.at(l, p);
      if (s.tokens == 0) continue;
      if (s.load_count.size() != n_experts) throw std::invalid_argument("load_balance_loss: expert count mismatch");
      const double t = static_cast<double>(s.tokens);
      const Tensor load = Tensor::from_data({1, n_experts}, s.load_count);
      terms.push_back(scale(sum(mul(s.importance_sum, load)), 1.0 / (static_cast<double>(n_experts) * t * t)));
    }
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

namespace {

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component ") + name);
}

}  // namespace

// Weighted regularizers are summed before adding l_mask; both overloads agree bitwise.
double total_loss(double l_mask, double l_cl, double l_lb, const LossWeights& w) {
  require_finite(l_mask, "l_mask");
  require_finite(l_cl, "l_cl");
  require_finite(l_lb, "l_lb");
  return l_mask + (w.lambda_cl * l_cl + w.lambda_lb * l_lb);
}

Tensor total_loss(const Tensor& l_mask, const Tensor& l_cl, const Tensor& l_lb, const LossWeights& w) {
  total_loss(l_mask.item(), l_cl.item(), l_lb.item(), w);
  return add(l_mask, add(scale(l_cl, w.lambda_cl), scale(l_lb, w.lambda_lb)));
}

}  // namespace misac
