// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "misac/tensor.hpp"

namespace misac {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameters.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  /// Applies one update from the accumulated gradients. Parameters that
  /// received no gradient this step are skipped entirely.
  void step(double lr);
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  /// Restores moments and step count; shapes must match.
  void load_state(std::uint64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

/// lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2, clamped at step >= total.
double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min);

}  // namespace misac
