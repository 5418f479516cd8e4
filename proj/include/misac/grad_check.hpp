// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "misac/tensor.hpp"

namespace misac {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per parameter; tensors at or below this size are probed fully.
  std::size_t coords_per_param = 24;
  std::uint64_t seed = 1;
};

/// Compares reverse-mode gradients of a scalar computation against central
/// differences. Returns max |analytic - numeric| / max(1, |analytic|, |numeric|)
/// over the probed coordinates. `f` must rebuild its graph on every call and be
/// deterministic; a mismatch between two evaluations at the base point throws.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, const GradCheckOptions& opts = {});

}  // namespace misac
