// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "misac/encoder.hpp"
#include "misac/rng.hpp"
#include "misac/tensor.hpp"

namespace misac::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool rg = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), rg);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// d=16, 2 heads, K=4, k=2; CSI 8x8 (4,1) -> 16 tokens, radar/map 16x16 (8,8) -> 4 tokens.
inline EncoderConfig small_encoder_config() {
  EncoderConfig c;
  c.tokenizer = make_tokenizer_config(16, 8, 8, {4, 1}, 16, 8, 16, 8);
  c.n_layers = 2;
  c.n_heads = 2;
  c.n_experts = 4;
  c.top_k = 2;
  return c;
}

/// d=64, 4 heads, K=8, k=4, 2 layers; CSI 16x32 (4,1), radar/map 64x64 (8,8).
inline EncoderConfig desk_encoder_config() {
  EncoderConfig c;
  c.tokenizer = make_tokenizer_config(64, 16, 32, {4, 1}, 64, 8, 64, 8);
  return c;
}

}  // namespace misac::testing
