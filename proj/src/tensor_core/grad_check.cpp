// SPDX-License-Identifier: Apache-2.0

#include "misac/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "misac/rng.hpp"

namespace misac {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  Tensor out = f();
  if (out.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  return out.item();
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, const GradCheckOptions& opts) {
  if (!(opts.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  for (auto& p : params) p.zero_grad();
  Tape tape;
  double base;
  {
    Tape::Scope scope(tape);
    Tensor loss = f();
    base = loss.item();
    backward(loss, tape);
  }
  if (evaluate(f) != base) throw std::runtime_error("grad_check: f is not deterministic");

  Rng rng(opts.seed);
  double worst = 0.0;
  for (auto& p : params) {
    const std::size_t n = p.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > opts.coords_per_param) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < opts.coords_per_param; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(opts.coords_per_param);
    }
    std::vector<double> analytic(n, 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + opts.step;
      const double plus = evaluate(f);
      values[c] = saved - opts.step;
      const double minus = evaluate(f);
      values[c] = saved;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double denom = std::max({1.0, std::abs(analytic[c]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[c] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace misac
