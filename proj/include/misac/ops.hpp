// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op treats its inputs as row-major matrices
// (rows() x cols()) unless noted, allocates a fresh output, checks it is finite,
// and records a backward closure when a tape is active and any input needs grad.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "misac/tensor.hpp"

namespace misac {

inline constexpr double kRmsNormEps = 1e-6;

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Exact x * Phi(x) using erf.
Tensor gelu(const Tensor& x);
Tensor sin(const Tensor& x);

// Reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_squares(const Tensor& x);
/// Column-wise mean over rows: [n x m] -> [1 x m].
Tensor mean_rows(const Tensor& x);

// Linear algebra
/// a [n x k] times b [k x m] (or b^T when transpose_b, b [m x k]).
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// x [n x in] * w [in x out] + bias [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Adds a length-m row vector to every row of x [n x m].
Tensor add_row(const Tensor& x, const Tensor& row);
/// Multiplies row i of x [n x m] by w[i], w of length n.
Tensor mul_rows(const Tensor& x, const Tensor& w);

/// Per-row x / sqrt(mean(x^2) + eps) * gain over the last axis.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps = kRmsNormEps);
Tensor softmax_rows(const Tensor& x);

// Row plumbing
Tensor broadcast_rows(const Tensor& row, std::size_t n);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
/// base with src row j added into row index[j]; index entries may repeat.
Tensor scatter_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> index);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// out[j] = x[rows[j], col]; output shape [len(rows)].
Tensor pick_column(const Tensor& x, std::span<const std::size_t> rows, std::size_t col);

/// Mean softmax cross-entropy of logits [B x C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Top-k truncated softmax over each row of logits [N x K].
struct TopKResult {
  Tensor weights;                      // [N x K], exactly zero off the selected set
  std::vector<std::uint32_t> selected;  // N x k, descending logit; ties to lowest index
  std::size_t k = 0;
};

/// When `forced` is non-null it must hold N*k indices; selection is taken from
/// it verbatim (used to freeze routing for finite-difference checks).
TopKResult topk_softmax(const Tensor& logits, std::size_t k, const std::vector<std::uint32_t>* forced = nullptr);

/// Multi-head scaled dot-product attention over q, k, v [N x d] with no mask.
/// `probs_out`, if given, receives the attention matrices [heads x N x N].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                 std::vector<double>* probs_out = nullptr);

}  // namespace misac
