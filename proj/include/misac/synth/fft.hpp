// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "misac/complex_tensor.hpp"

namespace misac::synth {

/// In-place forward DFT, X[k] = sum_n x[n] e^{-j 2 pi k n / N}.
void fft_inplace(std::span<cdouble> data);

/// Forward 2D DFT of a row-major [rows x cols] buffer.
void fft2d_inplace(std::vector<cdouble>& data, std::size_t rows, std::size_t cols);

/// Copies src [src_rows x src_cols] into a zero-filled [rows x cols] grid,
/// truncating whatever does not fit.
std::vector<cdouble> pad_or_crop(std::span<const cdouble> src, std::size_t src_rows, std::size_t src_cols,
                                 std::size_t rows, std::size_t cols);

}  // namespace misac::synth
