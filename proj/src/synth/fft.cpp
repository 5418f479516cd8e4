// SPDX-License-Identifier: Apache-2.0

#include "misac/synth/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <stdexcept>

namespace misac::synth {

namespace {

fftw_complex* as_fftw(cdouble* p) { return reinterpret_cast<fftw_complex*>(p); }

void run(fftw_plan plan) {
  if (plan == nullptr) throw std::runtime_error("fft: plan creation failed");
  fftw_execute(plan);
  fftw_destroy_plan(plan);
}

}  // namespace

void fft_inplace(std::span<cdouble> data) {
  if (data.empty()) throw std::invalid_argument("fft: empty input");
  auto* p = as_fftw(data.data());
  run(fftw_plan_dft_1d(static_cast<int>(data.size()), p, p, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED));
}

void fft2d_inplace(std::vector<cdouble>& data, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0 || data.size() != rows * cols) throw std::invalid_argument("fft2d: buffer size mismatch");
  auto* p = as_fftw(data.data());
  run(fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), p, p, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED));
}

std::vector<cdouble> pad_or_crop(std::span<const cdouble> src, std::size_t src_rows, std::size_t src_cols,
                                 std::size_t rows, std::size_t cols) {
  if (src.size() != src_rows * src_cols) throw std::invalid_argument("pad_or_crop: source size mismatch");
  std::vector<cdouble> out(rows * cols);
  for (std::size_t r = 0; r < std::min(rows, src_rows); ++r)
    for (std::size_t c = 0; c < std::min(cols, src_cols); ++c) out[r * cols + c] = src[r * src_cols + c];
  return out;
}

}  // namespace misac::synth
