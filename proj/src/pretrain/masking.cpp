// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "misac/pretrain.hpp"

namespace misac {

const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::none:
      return "none";
    case MaskKind::random:
      return "random";
    case MaskKind::frequency:
      return "frequency";
    case MaskKind::comb:
      return "comb";
  }
  return "?";
}

void MaskScheme::validate() const {
  if ((kind == MaskKind::random || kind == MaskKind::frequency) && !(ratio >= 0.0 && ratio <= 1.0))
    throw std::invalid_argument("mask ratio must lie in [0, 1]");
  if (kind == MaskKind::comb && spacing == 0) throw std::invalid_argument("comb spacing must be positive");
}

double MaskSpec::masked_fraction() const {
  return n_tokens() == 0 ? 0.0 : static_cast<double>(masked.size()) / static_cast<double>(n_tokens());
}

MaskSpec make_mask(std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& omega) {
  if (omega.size() != rows * cols) throw std::invalid_argument("make_mask: omega size mismatch");
  MaskSpec m;
  m.rows = rows;
  m.cols = cols;
  m.omega = omega;
  for (std::size_t i = 0; i < omega.size(); ++i) (omega[i] ? m.masked : m.visible).push_back(i);
  return m;
}

MaskSpec empty_mask(std::size_t rows, std::size_t cols) {
  return make_mask(rows, cols, std::vector<std::uint8_t>(rows * cols, 0));
}

std::size_t comb_token_spacing(std::size_t ns, std::size_t patch_w) {
  if (ns == 0 || patch_w == 0) throw std::invalid_argument("comb spacing and patch width must be positive");
  if (ns % patch_w == 0) return ns / patch_w;
  const auto r = static_cast<std::size_t>(std::llround(static_cast<double>(ns) / static_cast<double>(patch_w)));
  return std::max<std::size_t>(1, r);
}

namespace {

std::size_t rounded(double r, std::size_t n) { return static_cast<std::size_t>(std::llround(r * static_cast<double>(n))); }

std::vector<std::uint8_t> draw(const MaskScheme& s, std::size_t rows, std::size_t cols, Rng& rng, std::size_t patch_w) {
  const std::size_t n = rows * cols;
  std::vector<std::uint8_t> omega(n, 0);
  switch (s.kind) {
    case MaskKind::none:
      break;
    case MaskKind::random: {
      const std::size_t k = rounded(s.ratio, n);
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < k; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
        std::swap(idx[i], idx[j]);
        omega[idx[i]] = 1;
      }
      break;
    }
    case MaskKind::frequency: {
      const std::size_t width = rounded(s.ratio, cols);
      const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cols - width)));
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = start; c < start + width; ++c) omega[r * cols + c] = 1;
      break;
    }
    case MaskKind::comb: {
      const std::size_t step = comb_token_spacing(s.spacing, patch_w);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) omega[r * cols + c] = c % step == 0 ? 0 : 1;
      break;
    }
  }
  return omega;
}

}  // namespace

MaskSpec sample_mask(const MaskScheme& scheme, std::size_t rows, std::size_t cols, Rng& rng, std::size_t patch_w) {
  scheme.validate();
  if (rows == 0 || cols == 0) throw std::invalid_argument("sample_mask: empty grid");
  if (scheme.kind == MaskKind::none) return empty_mask(rows, cols);
  for (int attempt = 0; attempt < 2; ++attempt) {
    MaskSpec m = make_mask(rows, cols, draw(scheme, rows, cols, rng, patch_w));
    if (!m.visible.empty() && !m.masked.empty()) return m;
  }
  throw std::invalid_argument(std::string("sample_mask: ") + mask_kind_name(scheme.kind) +
                              " mask leaves no visible or no masked token on a " + std::to_string(rows) + "x" +
                              std::to_string(cols) + " grid");
}

}  // namespace misac
