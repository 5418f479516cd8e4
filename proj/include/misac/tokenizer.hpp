// SPDX-License-Identifier: Apache-2.0
//
// Modality preprocessing and non-overlapping patch embedding.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "misac/synth/types.hpp"
#include "misac/tensor.hpp"

namespace misac {

/// Stable on-disk encoding; concatenation order follows the enum order.
enum class Modality : std::uint32_t { csi = 0, map = 1, radar = 2 };

inline constexpr std::array<Modality, 3> kModalities = {Modality::csi, Modality::map, Modality::radar};

const char* modality_name(Modality m);
/// Throws std::invalid_argument listing the valid names.
Modality parse_modality(const std::string& name);
bool has_modality(const synth::MultimodalSample& s, Modality m);

class AvailabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input extents and patch extents of one modality.
struct PatchSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t patch_h = 1;
  std::size_t patch_w = 1;

  std::size_t grid_rows() const { return height / patch_h; }
  std::size_t grid_cols() const { return width / patch_w; }
  std::size_t n_tokens() const { return grid_rows() * grid_cols(); }
  std::size_t patch_dim() const { return patch_h * patch_w * channels; }
  void validate() const;
};

struct TokenizerConfig {
  std::size_t d = 64;
  std::array<PatchSpec, 3> specs{};

  const PatchSpec& spec(Modality m) const { return specs[static_cast<std::size_t>(m)]; }
  PatchSpec& spec(Modality m) { return specs[static_cast<std::size_t>(m)]; }
  void validate() const;
};

/// Tokenizer dims for CSI [n_a x n_sc], radar maps [radar x radar] and a
/// map raster [map_res x map_res].
TokenizerConfig make_tokenizer_config(std::size_t d, std::size_t n_a, std::size_t n_sc,
                                      std::pair<std::size_t, std::size_t> csi_patch, std::size_t radar_res,
                                      std::size_t radar_patch, std::size_t map_res, std::size_t map_patch);

/// Preprocessed modality tensor [H x W x C] and the factor that maps it back
/// to physical units (x_raw = scale * x).
struct Preprocessed {
  Tensor x;
  double scale = 1.0;
};

/// csi: unit mean power, channels (re, im). radar: (ra.re, ra.im, rv.re, rv.im),
/// each map scaled to unit mean power. map: (bev x3, height) unscaled.
/// Throws AvailabilityError if the modality is absent.
Preprocessed preprocess(const synth::MultimodalSample& s, Modality m);

/// Throws ShapeError unless both extents divide exactly.
std::size_t token_count(std::size_t h, std::size_t w, std::size_t ph, std::size_t pw);

/// x [H x W x C] -> [N x (Ph*Pw*C)], tokens row-major over the patch grid,
/// each patch flattened row-major over (patch row, patch col, channel).
Tensor patchify(const Tensor& x, std::size_t ph, std::size_t pw);
/// Inverse of patchify for a grid of the given extents.
Tensor unpatchify(const Tensor& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t ph, std::size_t pw);

struct TokenSequence {
  Tensor tokens;  // [N x d]
  std::size_t rows = 0;
  std::size_t cols = 0;
  Modality modality = Modality::csi;

  std::pair<std::size_t, std::size_t> coords(std::size_t i) const { return {i / cols, i % cols}; }
};

/// token_i = vec(patch_i) W + b with W [patch_dim x d], b [d].
TokenSequence patchify_embed(const Tensor& x, const PatchSpec& spec, Modality m, const Tensor& w, const Tensor& b);

}  // namespace misac
