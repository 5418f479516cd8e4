// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "misac/synth/types.hpp"

namespace misac::synth {

enum class ChirpAveraging { complex, magnitude };

struct RadarMapOptions {
  std::size_t rows = 64;  // angle or Doppler bins
  std::size_t cols = 64;  // range bins
  ChirpAveraging averaging = ChirpAveraging::complex;
};

/// Point-target beat signal of every scatterer, stop-and-hop.
/// Throws std::invalid_argument if a target lies beyond params.max_range().
RadarCube radar_cube(const SceneSpec& scene, const FmcwParams& params);

/// Per chirp: 2D FFT over (rx, sample) on a padded/cropped grid, then the
/// mean over chirps. Output [rows x cols].
ComplexTensor range_angle_map(const RadarCube& cube, const RadarMapOptions& opts = {});

/// Per rx element: 2D FFT over (chirp, sample), then the mean over elements.
ComplexTensor range_velocity_map(const RadarCube& cube, const RadarMapOptions& opts = {});

RadarMaps radar_maps(const RadarCube& cube, const RadarMapOptions& opts = {});

/// Range bin of a target at r over n_samp samples (unwrapped, may be fractional).
double range_bin(double r, const FmcwParams& params);
/// Doppler bin of radial velocity v over n_chirp chirps (unwrapped).
double doppler_bin(double v, const FmcwParams& params);

}  // namespace misac::synth
