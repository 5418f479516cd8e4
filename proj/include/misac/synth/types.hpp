// SPDX-License-Identifier: Apache-2.0
//
// Scene, channel, radar and map records shared by the synthetic generators.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "misac/complex_tensor.hpp"

namespace misac::synth {

inline constexpr double kSpeedOfLight = 299792458.0;

using Vec3 = std::array<double, 3>;

struct Scatterer {
  Vec3 position{};               // meters
  double reflectivity = 1.0;     // > 0
  std::array<double, 2> velocity{};  // m/s in the ground plane
  double half_extent = 2.0;      // footprint half-size on the map, meters
  bool is_user = false;          // the UE itself (radar/map target, not a CSI bounce)
};

/// Geometry of one scene. The BS (and its co-located radar) sits at
/// tx_position with a linear array along +y and boresight along +x.
struct SceneSpec {
  std::vector<Scatterer> scatterers;
  Vec3 tx_position{};
  Vec3 rx_position{};
  double footprint = 100.0;  // half-extent of the mapped square
  std::uint64_t rng_seed = 0;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

/// One propagation path of the flattened cluster/ray sum.
struct PathParams {
  cdouble beta{1.0, 0.0};
  double tau = 0.0;    // seconds
  double phi = 0.0;    // radians
  double theta = 0.0;  // azimuth, radians in (-pi/2, pi/2]
  int cluster = 0;     // metadata only
};

struct ChannelSample {
  ComplexTensor h;  // [n_a x n_sc]
  double f0 = 0.0;
  double bw = 0.0;
  std::optional<double> snr_db;

  std::size_t n_antennas() const { return h.shape.at(0); }
  std::size_t n_subcarriers() const { return h.shape.at(1); }
};

struct FmcwParams {
  double slope = 2.0e13;         // Hz/s
  double sample_rate = 1.0e7;    // Hz (complex sampling)
  double chirp_period = 1.0e-5;  // s
  double carrier = 77.0e9;       // Hz
  std::size_t n_rx = 8;
  std::size_t n_chirp = 64;
  std::size_t n_samp = 64;

  double max_range() const { return sample_rate * kSpeedOfLight / (2.0 * slope); }
};

struct RadarCube {
  ComplexTensor cube;  // [n_rx x n_chirp x n_samp]
  FmcwParams params;
};

struct RadarMaps {
  ComplexTensor ra;  // [angle x range]
  ComplexTensor rv;  // [doppler x range]
};

struct SceneMap {
  Tensor bev;     // [H x W x 3]: scatterer mask, tx marker, rx marker
  Tensor height;  // [H x W x 1], meters
};

struct Labels {
  std::size_t beam_index = 0;
  double distance_m = 0.0;
  double aoa_rad = 0.0;
};

struct Availability {
  bool csi = true;
  bool radar = true;
  bool map = true;

  bool any() const { return csi || radar || map; }
  bool all() const { return csi && radar && map; }
};

struct MultimodalSample {
  std::optional<ChannelSample> csi;
  std::optional<RadarMaps> radar;
  std::optional<SceneMap> map;
  Labels labels;

  Availability availability() const { return {csi.has_value(), radar.has_value(), map.has_value()}; }
};

}  // namespace misac::synth
