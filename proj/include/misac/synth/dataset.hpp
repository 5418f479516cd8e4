// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "misac/rng.hpp"
#include "misac/synth/radar.hpp"
#include "misac/synth/types.hpp"

namespace misac::synth {

/// Random scene layout: UE in a sector in front of the BS plus a few static
/// reflectors (buildings, poles) whose z is their height.
struct SceneDistribution {
  std::size_t min_scatterers = 2;
  std::size_t max_scatterers = 5;
  double ue_range_min = 8.0;
  double ue_range_max = 60.0;
  double ue_bearing_max = 1.0471975511965976;  // 60 deg
  double ue_height = 1.5;
  double ue_speed_max = 10.0;
  double scatterer_range_min = 5.0;
  double scatterer_range_max = 65.0;
  double scatterer_bearing_max = 1.3089969389957472;  // 75 deg
  double height_min = 2.0;
  double height_max = 20.0;
  double reflectivity_min = 0.3;
  double reflectivity_max = 1.0;
  double footprint = 100.0;

  void validate() const;
};

/// Fraction of samples carrying each modality.
struct AvailabilitySchedule {
  double csi = 1.0;
  double radar = 1.0;
  double map = 1.0;

  void validate() const;
};

struct SynthConfig {
  SceneDistribution scenes;
  AvailabilitySchedule availability;
  std::size_t n_antennas = 16;
  std::size_t n_subcarriers = 32;
  double carrier = 28.0e9;
  double bandwidth = 20.0e6;
  std::size_t n_beams = 16;
  FmcwParams fmcw;
  RadarMapOptions radar_map{64, 64, ChirpAveraging::magnitude};
  std::size_t map_resolution = 64;
  std::optional<double> csi_snr_db;  // unset keeps the clean channel

  void validate() const;
};

struct Dataset {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<MultimodalSample> samples;

  struct Counts {
    std::size_t csi = 0, radar = 0, map = 0;
  };
  Counts counts() const;
};

SceneSpec sample_scene(const SceneDistribution& dist, Rng& rng);

/// All modalities and labels of one scene.
MultimodalSample render_sample(const SceneSpec& scene, const SynthConfig& cfg, Rng& rng);

/// Ground-truth labels from scene geometry and the clean channel.
Labels scene_labels(const SceneSpec& scene, const SynthConfig& cfg);

/// Per-sample availability: round(fraction * n) samples keep each modality,
/// chosen by seeded permutations. CSI is removed only where another modality
/// survives; a schedule that cannot honor that throws std::invalid_argument.
std::vector<Availability> availability_plan(std::size_t n, const AvailabilitySchedule& sched, std::uint64_t seed);

Dataset synth_dataset(std::size_t n, const SynthConfig& cfg, std::uint64_t seed);

nlohmann::json config_to_json(const SynthConfig& cfg);
SynthConfig config_from_json(const nlohmann::json& j);

/// Writes manifest.json and one MSTN file per sample per modality.
/// Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace misac::synth
