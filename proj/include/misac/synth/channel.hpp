// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "misac/rng.hpp"
#include "misac/synth/types.hpp"

namespace misac::synth {

/// ULA response; element n holds exp(j 2 pi spacing n sin(theta)).
ComplexTensor steering_vector(double theta, std::size_t n_elements, double spacing_wavelengths = 0.5);

/// Subcarrier frequency k of n_sc spread evenly over [f0 - bw/2, f0 + bw/2].
double subcarrier_frequency(std::size_t k, double f0, double bw, std::size_t n_sc);

/// h[:, k] = sum_p beta_p e^{-j 2 pi f_k tau_p} e^{j phi_p} a(theta_p).
ChannelSample channel_response(std::span<const PathParams> paths, double f0, double bw, std::size_t n_sc,
                               std::size_t n_a, double spacing_wavelengths = 0.5);

/// Response of all paths at a single frequency, length n_a.
std::vector<cdouble> narrowband_response(std::span<const PathParams> paths, double f, std::size_t n_a,
                                         double spacing_wavelengths = 0.5);

/// LoS path to the UE plus one single-bounce path per non-user scatterer.
/// Bounce phases come from the scene seed.
std::vector<PathParams> paths_from_scene(const SceneSpec& scene, bool include_los = true);

/// Azimuth of `point` seen from the BS array (boresight +x).
double bearing(const Vec3& from, const Vec3& point);

/// Index of the strongest |beta| path; ties to the first.
std::size_t dominant_path(std::span<const PathParams> paths);

/// Unit-norm DFT codebook: codeword b steers to sin(theta) = 2b/N - 1.
std::vector<std::vector<cdouble>> dft_codebook(std::size_t n_beams, std::size_t n_a, double spacing_wavelengths = 0.5);

/// argmax_b |w_b^H h|.
std::size_t best_beam(std::span<const cdouble> h, const std::vector<std::vector<cdouble>>& codebook);

/// Complex AWGN with variance mean(|h|^2) / 10^(snr/10). An infinite SNR is a no-op.
ChannelSample add_awgn(const ChannelSample& csi, double snr_db, Rng& rng);

}  // namespace misac::synth
