// SPDX-License-Identifier: Apache-2.0

#include "misac/synth/radar.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "misac/synth/fft.hpp"

namespace misac::synth {

double range_bin(double r, const FmcwParams& p) {
  return 2.0 * p.slope * r / kSpeedOfLight * static_cast<double>(p.n_samp) / p.sample_rate;
}

double doppler_bin(double v, const FmcwParams& p) {
  return 2.0 * p.carrier * v / kSpeedOfLight * p.chirp_period * static_cast<double>(p.n_chirp);
}

RadarCube radar_cube(const SceneSpec& scene, const FmcwParams& p) {
  if (scene.scatterers.empty()) throw std::invalid_argument("radar_cube: scene has no scatterers");
  if (p.n_rx == 0 || p.n_chirp == 0 || p.n_samp == 0) throw std::invalid_argument("radar_cube: empty cube extents");
  RadarCube out{ComplexTensor({p.n_rx, p.n_chirp, p.n_samp}), p};
  const double lambda = kSpeedOfLight / p.carrier;
  for (const auto& s : scene.scatterers) {
    const double dx = s.position[0] - scene.tx_position[0];
    const double dy = s.position[1] - scene.tx_position[1];
    const double dz = s.position[2] - scene.tx_position[2];
    const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
    if (r >= p.max_range()) throw std::invalid_argument("radar_cube: target beyond unambiguous range");
    const double ground = std::hypot(dx, dy);
    const double v = ground > 0.0 ? (s.velocity[0] * dx + s.velocity[1] * dy) / ground : 0.0;
    const double theta = std::atan2(dy, dx);
    const double fb = 2.0 * p.slope * r / kSpeedOfLight;
    const double fd = 2.0 * p.carrier * v / kSpeedOfLight;
    const double base = 4.0 * M_PI * r / lambda;
    for (std::size_t n = 0; n < p.n_rx; ++n) {
      const double spatial = 0.5 * static_cast<double>(n) * std::sin(theta);
      for (std::size_t m = 0; m < p.n_chirp; ++m) {
        const double slow = fd * static_cast<double>(m) * p.chirp_period;
        for (std::size_t k = 0; k < p.n_samp; ++k) {
          const double ph = 2.0 * M_PI * (fb * static_cast<double>(k) / p.sample_rate + slow + spatial) + base;
          const std::size_t idx = (n * p.n_chirp + m) * p.n_samp + k;
          out.cube.re[idx] += s.reflectivity * std::cos(ph);
          out.cube.im[idx] += s.reflectivity * std::sin(ph);
        }
      }
    }
  }
  return out;
}

namespace {

// Reduces the cube over `outer` after a 2D FFT of each [a x samp] slice,
// where a is the other non-sample axis.
ComplexTensor reduce_cube(const RadarCube& rc, bool over_chirps, const RadarMapOptions& opts) {
  const auto& p = rc.params;
  const auto& c = rc.cube;
  if (c.shape != Shape{p.n_rx, p.n_chirp, p.n_samp}) throw ShapeError("radar map: cube extents do not match params");
  const std::size_t outer = over_chirps ? p.n_chirp : p.n_rx;
  const std::size_t inner = over_chirps ? p.n_rx : p.n_chirp;
  std::vector<cdouble> acc(opts.rows * opts.cols);
  std::vector<cdouble> slice(inner * p.n_samp);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t rx = over_chirps ? i : o;
      const std::size_t ch = over_chirps ? o : i;
      for (std::size_t k = 0; k < p.n_samp; ++k) slice[i * p.n_samp + k] = c.at((rx * p.n_chirp + ch) * p.n_samp + k);
    }
    auto grid = pad_or_crop(slice, inner, p.n_samp, opts.rows, opts.cols);
    fft2d_inplace(grid, opts.rows, opts.cols);
    for (std::size_t j = 0; j < grid.size(); ++j) {
      acc[j] += opts.averaging == ChirpAveraging::complex ? grid[j] : cdouble(std::abs(grid[j]), 0.0);
    }
  }
  ComplexTensor out({opts.rows, opts.cols});
  const double inv = 1.0 / static_cast<double>(outer);
  for (std::size_t j = 0; j < acc.size(); ++j) out.set(j, acc[j] * inv);
  return out;
}

}  // namespace

ComplexTensor range_angle_map(const RadarCube& cube, const RadarMapOptions& opts) {
  return reduce_cube(cube, true, opts);
}

ComplexTensor range_velocity_map(const RadarCube& cube, const RadarMapOptions& opts) {
  return reduce_cube(cube, false, opts);
}

RadarMaps radar_maps(const RadarCube& cube, const RadarMapOptions& opts) {
  return {range_angle_map(cube, opts), range_velocity_map(cube, opts)};
}

}  // namespace misac::synth
