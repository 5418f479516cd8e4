// SPDX-License-Identifier: Apache-2.0

#include "misac/synth/scene_map.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace misac::synth {

namespace {

std::size_t axis_cell(double v, double footprint, std::size_t res) {
  const double cell = 2.0 * footprint / static_cast<double>(res);
  const double idx = std::floor((v + footprint) / cell);
  return static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(res - 1)));
}

}  // namespace

std::pair<std::size_t, std::size_t> grid_cell(double x, double y, double footprint, std::size_t res) {
  return {axis_cell(y, footprint, res), axis_cell(x, footprint, res)};
}

SceneMap rasterize_scene(const SceneSpec& scene, std::size_t res) {
  if (!(scene.footprint > 0.0)) throw std::invalid_argument("rasterize_scene: footprint must be positive");
  if (res == 0) throw std::invalid_argument("rasterize_scene: resolution must be positive");
  const double fp = scene.footprint;
  std::vector<double> bev(res * res * 3, 0.0), height(res * res, 0.0);
  for (const auto& s : scene.scatterers) {
    const auto [r0, c0] = grid_cell(s.position[0] - s.half_extent, s.position[1] - s.half_extent, fp, res);
    const auto [r1, c1] = grid_cell(s.position[0] + s.half_extent, s.position[1] + s.half_extent, fp, res);
    const double z = std::max(0.0, s.position[2]);
    for (std::size_t r = r0; r <= r1; ++r) {
      for (std::size_t c = c0; c <= c1; ++c) {
        bev[(r * res + c) * 3] = 1.0;
        height[r * res + c] = std::max(height[r * res + c], z);
      }
    }
  }
  const auto [tr, tc] = grid_cell(scene.tx_position[0], scene.tx_position[1], fp, res);
  bev[(tr * res + tc) * 3 + 1] = 1.0;
  const auto [rr, rc] = grid_cell(scene.rx_position[0], scene.rx_position[1], fp, res);
  bev[(rr * res + rc) * 3 + 2] = 1.0;
  return {Tensor::from_data({res, res, 3}, std::move(bev)), Tensor::from_data({res, res, 1}, std::move(height))};
}

}  // namespace misac::synth
