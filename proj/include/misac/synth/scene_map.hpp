// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <utility>

#include "misac/synth/types.hpp"

namespace misac::synth {

/// Grid cell (row, col) holding ground point (x, y) on a res x res raster of
/// [-footprint, footprint]^2. Rows follow y, columns follow x; clamped to the grid.
std::pair<std::size_t, std::size_t> grid_cell(double x, double y, double footprint, std::size_t res);

/// BEV channels: scatterer footprint mask, tx marker, rx marker (all 0/1).
/// Height holds the per-cell max scatterer z, 0 where empty.
SceneMap rasterize_scene(const SceneSpec& scene, std::size_t res = 256);

}  // namespace misac::synth
