// SPDX-License-Identifier: Apache-2.0

#include "misac/synth/channel.hpp"

#include <cmath>
#include <stdexcept>

namespace misac::synth {

namespace {

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

cdouble array_phase(double theta, std::size_t n, double spacing) {
  const double ph = 2.0 * M_PI * spacing * static_cast<double>(n) * std::sin(theta);
  return {std::cos(ph), std::sin(ph)};
}

}  // namespace

ComplexTensor steering_vector(double theta, std::size_t n_elements, double spacing_wavelengths) {
  if (!(spacing_wavelengths > 0.0)) throw std::invalid_argument("steering_vector: spacing must be positive");
  ComplexTensor a({n_elements});
  for (std::size_t n = 0; n < n_elements; ++n) a.set(n, array_phase(theta, n, spacing_wavelengths));
  return a;
}

double subcarrier_frequency(std::size_t k, double f0, double bw, std::size_t n_sc) {
  if (n_sc == 1) return f0;
  return f0 - bw / 2.0 + static_cast<double>(k) * bw / static_cast<double>(n_sc - 1);
}

std::vector<cdouble> narrowband_response(std::span<const PathParams> paths, double f, std::size_t n_a,
                                         double spacing_wavelengths) {
  std::vector<cdouble> h(n_a);
  for (const auto& p : paths) {
    const cdouble g = p.beta * std::polar(1.0, -2.0 * M_PI * f * p.tau) * std::polar(1.0, p.phi);
    for (std::size_t n = 0; n < n_a; ++n) h[n] += g * array_phase(p.theta, n, spacing_wavelengths);
  }
  return h;
}

ChannelSample channel_response(std::span<const PathParams> paths, double f0, double bw, std::size_t n_sc,
                               std::size_t n_a, double spacing_wavelengths) {
  if (paths.empty()) throw std::invalid_argument("channel_response: empty path list");
  if (n_sc == 0 || n_a == 0) throw std::invalid_argument("channel_response: extents must be positive");
  ChannelSample out;
  out.f0 = f0;
  out.bw = bw;
  out.h = ComplexTensor({n_a, n_sc});
  for (std::size_t k = 0; k < n_sc; ++k) {
    const auto col = narrowband_response(paths, subcarrier_frequency(k, f0, bw, n_sc), n_a, spacing_wavelengths);
    for (std::size_t n = 0; n < n_a; ++n) out.h.set(n * n_sc + k, col[n]);
  }
  return out;
}

double bearing(const Vec3& from, const Vec3& point) { return std::atan2(point[1] - from[1], point[0] - from[0]); }

std::vector<PathParams> paths_from_scene(const SceneSpec& scene, bool include_los) {
  std::vector<PathParams> paths;
  Rng rng(scene.rng_seed ^ 0x5ca77e25ULL);
  if (include_los) {
    const double d = distance(scene.tx_position, scene.rx_position);
    paths.push_back({cdouble(1.0 / d, 0.0), d / kSpeedOfLight, 0.0, bearing(scene.tx_position, scene.rx_position), 0});
  }
  int cluster = 1;
  for (const auto& s : scene.scatterers) {
    if (s.is_user) continue;
    const double len = distance(scene.tx_position, s.position) + distance(s.position, scene.rx_position);
    const double phase = rng.uniform(-M_PI, M_PI);
    paths.push_back({cdouble(0.5 * s.reflectivity / len, 0.0), len / kSpeedOfLight, phase,
                     bearing(scene.tx_position, s.position), cluster++});
  }
  if (paths.empty()) throw std::invalid_argument("paths_from_scene: scene yields no paths");
  return paths;
}

std::size_t dominant_path(std::span<const PathParams> paths) {
  if (paths.empty()) throw std::invalid_argument("dominant_path: empty path list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < paths.size(); ++i) {
    if (std::abs(paths[i].beta) > std::abs(paths[best].beta)) best = i;
  }
  return best;
}

std::vector<std::vector<cdouble>> dft_codebook(std::size_t n_beams, std::size_t n_a, double spacing_wavelengths) {
  std::vector<std::vector<cdouble>> book(n_beams, std::vector<cdouble>(n_a));
  const double norm = 1.0 / std::sqrt(static_cast<double>(n_a));
  for (std::size_t b = 0; b < n_beams; ++b) {
    const double u = 2.0 * static_cast<double>(b) / static_cast<double>(n_beams) - 1.0;
    for (std::size_t n = 0; n < n_a; ++n) {
      book[b][n] = norm * std::polar(1.0, 2.0 * M_PI * spacing_wavelengths * static_cast<double>(n) * u);
    }
  }
  return book;
}

std::size_t best_beam(std::span<const cdouble> h, const std::vector<std::vector<cdouble>>& codebook) {
  std::size_t best = 0;
  double best_gain = -1.0;
  for (std::size_t b = 0; b < codebook.size(); ++b) {
    if (codebook[b].size() != h.size()) throw std::invalid_argument("best_beam: codeword length mismatch");
    cdouble acc{};
    for (std::size_t n = 0; n < h.size(); ++n) acc += std::conj(codebook[b][n]) * h[n];
    const double g = std::abs(acc);
    if (g > best_gain) {
      best_gain = g;
      best = b;
    }
  }
  return best;
}

ChannelSample add_awgn(const ChannelSample& csi, double snr_db, Rng& rng) {
  if (std::isnan(snr_db)) throw std::invalid_argument("add_awgn: SNR must not be NaN");
  ChannelSample out = csi;
  if (std::isinf(snr_db) && snr_db > 0) return out;
  const double signal = csi.h.power() / static_cast<double>(csi.h.numel());
  const double sigma = std::sqrt(signal / std::pow(10.0, snr_db / 10.0) / 2.0);
  for (std::size_t i = 0; i < out.h.numel(); ++i) {
    out.h.re[i] += sigma * rng.normal();
    out.h.im[i] += sigma * rng.normal();
  }
  out.snr_db = snr_db;
  return out;
}

void SceneSpec::validate() const {
  if (scatterers.empty()) throw std::invalid_argument("scene: at least one scatterer required");
  if (!(footprint > 0.0)) throw std::invalid_argument("scene: footprint must be positive");
  auto inside = [this](const Vec3& p) { return std::abs(p[0]) <= footprint && std::abs(p[1]) <= footprint; };
  for (const auto& s : scatterers) {
    if (!(s.reflectivity > 0.0)) throw std::invalid_argument("scene: reflectivity must be positive");
    if (!inside(s.position)) throw std::invalid_argument("scene: scatterer outside footprint");
  }
  if (!inside(tx_position) || !inside(rx_position)) throw std::invalid_argument("scene: tx/rx outside footprint");
}

}  // namespace misac::synth
