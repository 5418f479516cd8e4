// SPDX-License-Identifier: Apache-2.0

#include "misac/synth/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "misac/mstn.hpp"
#include "misac/synth/channel.hpp"
#include "misac/synth/scene_map.hpp"

namespace misac::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool fraction(double f) { return std::isfinite(f) && f >= 0.0 && f <= 1.0; }

std::size_t kept(std::size_t n, double frac) { return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))); }

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng::substream(seed ^ 0xa5a5a5a5ULL, stream);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

double distance3(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

std::string sample_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", i);
  return buf;
}

const char* averaging_name(ChirpAveraging a) { return a == ChirpAveraging::complex ? "complex" : "magnitude"; }

Tensor read_checked(const fs::path& path, const Shape& expect) {
  Tensor t = mstn::read_file(path);
  if (t.shape() != expect) {
    throw mstn::FormatError(path.string() + ": expected shape " + shape_str(expect) + ", got " + shape_str(t.shape()));
  }
  return t;
}

}  // namespace

void SceneDistribution::validate() const {
  require(min_scatterers >= 1 && min_scatterers <= max_scatterers, "scenes: need 1 <= min_scatterers <= max_scatterers");
  require(ue_range_min > 0.0 && ue_range_min <= ue_range_max, "scenes: invalid UE range interval");
  require(scatterer_range_min > 0.0 && scatterer_range_min <= scatterer_range_max, "scenes: invalid scatterer range");
  require(ue_bearing_max >= 0.0 && ue_bearing_max < M_PI / 2, "scenes: UE bearing must stay inside (-pi/2, pi/2)");
  require(scatterer_bearing_max >= 0.0 && scatterer_bearing_max < M_PI / 2, "scenes: scatterer bearing out of range");
  require(height_min >= 0.0 && height_min <= height_max, "scenes: invalid height interval");
  require(reflectivity_min > 0.0 && reflectivity_min <= reflectivity_max, "scenes: invalid reflectivity interval");
  require(ue_speed_max >= 0.0 && ue_height >= 0.0, "scenes: negative UE speed or height");
  require(footprint > std::max(ue_range_max, scatterer_range_max), "scenes: footprint must cover all ranges");
}

void AvailabilitySchedule::validate() const {
  require(fraction(csi) && fraction(radar) && fraction(map), "availability fractions must lie in [0, 1]");
}

void SynthConfig::validate() const {
  scenes.validate();
  availability.validate();
  require(n_antennas > 0 && n_subcarriers > 0, "synth: array extents must be positive");
  require(carrier > 0.0 && bandwidth >= 0.0, "synth: invalid carrier/bandwidth");
  require(n_beams > 0, "synth: need at least one beam");
  require(fmcw.n_rx > 0 && fmcw.n_chirp > 0 && fmcw.n_samp > 0, "synth: empty radar cube");
  require(fmcw.slope > 0.0 && fmcw.sample_rate > 0.0 && fmcw.chirp_period > 0.0 && fmcw.carrier > 0.0,
          "synth: FMCW parameters must be positive");
  require(std::hypot(std::max(scenes.ue_range_max, scenes.scatterer_range_max), scenes.height_max) < fmcw.max_range(),
          "synth: scene extends beyond the radar unambiguous range");
  require(radar_map.rows > 0 && radar_map.cols > 0, "synth: radar map extents must be positive");
  require(map_resolution > 0, "synth: map resolution must be positive");
  require(!csi_snr_db || !std::isnan(*csi_snr_db), "synth: SNR must not be NaN");
}

Dataset::Counts Dataset::counts() const {
  Counts c;
  for (const auto& s : samples) {
    c.csi += s.csi.has_value();
    c.radar += s.radar.has_value();
    c.map += s.map.has_value();
  }
  return c;
}

SceneSpec sample_scene(const SceneDistribution& dist, Rng& rng) {
  SceneSpec scene;
  scene.footprint = dist.footprint;
  scene.rng_seed = rng.next_u64();
  const double ur = rng.uniform(dist.ue_range_min, dist.ue_range_max);
  const double ub = rng.uniform(-dist.ue_bearing_max, dist.ue_bearing_max);
  scene.rx_position = {ur * std::cos(ub), ur * std::sin(ub), dist.ue_height};
  Scatterer ue;
  ue.position = scene.rx_position;
  ue.is_user = true;
  ue.half_extent = 1.0;
  const double speed = rng.uniform(-dist.ue_speed_max, dist.ue_speed_max);
  const double heading = rng.uniform(-M_PI, M_PI);
  ue.velocity = {speed * std::cos(heading), speed * std::sin(heading)};
  scene.scatterers.push_back(ue);
  const auto n = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(dist.min_scatterers),
                                                          static_cast<std::int64_t>(dist.max_scatterers)));
  for (std::size_t i = 0; i < n; ++i) {
    Scatterer s;
    const double r = rng.uniform(dist.scatterer_range_min, dist.scatterer_range_max);
    const double b = rng.uniform(-dist.scatterer_bearing_max, dist.scatterer_bearing_max);
    s.position = {r * std::cos(b), r * std::sin(b), rng.uniform(dist.height_min, dist.height_max)};
    s.reflectivity = rng.uniform(dist.reflectivity_min, dist.reflectivity_max);
    s.half_extent = rng.uniform(1.0, 4.0);
    scene.scatterers.push_back(s);
  }
  scene.validate();
  return scene;
}

Labels scene_labels(const SceneSpec& scene, const SynthConfig& cfg) {
  const auto paths = paths_from_scene(scene);
  const auto h0 = narrowband_response(paths, cfg.carrier, cfg.n_antennas);
  Labels l;
  l.beam_index = best_beam(h0, dft_codebook(cfg.n_beams, cfg.n_antennas));
  l.distance_m = distance3(scene.tx_position, scene.rx_position);
  l.aoa_rad = paths[dominant_path(paths)].theta;
  return l;
}

MultimodalSample render_sample(const SceneSpec& scene, const SynthConfig& cfg, Rng& rng) {
  MultimodalSample s;
  const auto paths = paths_from_scene(scene);
  auto csi = channel_response(paths, cfg.carrier, cfg.bandwidth, cfg.n_subcarriers, cfg.n_antennas);
  if (cfg.csi_snr_db) csi = add_awgn(csi, *cfg.csi_snr_db, rng);
  s.csi = std::move(csi);
  s.radar = radar_maps(radar_cube(scene, cfg.fmcw), cfg.radar_map);
  s.map = rasterize_scene(scene, cfg.map_resolution);
  s.labels = scene_labels(scene, cfg);
  return s;
}

std::vector<Availability> availability_plan(std::size_t n, const AvailabilitySchedule& sched, std::uint64_t seed) {
  sched.validate();
  std::vector<Availability> plan(n);
  const auto radar_perm = permutation(n, seed, 1);
  for (std::size_t i = kept(n, sched.radar); i < n; ++i) plan[radar_perm[i]].radar = false;
  const auto map_perm = permutation(n, seed, 2);
  for (std::size_t i = kept(n, sched.map); i < n; ++i) plan[map_perm[i]].map = false;
  std::vector<std::size_t> droppable;
  for (std::size_t i : permutation(n, seed, 3)) {
    if (plan[i].radar || plan[i].map) droppable.push_back(i);
  }
  const std::size_t drop_csi = n - kept(n, sched.csi);
  if (drop_csi > droppable.size()) {
    throw std::invalid_argument("availability schedule would leave samples with no modality");
  }
  for (std::size_t i = 0; i < drop_csi; ++i) plan[droppable[i]].csi = false;
  return plan;
}

Dataset synth_dataset(std::size_t n, const SynthConfig& cfg, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synth_dataset: n must be >= 1");
  cfg.validate();
  const auto plan = availability_plan(n, cfg.availability, seed);
  Dataset ds{cfg, seed, {}};
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, i);
    const SceneSpec scene = sample_scene(cfg.scenes, rng);
    MultimodalSample s = render_sample(scene, cfg, rng);
    if (!plan[i].csi) s.csi.reset();
    if (!plan[i].radar) s.radar.reset();
    if (!plan[i].map) s.map.reset();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

json config_to_json(const SynthConfig& c) {
  const auto& d = c.scenes;
  json j;
  j["scenes"] = {{"min_scatterers", d.min_scatterers},
                 {"max_scatterers", d.max_scatterers},
                 {"ue_range_min", d.ue_range_min},
                 {"ue_range_max", d.ue_range_max},
                 {"ue_bearing_max", d.ue_bearing_max},
                 {"ue_height", d.ue_height},
                 {"ue_speed_max", d.ue_speed_max},
                 {"scatterer_range_min", d.scatterer_range_min},
                 {"scatterer_range_max", d.scatterer_range_max},
                 {"scatterer_bearing_max", d.scatterer_bearing_max},
                 {"height_min", d.height_min},
                 {"height_max", d.height_max},
                 {"reflectivity_min", d.reflectivity_min},
                 {"reflectivity_max", d.reflectivity_max},
                 {"footprint", d.footprint}};
  j["availability"] = {{"csi", c.availability.csi}, {"radar", c.availability.radar}, {"map", c.availability.map}};
  j["array"] = {{"n_antennas", c.n_antennas},
                {"n_subcarriers", c.n_subcarriers},
                {"carrier", c.carrier},
                {"bandwidth", c.bandwidth},
                {"n_beams", c.n_beams}};
  j["fmcw"] = {{"slope", c.fmcw.slope},       {"sample_rate", c.fmcw.sample_rate}, {"chirp_period", c.fmcw.chirp_period},
               {"carrier", c.fmcw.carrier},   {"n_rx", c.fmcw.n_rx},               {"n_chirp", c.fmcw.n_chirp},
               {"n_samp", c.fmcw.n_samp}};
  j["radar_map"] = {{"rows", c.radar_map.rows},
                    {"cols", c.radar_map.cols},
                    {"averaging", averaging_name(c.radar_map.averaging)}};
  j["map_resolution"] = c.map_resolution;
  j["csi_snr_db"] = c.csi_snr_db ? json(*c.csi_snr_db) : json(nullptr);
  return j;
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  if (j.contains("scenes")) {
    const auto& s = j.at("scenes");
    auto& d = c.scenes;
    d.min_scatterers = s.value("min_scatterers", d.min_scatterers);
    d.max_scatterers = s.value("max_scatterers", d.max_scatterers);
    d.ue_range_min = s.value("ue_range_min", d.ue_range_min);
    d.ue_range_max = s.value("ue_range_max", d.ue_range_max);
    d.ue_bearing_max = s.value("ue_bearing_max", d.ue_bearing_max);
    d.ue_height = s.value("ue_height", d.ue_height);
    d.ue_speed_max = s.value("ue_speed_max", d.ue_speed_max);
    d.scatterer_range_min = s.value("scatterer_range_min", d.scatterer_range_min);
    d.scatterer_range_max = s.value("scatterer_range_max", d.scatterer_range_max);
    d.scatterer_bearing_max = s.value("scatterer_bearing_max", d.scatterer_bearing_max);
    d.height_min = s.value("height_min", d.height_min);
    d.height_max = s.value("height_max", d.height_max);
    d.reflectivity_min = s.value("reflectivity_min", d.reflectivity_min);
    d.reflectivity_max = s.value("reflectivity_max", d.reflectivity_max);
    d.footprint = s.value("footprint", d.footprint);
  }
  if (j.contains("availability")) {
    const auto& a = j.at("availability");
    c.availability.csi = a.value("csi", c.availability.csi);
    c.availability.radar = a.value("radar", c.availability.radar);
    c.availability.map = a.value("map", c.availability.map);
  }
  if (j.contains("array")) {
    const auto& a = j.at("array");
    c.n_antennas = a.value("n_antennas", c.n_antennas);
    c.n_subcarriers = a.value("n_subcarriers", c.n_subcarriers);
    c.carrier = a.value("carrier", c.carrier);
    c.bandwidth = a.value("bandwidth", c.bandwidth);
    c.n_beams = a.value("n_beams", c.n_beams);
  }
  if (j.contains("fmcw")) {
    const auto& f = j.at("fmcw");
    c.fmcw.slope = f.value("slope", c.fmcw.slope);
    c.fmcw.sample_rate = f.value("sample_rate", c.fmcw.sample_rate);
    c.fmcw.chirp_period = f.value("chirp_period", c.fmcw.chirp_period);
    c.fmcw.carrier = f.value("carrier", c.fmcw.carrier);
    c.fmcw.n_rx = f.value("n_rx", c.fmcw.n_rx);
    c.fmcw.n_chirp = f.value("n_chirp", c.fmcw.n_chirp);
    c.fmcw.n_samp = f.value("n_samp", c.fmcw.n_samp);
  }
  if (j.contains("radar_map")) {
    const auto& r = j.at("radar_map");
    c.radar_map.rows = r.value("rows", c.radar_map.rows);
    c.radar_map.cols = r.value("cols", c.radar_map.cols);
    const std::string avg = r.value("averaging", std::string("magnitude"));
    if (avg == "complex") {
      c.radar_map.averaging = ChirpAveraging::complex;
    } else if (avg == "magnitude") {
      c.radar_map.averaging = ChirpAveraging::magnitude;
    } else {
      throw std::invalid_argument("radar_map.averaging must be 'complex' or 'magnitude'");
    }
  }
  c.map_resolution = j.value("map_resolution", c.map_resolution);
  if (j.contains("csi_snr_db") && !j.at("csi_snr_db").is_null()) c.csi_snr_db = j.at("csi_snr_db").get<double>();
  return c;
}

fs::path write_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create dataset directory " + dir.string() + ": " + ec.message());
  json samples = json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string stem = sample_stem(i);
    json files = json::object();
    if (s.csi) {
      files["csi"] = stem + ".csi.mstn";
      mstn::write_file(dir / files["csi"].get<std::string>(), s.csi->h.to_tensor());
    }
    if (s.radar) {
      files["ra"] = stem + ".ra.mstn";
      files["rv"] = stem + ".rv.mstn";
      mstn::write_file(dir / files["ra"].get<std::string>(), s.radar->ra.to_tensor(), mstn::DType::f32);
      mstn::write_file(dir / files["rv"].get<std::string>(), s.radar->rv.to_tensor(), mstn::DType::f32);
    }
    if (s.map) {
      files["bev"] = stem + ".bev.mstn";
      files["height"] = stem + ".height.mstn";
      mstn::write_file(dir / files["bev"].get<std::string>(), s.map->bev, mstn::DType::f32);
      mstn::write_file(dir / files["height"].get<std::string>(), s.map->height, mstn::DType::f32);
    }
    json entry = {{"index", i},
                  {"labels",
                   {{"beam_index", s.labels.beam_index},
                    {"distance_m", s.labels.distance_m},
                    {"aoa_rad", s.labels.aoa_rad}}},
                  {"available", {{"csi", s.csi.has_value()}, {"radar", s.radar.has_value()}, {"map", s.map.has_value()}}},
                  {"files", files}};
    if (s.csi && s.csi->snr_db) entry["snr_db"] = *s.csi->snr_db;
    samples.push_back(std::move(entry));
  }
  const auto c = ds.counts();
  json manifest = {{"format", "misac-dataset"},
                   {"version", 1},
                   {"seed", ds.seed},
                   {"count", ds.samples.size()},
                   {"present", {{"csi", c.csi}, {"radar", c.radar}, {"map", c.map}}},
                   {"config", config_to_json(ds.config)},
                   {"samples", std::move(samples)}};
  const fs::path path = dir / "manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
  return path;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset manifest " + path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw mstn::FormatError(path.string() + ": " + e.what());
  }
  if (m.value("format", std::string()) != "misac-dataset") throw mstn::FormatError(path.string() + ": not a dataset manifest");
  Dataset ds;
  ds.config = config_from_json(m.at("config"));
  ds.config.validate();
  ds.seed = m.at("seed").get<std::uint64_t>();
  const auto& cfg = ds.config;
  const std::size_t res = cfg.map_resolution;
  for (const auto& e : m.at("samples")) {
    MultimodalSample s;
    const auto& l = e.at("labels");
    s.labels = {l.at("beam_index").get<std::size_t>(), l.at("distance_m").get<double>(), l.at("aoa_rad").get<double>()};
    const auto& files = e.at("files");
    const auto& av = e.at("available");
    if (av.at("csi").get<bool>()) {
      ChannelSample c;
      c.h = ComplexTensor::from_tensor(
          read_checked(dir / files.at("csi").get<std::string>(), {cfg.n_antennas, cfg.n_subcarriers, 2}));
      c.f0 = cfg.carrier;
      c.bw = cfg.bandwidth;
      if (e.contains("snr_db")) c.snr_db = e.at("snr_db").get<double>();
      s.csi = std::move(c);
    }
    if (av.at("radar").get<bool>()) {
      const Shape rs{cfg.radar_map.rows, cfg.radar_map.cols, 2};
      s.radar = RadarMaps{ComplexTensor::from_tensor(read_checked(dir / files.at("ra").get<std::string>(), rs)),
                          ComplexTensor::from_tensor(read_checked(dir / files.at("rv").get<std::string>(), rs))};
    }
    if (av.at("map").get<bool>()) {
      s.map = SceneMap{read_checked(dir / files.at("bev").get<std::string>(), {res, res, 3}),
                       read_checked(dir / files.at("height").get<std::string>(), {res, res, 1})};
    }
    if (!s.availability().any()) throw mstn::FormatError(path.string() + ": sample without any modality");
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != m.at("count").get<std::size_t>()) throw mstn::FormatError(path.string() + ": count mismatch");
  return ds;
}

}  // namespace misac::synth
