// SPDX-License-Identifier: Apache-2.0

#include <openssl/evp.h>

#include <fstream>
#include <set>
#include <sstream>

#include "misac/runner.hpp"

namespace misac {

using nlohmann::json;

void RunConfig::sync_tokenizer() {
  if (synth.radar_map.rows != synth.radar_map.cols)
    throw ConfigError("synth.radar_map: rows and cols must be equal (square radar maps)");
  try {
    model.encoder.tokenizer =
        make_tokenizer_config(model.encoder.tokenizer.d, synth.n_antennas, synth.n_subcarriers,
                              {patches.csi_h, patches.csi_w}, synth.radar_map.rows, patches.radar,
                              synth.map_resolution, patches.map);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("tokenizer: ") + e.what());
  }
}

namespace {

template <class F>
void wrap(const char* section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (preset != "desk" && preset != "paper") throw ConfigError("preset must be desk or paper, got '" + preset + "'");
  if (n_samples == 0) throw ConfigError("n_samples must be positive");
  wrap("synth", [&] { synth.validate(); });
  RunConfig copy = *this;
  copy.sync_tokenizer();
  const auto& have = model.encoder.tokenizer;
  for (Modality m : kModalities) {
    const auto& a = have.spec(m);
    const auto& b = copy.model.encoder.tokenizer.spec(m);
    if (a.height != b.height || a.width != b.width || a.patch_h != b.patch_h || a.patch_w != b.patch_w)
      throw ConfigError(std::string("tokenizer for ") + modality_name(m) + " is out of sync with synth dims");
  }
  wrap("model", [&] { model.validate(); });
  wrap("pretrain", [&] { pretrain.validate(); });
  if (pretrain.batch_size > n_samples) throw ConfigError("pretrain.batch_size exceeds n_samples");
  if (pretrain.steps == 0) throw ConfigError("pretrain.steps must be positive");
  if (checkpoint_every == 0) throw ConfigError("pretrain.checkpoint_every must be positive");
  wrap("task", [&] { task.validate(model); });
  if (task.n_beams != synth.n_beams) throw ConfigError("task.n_beams must equal synth.n_beams");
  if (finetune.steps == 0 || finetune.batch_size == 0) throw ConfigError("finetune: steps and batch_size must be positive");
  if (!(finetune.lr_max > 0.0) || finetune.lr_min < 0.0 || finetune.lr_min > finetune.lr_max)
    throw ConfigError("finetune: need 0 <= lr_min <= lr_max, lr_max > 0");
  const auto n_train = static_cast<std::size_t>(finetune.train_fraction * static_cast<double>(n_samples));
  if (!(finetune.train_fraction > 0.0 && finetune.train_fraction < 1.0) || n_train == 0 || n_train >= n_samples)
    throw ConfigError("finetune.train_fraction must leave both a train and an eval split");
  if (eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
}

RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.model.encoder.tokenizer.d = 64;
  c.model.encoder.n_layers = 2;
  c.model.encoder.n_heads = 4;
  c.model.encoder.n_experts = 8;
  c.model.encoder.top_k = 4;
  c.model.decoder_layers = 1;
  c.pretrain.lr_max = 1e-3;
  c.sync_tokenizer();
  return c;
}

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.n_samples = 4096;
  c.synth.n_antennas = 32;
  c.synth.n_subcarriers = 64;
  c.synth.map_resolution = 256;
  c.patches = {4, 4, 8, 8};
  c.model.encoder.tokenizer.d = 512;
  c.model.encoder.n_layers = 4;
  c.model.encoder.n_heads = 8;
  c.model.decoder_layers = 2;
  c.pretrain.batch_size = 64;
  c.pretrain.steps = 150 * 64;  // 150 epochs of 64 batches
  c.pretrain.lr_max = 1e-4;
  c.finetune.batch_size = 64;
  c.finetune.steps = 100 * 51;
  c.finetune.lr_max = 1e-4;
  c.eval_batch_size = 64;
  c.sync_tokenizer();
  return c;
}

RunConfig preset_config(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

namespace {

json modality_list(const std::vector<Modality>& ms) {
  json a = json::array();
  for (Modality m : ms) a.push_back(modality_name(m));
  return a;
}

std::vector<Modality> modalities_from(const json& a) {
  std::vector<Modality> out;
  for (const auto& v : a) out.push_back(parse_modality(v.get<std::string>()));
  return out;
}

void require_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(std::string(section) + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& e = c.model.encoder;
  const auto& p = c.pretrain;
  const auto& t = c.task;
  const auto& f = c.finetune;
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"n_samples", c.n_samples},
      {"synth", synth::config_to_json(c.synth)},
      {"patches", {{"csi", {c.patches.csi_h, c.patches.csi_w}}, {"radar", c.patches.radar}, {"map", c.patches.map}}},
      {"model",
       {{"d", e.tokenizer.d},
        {"n_layers", e.n_layers},
        {"n_heads", e.n_heads},
        {"n_experts", e.n_experts},
        {"top_k", e.top_k},
        {"hidden_mult", e.hidden_mult},
        {"decoder_layers", c.model.decoder_layers}}},
      {"pretrain",
       {{"steps", p.steps},
        {"batch_size", p.batch_size},
        {"lr_max", p.lr_max},
        {"lr_min", p.lr_min},
        {"lambda_cl", p.weights.lambda_cl},
        {"lambda_lb", p.weights.lambda_lb},
        {"tau", p.tau},
        {"snr_db", {p.snr_min_db, p.snr_max_db}},
        {"mask_ratio", {p.ratio_min, p.ratio_max}},
        {"comb_spacing", {p.comb_min, p.comb_max}},
        {"modality_dropout", p.modality_dropout},
        {"adam", {{"beta1", p.adam.beta1}, {"beta2", p.adam.beta2}, {"eps", p.adam.eps}}},
        {"checkpoint_every", c.checkpoint_every}}},
      {"task",
       {{"kind", task_name(t.kind)},
        {"modalities", modality_list(t.modalities)},
        {"prediction_ratio", t.prediction_ratio},
        {"pilot_spacing", t.pilot_spacing},
        {"n_beams", t.n_beams},
        {"distance_scale", t.distance_scale},
        {"topk", t.topk},
        {"csi_snr_db", t.csi_snr_db ? json(*t.csi_snr_db) : json(nullptr)}}},
      {"finetune",
       {{"steps", f.steps},
        {"batch_size", f.batch_size},
        {"lr_max", f.lr_max},
        {"lr_min", f.lr_min},
        {"freeze", freeze_name(f.freeze)},
        {"train_fraction", f.train_fraction}}},
      {"eval", {{"batch_size", c.eval_batch_size}}},
  };
}

RunConfig config_from_json(const json& j) {
  try {
    require_keys(j, "config", {"preset", "seed", "n_samples", "synth", "patches", "model", "pretrain", "task", "finetune", "eval"});
    RunConfig c = preset_config(j.value("preset", std::string("desk")));
    read(j, "seed", c.seed);
    read(j, "n_samples", c.n_samples);
    if (j.contains("synth")) {
      // Fields not given keep the preset's values.
      json s = synth::config_to_json(c.synth);
      s.merge_patch(j.at("synth"));
      c.synth = synth::config_from_json(s);
    }
    if (j.contains("patches")) {
      const auto& p = j.at("patches");
      require_keys(p, "patches", {"csi", "radar", "map"});
      if (p.contains("csi")) {
        const auto csi = p.at("csi").get<std::vector<std::size_t>>();
        if (csi.size() != 2) throw ConfigError("patches.csi must be [height, width]");
        c.patches.csi_h = csi[0];
        c.patches.csi_w = csi[1];
      }
      read(p, "radar", c.patches.radar);
      read(p, "map", c.patches.map);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      require_keys(m, "model", {"d", "n_layers", "n_heads", "n_experts", "top_k", "hidden_mult", "decoder_layers"});
      auto& e = c.model.encoder;
      read(m, "d", e.tokenizer.d);
      read(m, "n_layers", e.n_layers);
      read(m, "n_heads", e.n_heads);
      read(m, "n_experts", e.n_experts);
      read(m, "top_k", e.top_k);
      read(m, "hidden_mult", e.hidden_mult);
      read(m, "decoder_layers", c.model.decoder_layers);
    }
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      require_keys(p, "pretrain",
                   {"steps", "batch_size", "lr_max", "lr_min", "lambda_cl", "lambda_lb", "tau", "snr_db", "mask_ratio",
                    "comb_spacing", "modality_dropout", "adam", "checkpoint_every"});
      auto& q = c.pretrain;
      read(p, "steps", q.steps);
      read(p, "batch_size", q.batch_size);
      read(p, "lr_max", q.lr_max);
      read(p, "lr_min", q.lr_min);
      read(p, "lambda_cl", q.weights.lambda_cl);
      read(p, "lambda_lb", q.weights.lambda_lb);
      read(p, "tau", q.tau);
      auto pair = [&](const char* key, auto& lo, auto& hi) {
        if (!p.contains(key)) return;
        const auto& a = p.at(key);
        if (!a.is_array() || a.size() != 2) throw ConfigError(std::string("pretrain.") + key + " must be [min, max]");
        a.at(0).get_to(lo);
        a.at(1).get_to(hi);
      };
      pair("snr_db", q.snr_min_db, q.snr_max_db);
      pair("mask_ratio", q.ratio_min, q.ratio_max);
      pair("comb_spacing", q.comb_min, q.comb_max);
      read(p, "modality_dropout", q.modality_dropout);
      if (p.contains("adam")) {
        const auto& a = p.at("adam");
        require_keys(a, "pretrain.adam", {"beta1", "beta2", "eps"});
        read(a, "beta1", q.adam.beta1);
        read(a, "beta2", q.adam.beta2);
        read(a, "eps", q.adam.eps);
      }
      read(p, "checkpoint_every", c.checkpoint_every);
    }
    if (j.contains("task")) {
      const auto& t = j.at("task");
      require_keys(t, "task",
                   {"kind", "modalities", "prediction_ratio", "pilot_spacing", "n_beams", "distance_scale", "topk", "csi_snr_db"});
      if (t.contains("kind")) c.task.kind = parse_task(t.at("kind").get<std::string>());
      if (t.contains("modalities")) c.task.modalities = modalities_from(t.at("modalities"));
      read(t, "prediction_ratio", c.task.prediction_ratio);
      read(t, "pilot_spacing", c.task.pilot_spacing);
      read(t, "n_beams", c.task.n_beams);
      read(t, "distance_scale", c.task.distance_scale);
      read(t, "topk", c.task.topk);
      if (t.contains("csi_snr_db"))
        c.task.csi_snr_db = t.at("csi_snr_db").is_null() ? std::nullopt : std::optional(t.at("csi_snr_db").get<double>());
    }
    if (j.contains("finetune")) {
      const auto& f = j.at("finetune");
      require_keys(f, "finetune", {"steps", "batch_size", "lr_max", "lr_min", "freeze", "train_fraction"});
      read(f, "steps", c.finetune.steps);
      read(f, "batch_size", c.finetune.batch_size);
      read(f, "lr_max", c.finetune.lr_max);
      read(f, "lr_min", c.finetune.lr_min);
      if (f.contains("freeze")) c.finetune.freeze = parse_freeze(f.at("freeze").get<std::string>());
      read(f, "train_fraction", c.finetune.train_fraction);
    }
    if (j.contains("eval")) {
      require_keys(j.at("eval"), "eval", {"batch_size"});
      read(j.at("eval"), "batch_size", c.eval_batch_size);
    }
    c.sync_tokenizer();
    c.validate();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << to_json(c).dump(2) << "\n";
}

std::string canonical_json(const RunConfig& c) { return to_json(c).dump(); }

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string config_fingerprint(const RunConfig& c) { return sha256_hex(canonical_json(c)); }

std::string model_fingerprint(const RunConfig& c) {
  const json full = to_json(c);
  const json arch = {{"csi", {c.synth.n_antennas, c.synth.n_subcarriers}},
                     {"radar", c.synth.radar_map.rows},
                     {"map", c.synth.map_resolution},
                     {"patches", full.at("patches")},
                     {"model", full.at("model")}};
  return sha256_hex(arch.dump());
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::vector<Modality> parse_modality_list(const std::string& csv) {
  std::vector<Modality> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      const Modality m = parse_modality(item);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

}  // namespace misac
