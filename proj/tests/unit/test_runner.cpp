// SPDX-License-Identifier: Apache-2.0

#include <unistd.h>

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "misac/mstn.hpp"
#include "misac/runner.hpp"

using namespace misac;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run_config() {
  RunConfig c = desk_preset();
  c.n_samples = 12;
  c.synth.n_antennas = 8;
  c.synth.n_subcarriers = 8;
  c.synth.radar_map.rows = c.synth.radar_map.cols = 32;
  c.synth.map_resolution = 32;
  c.model.encoder.tokenizer.d = 16;
  c.model.encoder.n_layers = 1;
  c.model.encoder.n_heads = 2;
  c.model.encoder.n_experts = 4;
  c.model.encoder.top_k = 2;
  c.pretrain.steps = 4;
  c.pretrain.batch_size = 4;
  c.checkpoint_every = 2;
  c.finetune.steps = 3;
  c.finetune.batch_size = 4;
  c.finetune.train_fraction = 0.75;
  c.eval_batch_size = 4;
  c.sync_tokenizer();
  c.validate();
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("misac_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Checkpoint small_checkpoint() {
  RunConfig cfg = tiny_run_config();
  ParamStore ps;
  Rng rng(3);
  init_model(ps, cfg.model, rng);
  Checkpoint c = make_checkpoint(cfg, ps, "pretrain");
  c.step = 17;
  c.rng_state = rng.state();
  c.adam_steps = 17;
  for (const auto& [name, t] : ps.items()) {
    c.adam_m.emplace_back(t.numel(), 0.25);
    c.adam_v.emplace_back(t.numel(), 1e-3);
  }
  return c;
}

}  // namespace

TEST_CASE("config json round trip keeps the fingerprint") {
  for (const RunConfig& c : {desk_preset(), paper_preset(), tiny_run_config()}) {
    c.validate();
    const RunConfig back = config_from_json(to_json(c));
    CHECK(canonical_json(back) == canonical_json(c));
    CHECK(config_fingerprint(back) == config_fingerprint(c));
  }
  const RunConfig p = paper_preset();
  CHECK(p.model.encoder.d() == 512);
  CHECK(p.model.encoder.tokenizer.spec(Modality::map).n_tokens() == 1024);
  CHECK(p.model.encoder.tokenizer.spec(Modality::radar).n_tokens() == 64);
}

TEST_CASE("partial config files start from the named preset") {
  const auto c = config_from_json(nlohmann::json::parse(R"({"preset":"desk","seed":11,"model":{"top_k":2}})"));
  CHECK(c.seed == 11);
  CHECK(c.model.encoder.top_k == 2);
  CHECK(c.model.encoder.n_experts == desk_preset().model.encoder.n_experts);
}

TEST_CASE("invalid configs are rejected with ConfigError") {
  using nlohmann::json;
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"modle":{}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"model":{"top_k":9}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"model":{"n_heads":3}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"patches":{"csi":[3,1]}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"task":{"n_beams":8}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"task":{"kind":"teleport"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"finetune":{"train_fraction":1.0}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"preset":"huge"})")), ConfigError);
}

TEST_CASE("fingerprint scopes") {
  const RunConfig a = tiny_run_config();
  RunConfig b = a;
  b.finetune.steps = 99;
  CHECK(config_fingerprint(a) != config_fingerprint(b));
  CHECK(model_fingerprint(a) == model_fingerprint(b));
  RunConfig c = a;
  c.model.encoder.n_experts = 8;
  CHECK(model_fingerprint(a) != model_fingerprint(c));
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint encode, decode, encode is byte-identical") {
  const Checkpoint c = small_checkpoint();
  const auto bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(d) == bytes);
  CHECK(d.step == 17);
  CHECK(d.rng_state == c.rng_state);
  CHECK(d.adam_m.size() == c.params.size());
  REQUIRE(d.params.size() == c.params.size());
  for (const auto& [name, t] : c.params) {
    const auto a = t.data();
    const auto b = d.params.at(name).data();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST_CASE("damaged checkpoints raise ChecksumError") {
  const auto bytes = encode_checkpoint(small_checkpoint());
  for (std::size_t keep : {std::size_t{0}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    CHECK_THROWS_AS(decode_checkpoint(cut), ChecksumError);
  }
  auto flipped = bytes;
  flipped[bytes.size() / 3] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(flipped), ChecksumError);

  TempDir dir("ck");
  const auto path = dir.path / "model.ck";
  save_checkpoint(small_checkpoint(), path);
  CHECK_FALSE(fs::exists(dir.path / "model.ck.tmp"));
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  fs::resize_file(path, fs::file_size(path) - 7);
  CHECK_THROWS_AS(load_checkpoint(path), ChecksumError);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.ck"), ConfigError);
}

TEST_CASE("fingerprint checks and parameter restore") {
  const RunConfig cfg = tiny_run_config();
  const Checkpoint c = small_checkpoint();
  CHECK_NOTHROW(check_fingerprint(c, cfg, FingerprintScope::full, false));
  RunConfig other = cfg;
  other.finetune.lr_max = 5e-4;
  CHECK_THROWS_AS(check_fingerprint(c, other, FingerprintScope::full, false), ConfigError);
  CHECK_NOTHROW(check_fingerprint(c, other, FingerprintScope::model, false));
  other.model.encoder.hidden_mult = 4;
  CHECK_THROWS_AS(check_fingerprint(c, other, FingerprintScope::model, false), ConfigError);
  CHECK_NOTHROW(check_fingerprint(c, other, FingerprintScope::model, true));

  ParamStore ps;
  Rng rng(99);
  init_model(ps, cfg.model, rng);
  restore_params(c, ps);
  CHECK(ps.at("embed.csi.w").data()[3] == c.params.at("embed.csi.w").data()[3]);

  ParamStore wide;
  Rng rng2(1);
  init_model(wide, other.model, rng2);
  CHECK_THROWS_AS(restore_params(c, wide), ConfigError);
}

TEST_CASE("parameter counts: activated expert parameters do not grow with K") {
  RunConfig cfg = tiny_run_config();
  ParamStore a;
  Rng r1(1);
  init_model(a, cfg.model, r1);
  const ParamReport pa = count_params(a, cfg.model);
  const double d = 16, h = 32;
  const double per_expert = 2 * d * h + h + d;
  CHECK(static_cast<double>(pa.expert) == doctest::Approx(1 * 4 * 4 * per_expert));

  cfg.model.encoder.n_experts = 8;
  ParamStore b;
  Rng r2(1);
  init_model(b, cfg.model, r2);
  const ParamReport pb = count_params(b, cfg.model);
  CHECK(pb.expert == 2 * pa.expert);
  CHECK(pb.total > pa.total);
  const double act_a = pa.activated - static_cast<double>(pa.total - pa.expert);
  const double act_b = pb.activated - static_cast<double>(pb.total - pb.expert);
  CHECK(act_a == doctest::Approx(act_b));
  CHECK(estimate_flops(cfg.model, cfg.task) > 0.0);
}

TEST_CASE("parse_modality_list") {
  const auto ms = parse_modality_list("map,csi,map");
  REQUIRE(ms.size() == 2);
  CHECK(ms[0] == Modality::map);
  CHECK(parse_modality_list("").empty());
  CHECK_THROWS_AS(parse_modality_list("csi,lidar"), ConfigError);
}

TEST_CASE("end to end: synth, resumable pretrain, finetune, eval, stats") {
  TempDir dir("e2e");
  const RunConfig cfg = tiny_run_config();
  const auto ds = dir.path / "ds";

  const auto s1 = cmd_synth(cfg, ds);
  CHECK(s1.n == 12);
  const auto s2 = cmd_synth(cfg, dir.path / "ds2");
  CHECK(s1.manifest_sha256 == s2.manifest_sha256);
  RunConfig reseeded = cfg;
  reseeded.seed = 8;
  CHECK(cmd_synth(reseeded, dir.path / "ds3").manifest_sha256 != s1.manifest_sha256);

  SUBCASE("pretrain resume is bit-identical") {
    const auto full = dir.path / "full.ck";
    const auto split = dir.path / "split.ck";
    std::ostringstream log_full, log_split;
    const auto a = cmd_pretrain(cfg, ds, full, {false, false, std::nullopt, &log_full});
    CHECK(a.step == 4);
    PretrainOptions first{false, false, 3, &log_split};
    CHECK(cmd_pretrain(cfg, ds, split, first).step == 3);
    PretrainOptions rest{true, false, std::nullopt, &log_split};
    CHECK(cmd_pretrain(cfg, ds, split, rest).step == 4);
    CHECK(mstn::read_bytes(full) == mstn::read_bytes(split));
    CHECK(log_full.str() == log_split.str());

    CHECK_THROWS_AS(cmd_pretrain(cfg, ds, full), ConfigError);
    RunConfig changed = cfg;
    changed.pretrain.lr_max = 2e-3;
    CHECK_THROWS_AS(cmd_pretrain(changed, ds, full, {true, false, std::nullopt, nullptr}), ConfigError);
    RunConfig other_dims = cfg;
    other_dims.synth.n_subcarriers = 16;
    other_dims.sync_tokenizer();
    CHECK_THROWS_AS(cmd_pretrain(other_dims, ds, dir.path / "x.ck"), ConfigError);
  }

  SUBCASE("finetune and eval agree; freeze policies") {
    const auto ck = dir.path / "pre.ck";
    cmd_pretrain(cfg, ds, ck);
    RunConfig t = cfg;
    t.task.kind = TaskKind::distance_estimation;
    t.task.modalities = {Modality::csi, Modality::radar, Modality::map};

    FinetuneOptions fo;
    fo.checkpoint_in = ck;
    fo.checkpoint_out = dir.path / "ft.ck";
    const Report r = cmd_finetune(t, ds, fo);
    CHECK(r.init == "pretrained");
    CHECK(r.metric.name == "mae_m");
    CHECK(r.encoder_sha256_before != r.encoder_sha256_after);
    CHECK(r.to_json().dump() == cmd_finetune(t, ds, fo).to_json().dump());

    const Report e = cmd_eval(t, ds, *fo.checkpoint_out, {});
    CHECK(e.metric.value == r.metric.value);
    CHECK(e.metric.n_samples == r.metric.n_samples);

    const std::vector<Modality> drop{Modality::map};
    const Report ed = cmd_eval(t, ds, *fo.checkpoint_out, drop);
    REQUIRE(ed.full_metric);
    CHECK(ed.to_json().contains("delta"));
    const std::vector<Modality> all{Modality::csi, Modality::radar, Modality::map};
    CHECK_THROWS_AS(cmd_eval(t, ds, *fo.checkpoint_out, all), ConfigError);

    RunConfig frozen = t;
    frozen.finetune.freeze = FreezePolicy::head_only;
    FinetuneOptions fh;
    fh.checkpoint_in = ck;
    const Report h = cmd_finetune(frozen, ds, fh);
    CHECK(h.encoder_sha256_before == h.encoder_sha256_after);
    CHECK(h.encoder_sha256_before == r.encoder_sha256_before);

    FinetuneOptions none;
    CHECK_THROWS_AS(cmd_finetune(t, ds, none), ConfigError);
    none.scratch = true;
    CHECK(cmd_finetune(t, ds, none).init == "scratch");

    RunConfig beam = cfg;
    beam.task.kind = TaskKind::beam_prediction;
    CHECK_THROWS_AS(cmd_eval(beam, ds, *fo.checkpoint_out, {}), ConfigError);
  }

  SUBCASE("stats csv rows are normalized") {
    const auto ck = dir.path / "pre.ck";
    cmd_pretrain(cfg, ds, ck);
    const auto csv = dir.path / "routing.csv";
    const StatsSummary st = cmd_stats(cfg, ds, ck, csv);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "layer,pool,expert,importance,load");
    std::map<std::string, std::pair<double, double>> sums;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string l, p, e, imp, load;
      std::getline(ss, l, ',');
      std::getline(ss, p, ',');
      std::getline(ss, e, ',');
      std::getline(ss, imp, ',');
      std::getline(ss, load, ',');
      sums[l + p].first += std::stod(imp);
      sums[l + p].second += std::stod(load);
      ++rows;
    }
    CHECK(rows == 1 * 4 * 4);
    for (const auto& [key, s] : sums) {
      CHECK(s.first == doctest::Approx(1.0));
      CHECK(s.second == doctest::Approx(2.0));
    }
    CHECK(st.params.total > 0);
  }
}
