// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "misac/runner.hpp"

namespace misac {

namespace {

// Substream indices off the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kPretrainStream = 3;
constexpr std::uint64_t kFinetuneStream = 4;
constexpr std::uint64_t kEvalStream = 5;

synth::Dataset load_compatible(const RunConfig& cfg, const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json")) throw ConfigError("no dataset manifest in " + dir.string());
  synth::Dataset ds = synth::load_dataset(dir);
  const auto& a = ds.config;
  const auto& b = cfg.synth;
  if (a.n_antennas != b.n_antennas || a.n_subcarriers != b.n_subcarriers || a.radar_map.rows != b.radar_map.rows ||
      a.radar_map.cols != b.radar_map.cols || a.map_resolution != b.map_resolution || a.n_beams != b.n_beams)
    throw ConfigError("dataset " + dir.string() + " was generated with different dimensions than the configuration");
  if (ds.samples.empty()) throw ConfigError("dataset " + dir.string() + " is empty");
  return ds;
}

ParamStore fresh_model(const RunConfig& cfg) {
  ParamStore ps;
  Rng rng = Rng::substream(cfg.seed, kInitStream);
  init_model(ps, cfg.model, rng);
  return ps;
}

void add_head(ParamStore& ps, const RunConfig& cfg) {
  Rng rng = Rng::substream(cfg.seed, kHeadStream);
  init_task_head(ps, cfg.model, cfg.task, rng);
}

bool contains(std::span<const Modality> ms, Modality m) { return std::find(ms.begin(), ms.end(), m) != ms.end(); }

bool needs_csi(TaskKind k) { return k != TaskKind::distance_estimation && k != TaskKind::aoa_estimation; }

bool eligible(const synth::MultimodalSample& s, const TaskConfig& t, std::span<const Modality> drop) {
  const auto av = s.availability();
  bool any = false;
  for (Modality m : t.modalities) {
    const bool has = m == Modality::csi ? av.csi : m == Modality::radar ? av.radar : av.map;
    if (has && !contains(drop, m)) any = true;
  }
  if (needs_csi(t.kind) && (!av.csi || contains(drop, Modality::csi))) return false;
  return any;
}

struct Split {
  std::vector<const synth::MultimodalSample*> train, eval;
};

Split split_dataset(const synth::Dataset& ds, const RunConfig& cfg, std::span<const Modality> drop = {}) {
  const auto n_train = static_cast<std::size_t>(cfg.finetune.train_fraction * static_cast<double>(ds.samples.size()));
  Split s;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (!eligible(ds.samples[i], cfg.task, i < n_train ? std::span<const Modality>{} : drop)) continue;
    (i < n_train ? s.train : s.eval).push_back(&ds.samples[i]);
  }
  return s;
}

// Partial Fisher-Yates: k distinct indices out of n.
std::vector<std::size_t> draw_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)))]);
  idx.resize(k);
  return idx;
}

nlohmann::ordered_json metric_json(const TaskMetric& m) {
  return {{"name", m.name}, {"value", m.value}, {"n_samples", m.n_samples}};
}

nlohmann::json names_of(std::span<const Modality> ms) {
  nlohmann::json a = nlohmann::json::array();
  for (Modality m : ms) a.push_back(modality_name(m));
  return a;
}

}  // namespace

std::string encoder_hash(const ParamStore& ps) {
  std::string bytes;
  for (const auto& [name, t] : ps.items()) {
    if (name.rfind("enc.", 0) != 0 && name.rfind("embed.", 0) != 0) continue;
    bytes += name;
    bytes.push_back('\0');
    const auto d = t.data();
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

SynthSummary cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const synth::Dataset ds = synth::synth_dataset(cfg.n_samples, cfg.synth, cfg.seed);
  SynthSummary s;
  s.manifest = synth::write_dataset(ds, out_dir);
  s.manifest_sha256 = file_sha256(s.manifest);
  s.n = ds.samples.size();
  s.counts = ds.counts();
  return s;
}

PretrainSummary cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                             const std::filesystem::path& checkpoint_out, const PretrainOptions& opt) {
  cfg.validate();
  const synth::Dataset ds = load_compatible(cfg, dataset_dir);
  if (cfg.pretrain.batch_size > ds.samples.size()) throw ConfigError("pretrain.batch_size exceeds the dataset size");

  ParamStore ps = fresh_model(cfg);
  Adam adam(ps.tensors(), cfg.pretrain.adam);
  Rng run_rng = Rng::substream(cfg.seed, kPretrainStream);
  std::size_t step = 0;

  const bool exists = std::filesystem::exists(checkpoint_out);
  if (opt.resume && exists) {
    const Checkpoint ck = load_checkpoint(checkpoint_out);
    if (ck.kind != "pretrain") throw ConfigError(checkpoint_out.string() + " is not a pre-training checkpoint");
    check_fingerprint(ck, cfg, FingerprintScope::full, opt.force);
    restore_params(ck, ps);
    if (ck.adam_m.size() == ps.size()) adam.load_state(ck.adam_steps, ck.adam_m, ck.adam_v);
    run_rng.set_state(ck.rng_state);
    step = static_cast<std::size_t>(ck.step);
  } else if (exists && !opt.force) {
    throw ConfigError(checkpoint_out.string() + " exists; pass --resume to continue or --force to overwrite");
  }

  auto save = [&] {
    Checkpoint ck = make_checkpoint(cfg, ps, "pretrain");
    ck.step = step;
    ck.rng_state = run_rng.state();
    ck.adam_steps = adam.steps();
    ck.adam_m = adam.first_moments();
    ck.adam_v = adam.second_moments();
    save_checkpoint(ck, checkpoint_out);
  };

  PretrainSummary summary;
  const std::size_t total = cfg.pretrain.steps;
  while (step < total && (!opt.max_steps || summary.steps_run < *opt.max_steps)) {
    Rng step_rng(run_rng.next_u64());
    const auto idx = draw_indices(ds.samples.size(), cfg.pretrain.batch_size, step_rng);
    std::vector<const synth::MultimodalSample*> batch;
    for (auto i : idx) batch.push_back(&ds.samples[i]);
    const double lr = cosine_lr(step, total, cfg.pretrain.lr_max, cfg.pretrain.lr_min);
    // A non-finite loss throws before the optimizer moves; the last checkpoint stays intact.
    summary.last = pretrain_step(batch, ps, cfg.model, cfg.pretrain, adam, lr, step_rng);
    if (opt.log) *opt.log << loss_json(step, summary.last) << "\n";
    ++step;
    ++summary.steps_run;
    if (step % cfg.checkpoint_every == 0 || step == total) save();
  }
  if (summary.steps_run > 0 && step % cfg.checkpoint_every != 0 && step != total) save();
  summary.step = step;
  return summary;
}

nlohmann::ordered_json Report::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["dataset_sha256"] = dataset_sha256;
  j["modalities"] = names_of(modalities);
  j["dropped"] = names_of(dropped);
  j["metric"] = metric_json(metric);
  if (full_metric) {
    j["full_metric"] = metric_json(*full_metric);
    j["delta"] = metric.value - full_metric->value;
  }
  j["seed"] = seed;
  j["init"] = init;
  j["freeze"] = freeze;
  if (first_loss) j["first_loss"] = *first_loss;
  if (final_loss) j["final_loss"] = *final_loss;
  j["steps"] = steps;
  j["encoder_sha256_before"] = encoder_sha256_before;
  j["encoder_sha256_after"] = encoder_sha256_after;
  return j;
}

Report cmd_finetune(const RunConfig& cfg, const std::filesystem::path& dataset_dir, const FinetuneOptions& opt) {
  cfg.validate();
  const synth::Dataset ds = load_compatible(cfg, dataset_dir);
  ParamStore ps = fresh_model(cfg);
  Report r;
  r.init = "scratch";
  if (!opt.scratch) {
    if (!opt.checkpoint_in) throw ConfigError("finetune needs --checkpoint (or --scratch)");
    const Checkpoint ck = load_checkpoint(*opt.checkpoint_in);
    check_fingerprint(ck, cfg, FingerprintScope::model, opt.force);
    restore_params(ck, ps);
    r.init = "pretrained";
  }
  add_head(ps, cfg);

  const Split split = split_dataset(ds, cfg);
  if (split.train.empty() || split.eval.empty())
    throw ConfigError(std::string("no eligible samples for ") + task_name(cfg.task.kind) + " in one of the splits");

  r.task = task_name(cfg.task.kind);
  r.dataset_sha256 = file_sha256(dataset_dir / "manifest.json");
  r.modalities = cfg.task.modalities;
  r.seed = cfg.seed;
  r.freeze = freeze_name(cfg.finetune.freeze);
  r.encoder_sha256_before = encoder_hash(ps);

  Adam adam(trainable_params(ps, cfg.task, cfg.finetune.freeze), cfg.pretrain.adam);
  const auto& f = cfg.finetune;
  for (std::size_t step = 0; step < f.steps; ++step) {
    Rng rng = Rng::substream(cfg.seed ^ kFinetuneStream, step);
    const auto idx = draw_indices(split.train.size(), f.batch_size, rng);
    std::vector<const synth::MultimodalSample*> chunk;
    for (auto i : idx) chunk.push_back(split.train[i]);
    const auto batch = prepare_task_batch(chunk, cfg.model, cfg.task, rng);
    const double lr = cosine_lr(step, f.steps, f.lr_max, f.lr_min);
    const FinetuneResult res = finetune_step(batch, ps, cfg.model, cfg.task, adam, lr);
    if (!std::isfinite(res.loss)) throw NumericError("finetune: non-finite loss at step " + std::to_string(step));
    if (!r.first_loss) r.first_loss = res.loss;
    r.final_loss = res.loss;
    if (opt.log) {
      nlohmann::ordered_json line = {{"step", step}, {"loss", res.loss}, {"lr", lr}, {res.metric.name, res.metric.value}};
      *opt.log << line.dump() << "\n";
    }
  }
  r.steps = f.steps;
  r.encoder_sha256_after = encoder_hash(ps);
  r.metric = evaluate_task(split.eval, ps, cfg.model, cfg.task, cfg.eval_batch_size, cfg.seed ^ kEvalStream);
  if (opt.checkpoint_out) save_checkpoint(make_checkpoint(cfg, ps, "finetune"), *opt.checkpoint_out);
  return r;
}

Report cmd_eval(const RunConfig& cfg, const std::filesystem::path& dataset_dir, const std::filesystem::path& checkpoint,
                std::span<const Modality> drop, bool force) {
  cfg.validate();
  bool any_left = false;
  for (Modality m : cfg.task.modalities) any_left = any_left || !contains(drop, m);
  if (!any_left) throw ConfigError("--drop-modality removes every modality of the task");
  if (needs_csi(cfg.task.kind) && contains(drop, Modality::csi))
    throw ConfigError(std::string(task_name(cfg.task.kind)) + " cannot run without csi");

  const synth::Dataset ds = load_compatible(cfg, dataset_dir);
  const Checkpoint ck = load_checkpoint(checkpoint);
  check_fingerprint(ck, cfg, FingerprintScope::model, force);
  ParamStore ps = fresh_model(cfg);
  add_head(ps, cfg);
  if (!is_reconstruction(cfg.task.kind) && !ck.params.count(head_prefix(cfg.task.kind) + "w") && !force)
    throw ConfigError(std::string("checkpoint carries no ") + task_name(cfg.task.kind) + " head; fine-tune first");
  restore_params(ck, ps);

  const Split split = split_dataset(ds, cfg, drop);
  if (split.eval.empty()) throw ConfigError("no eligible evaluation samples");

  Report r;
  r.task = task_name(cfg.task.kind);
  r.dataset_sha256 = file_sha256(dataset_dir / "manifest.json");
  r.modalities = cfg.task.modalities;
  r.dropped.assign(drop.begin(), drop.end());
  r.seed = cfg.seed;
  r.init = "checkpoint";
  r.freeze = freeze_name(cfg.finetune.freeze);
  r.encoder_sha256_before = r.encoder_sha256_after = encoder_hash(ps);
  const std::uint64_t seed = cfg.seed ^ kEvalStream;
  r.metric = evaluate_task(split.eval, ps, cfg.model, cfg.task, cfg.eval_batch_size, seed, drop);
  if (!drop.empty()) r.full_metric = evaluate_task(split.eval, ps, cfg.model, cfg.task, cfg.eval_batch_size, seed);
  return r;
}

}  // namespace misac
