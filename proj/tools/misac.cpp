// SPDX-License-Identifier: Apache-2.0
//
// misac: synthesize data, pre-train, fine-tune, evaluate and inspect routing.
// Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>

#include "misac/runner.hpp"

namespace {

using misac::ConfigError;

struct Common {
  std::string config;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  std::optional<std::string> modalities;
  std::optional<std::string> freeze;
  std::string log;
};

misac::RunConfig resolve(const Common& c) {
  misac::RunConfig cfg = c.config.empty() ? misac::preset_config(c.preset) : misac::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  try {
    if (c.task) cfg.task.kind = misac::parse_task(*c.task);
    if (c.modalities) cfg.task.modalities = misac::parse_modality_list(*c.modalities);
    if (c.freeze) cfg.finetune.freeze = misac::parse_freeze(*c.freeze);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

// Step logs go to --log when given, else stderr; stdout carries one JSON record.
std::unique_ptr<std::ofstream> open_log(const std::string& path) {
  if (path.empty()) return nullptr;
  auto f = std::make_unique<std::ofstream>(path);
  if (!*f) throw ConfigError("cannot open log file " + path);
  return f;
}

nlohmann::ordered_json metric_line(const misac::Report& r) {
  return {{"name", r.metric.name}, {"value", r.metric.value}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"misac: multimodal sensing and communication foundation model"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--preset", common.preset, "Preset used when no --config is given")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", common.seed, "Override the run seed");
  app.add_option("--log", common.log, "Write per-step JSON lines here instead of stderr");

  std::string out, dataset, checkpoint, drop;
  bool resume = false, force = false, scratch = false;
  std::optional<std::size_t> steps;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multimodal dataset");
  synth->add_option("--out", out, "Output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Self-supervised pre-training");
  pretrain->add_option("--dataset", dataset, "Dataset directory")->required();
  pretrain->add_option("--out", out, "Checkpoint path")->required();
  pretrain->add_flag("--resume", resume, "Continue from the checkpoint at --out");
  pretrain->add_flag("--force", force, "Overwrite an existing checkpoint or ignore a fingerprint mismatch");
  pretrain->add_option("--steps", steps, "Stop after this many steps in this invocation");

  auto* finetune = app.add_subcommand("finetune", "Fine-tune a downstream task and evaluate it");
  finetune->add_option("--dataset", dataset, "Dataset directory")->required();
  finetune->add_option("--checkpoint", checkpoint, "Pre-trained checkpoint");
  finetune->add_option("--out", out, "Write the fine-tuned checkpoint here");
  finetune->add_flag("--scratch", scratch, "Start from random weights");
  finetune->add_option("--task", common.task, "Task kind")
      ->check(CLI::IsMember({"channel_prediction", "channel_estimation", "beam_prediction", "distance_estimation",
                             "aoa_estimation"}));
  finetune->add_option("--modalities", common.modalities, "Comma-separated input modalities");
  finetune->add_option("--freeze", common.freeze, "full or head")->check(CLI::IsMember({"full", "head"}));
  finetune->add_flag("--force", force, "Ignore a fingerprint mismatch");

  auto* eval = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  eval->add_option("--dataset", dataset, "Dataset directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Fine-tuned checkpoint")->required();
  eval->add_option("--task", common.task, "Task kind");
  eval->add_option("--modalities", common.modalities, "Comma-separated input modalities");
  eval->add_option("--drop-modality", drop, "Comma-separated modalities removed at inference");
  eval->add_flag("--force", force, "Ignore a fingerprint mismatch");

  auto* stats = app.add_subcommand("stats", "Routing statistics and parameter counts");
  stats->add_option("--dataset", dataset, "Dataset directory")->required();
  stats->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  stats->add_option("--out", out, "Routing CSV path")->required();
  stats->add_flag("--force", force, "Ignore a fingerprint mismatch");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const misac::RunConfig cfg = resolve(common);
    auto log_file = open_log(common.log);
    std::ostream* log = log_file ? static_cast<std::ostream*>(log_file.get()) : &std::cerr;

    if (synth->parsed()) {
      const auto s = misac::cmd_synth(cfg, out);
      nlohmann::ordered_json j = {{"manifest", s.manifest.string()},
                                  {"manifest_sha256", s.manifest_sha256},
                                  {"n", s.n},
                                  {"counts", {{"csi", s.counts.csi}, {"radar", s.counts.radar}, {"map", s.counts.map}}}};
      std::cout << j.dump() << "\n";
      std::cerr << "synth: " << s.n << " samples (csi " << s.counts.csi << ", radar " << s.counts.radar << ", map "
                << s.counts.map << ") -> " << s.manifest.string() << "\n";
    } else if (pretrain->parsed()) {
      misac::PretrainOptions opt;
      opt.resume = resume;
      opt.force = force;
      opt.max_steps = steps;
      opt.log = log;
      const auto s = misac::cmd_pretrain(cfg, dataset, out, opt);
      nlohmann::ordered_json j = {{"checkpoint", out},
                                  {"step", s.step},
                                  {"steps_run", s.steps_run},
                                  {"last", nlohmann::ordered_json::parse(misac::loss_json(s.step > 0 ? s.step - 1 : 0, s.last))}};
      std::cout << j.dump() << "\n";
      std::cerr << "pretrain: step " << s.step << "/" << cfg.pretrain.steps << ", total loss " << s.last.total << "\n";
    } else if (finetune->parsed()) {
      misac::FinetuneOptions opt;
      opt.scratch = scratch;
      opt.force = force;
      if (!checkpoint.empty()) opt.checkpoint_in = checkpoint;
      if (!out.empty()) opt.checkpoint_out = out;
      opt.log = log;
      const auto r = misac::cmd_finetune(cfg, dataset, opt);
      std::cout << r.to_json().dump() << "\n";
      std::cerr << "finetune " << r.task << " (" << r.init << ", " << r.freeze << "): " << metric_line(r).dump() << "\n";
    } else if (eval->parsed()) {
      const auto dropped = misac::parse_modality_list(drop);
      const auto r = misac::cmd_eval(cfg, dataset, checkpoint, dropped, force);
      std::cout << r.to_json().dump() << "\n";
      std::cerr << "eval " << r.task << ": " << metric_line(r).dump() << "\n";
    } else if (stats->parsed()) {
      const auto s = misac::cmd_stats(cfg, dataset, checkpoint, out, force);
      nlohmann::ordered_json j = {{"csv", s.csv.string()},
                                  {"params_total", s.params.total},
                                  {"params_expert", s.params.expert},
                                  {"params_activated", s.params.activated},
                                  {"flops_per_sample", s.params.flops_per_sample}};
      std::cout << j.dump() << "\n";
      std::cerr << "stats: " << s.params.total << " parameters, " << s.params.activated << " activated per token\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const misac::AvailabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
