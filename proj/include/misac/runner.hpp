// SPDX-License-Identifier: Apache-2.0
//
// Run configuration, checkpoints and the command implementations behind the
// `misac` tool.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "misac/downstream.hpp"
#include "misac/synth/dataset.hpp"

namespace misac {

/// Invalid user input: configuration, flags or incompatible files. Maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PatchSizes {
  std::size_t csi_h = 4, csi_w = 1;
  std::size_t radar = 8;
  std::size_t map = 8;
};

struct FinetuneSettings {
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  FreezePolicy freeze = FreezePolicy::full;
  double train_fraction = 0.8;
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 7;
  std::size_t n_samples = 256;
  synth::SynthConfig synth;
  PatchSizes patches;
  ModelConfig model;  // tokenizer is derived from synth dims and patches
  PretrainConfig pretrain;
  std::size_t checkpoint_every = 50;
  TaskConfig task;
  FinetuneSettings finetune;
  std::size_t eval_batch_size = 8;

  /// Rebuilds model.encoder.tokenizer from the synth dims and patch sizes.
  void sync_tokenizer();
  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

RunConfig desk_preset();
RunConfig paper_preset();
RunConfig preset_config(const std::string& name);

nlohmann::json to_json(const RunConfig& c);
/// Starts from the preset named in j["preset"] (default desk) and applies every given field.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& c, const std::filesystem::path& path);

/// Canonical serialization: sorted keys, no whitespace.
std::string canonical_json(const RunConfig& c);
std::string sha256_hex(const std::string& bytes);
/// Hash of the canonical full configuration.
std::string config_fingerprint(const RunConfig& c);
/// Hash of the architecture-defining part only (synth dims, patches, model).
std::string model_fingerprint(const RunConfig& c);

// ---- checkpoints -----------------------------------------------------------

struct Checkpoint {
  std::string fingerprint;        // full config
  std::string model_fingerprint;  // architecture only
  std::string kind = "pretrain";  // pretrain | finetune
  std::uint64_t step = 0;
  std::string rng_state;
  std::map<std::string, Tensor> params;
  std::uint64_t adam_steps = 0;
  std::vector<std::vector<double>> adam_m, adam_v;  // in params order
};

class ChecksumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
/// Writes atomically (temporary file, then rename).
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

enum class FingerprintScope { full, model };
/// Throws ConfigError on a mismatch unless `force`.
void check_fingerprint(const Checkpoint& c, const RunConfig& cfg, FingerprintScope scope, bool force);

Checkpoint make_checkpoint(const RunConfig& cfg, const ParamStore& ps, const std::string& kind);
/// Copies checkpoint values into matching parameters; every parameter of `ps`
/// that the checkpoint carries must agree in shape.
void restore_params(const Checkpoint& c, const ParamStore& ps);

// ---- commands --------------------------------------------------------------

struct SynthSummary {
  std::filesystem::path manifest;
  std::string manifest_sha256;
  std::size_t n = 0;
  synth::Dataset::Counts counts;
};

SynthSummary cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct PretrainOptions {
  bool resume = false;
  bool force = false;
  /// Stop after this many steps in this invocation (the run stays resumable).
  std::optional<std::size_t> max_steps;
  std::ostream* log = nullptr;  // JSON lines
};

struct PretrainSummary {
  PretrainLoss last;
  std::size_t steps_run = 0;
  std::size_t step = 0;  // global step reached
};

PretrainSummary cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                             const std::filesystem::path& checkpoint_out, const PretrainOptions& opt = {});

struct FinetuneOptions {
  bool scratch = false;
  bool force = false;
  std::optional<std::filesystem::path> checkpoint_in;   // required unless scratch
  std::optional<std::filesystem::path> checkpoint_out;  // fine-tuned model
  std::ostream* log = nullptr;
};

/// Evaluation report; `to_json` gives the emitted record.
struct Report {
  std::string task;
  std::string dataset_sha256;
  std::vector<Modality> modalities;
  std::vector<Modality> dropped;
  TaskMetric metric;
  std::optional<TaskMetric> full_metric;  // eval with drops: same model without drops
  std::uint64_t seed = 0;
  std::string init;  // pretrained | scratch | checkpoint
  std::string freeze;
  std::optional<double> first_loss, final_loss;
  std::size_t steps = 0;
  std::string encoder_sha256_before, encoder_sha256_after;

  nlohmann::ordered_json to_json() const;
};

Report cmd_finetune(const RunConfig& cfg, const std::filesystem::path& dataset_dir, const FinetuneOptions& opt);

Report cmd_eval(const RunConfig& cfg, const std::filesystem::path& dataset_dir, const std::filesystem::path& checkpoint,
                std::span<const Modality> drop, bool force = false);

struct ParamReport {
  std::size_t total = 0;
  std::size_t expert = 0;
  double activated = 0.0;
  double flops_per_sample = 0.0;  // analytic estimate, one task forward
};

/// total / expert / activated parameter counts; activated = non-expert + (top_k/K) expert.
ParamReport count_params(const ParamStore& ps, const ModelConfig& mcfg);
double estimate_flops(const ModelConfig& mcfg, const TaskConfig& tcfg);

struct StatsSummary {
  ParamReport params;
  RoutingStats routing;
  std::filesystem::path csv;
};

/// Routing statistics over the dataset (all available modalities) plus parameter counts.
StatsSummary cmd_stats(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                       const std::filesystem::path& checkpoint, const std::filesystem::path& csv_out, bool force = false);

/// Writes "layer,pool,expert,importance,load" rows.
void write_routing_csv(const RoutingStats& stats, std::size_t n_experts, const std::filesystem::path& path);

/// Hash of every encoder and embedding parameter value.
std::string encoder_hash(const ParamStore& ps);
std::string file_sha256(const std::filesystem::path& path);

std::vector<Modality> parse_modality_list(const std::string& csv);

}  // namespace misac
