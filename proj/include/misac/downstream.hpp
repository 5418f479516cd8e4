// SPDX-License-Identifier: Apache-2.0
//
// Downstream task heads, metrics and the fine-tuning loop.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "misac/pretrain.hpp"

namespace misac {

enum class TaskKind { channel_prediction, channel_estimation, beam_prediction, distance_estimation, aoa_estimation };

inline constexpr TaskKind kTasks[] = {TaskKind::channel_prediction, TaskKind::channel_estimation,
                                      TaskKind::beam_prediction, TaskKind::distance_estimation,
                                      TaskKind::aoa_estimation};

const char* task_name(TaskKind t);
TaskKind parse_task(const std::string& name);
bool is_reconstruction(TaskKind t);

enum class FreezePolicy { full, head_only };
const char* freeze_name(FreezePolicy f);
FreezePolicy parse_freeze(const std::string& name);

struct TaskConfig {
  TaskKind kind = TaskKind::beam_prediction;
  std::vector<Modality> modalities{Modality::csi};  // inputs used when present
  double prediction_ratio = 0.25;                   // fraction of token-columns predicted
  std::size_t pilot_spacing = 4;                    // subcarriers between pilots
  std::size_t n_beams = 16;
  double distance_scale = 100.0;  // meters per unit of the regression target
  std::size_t topk = 1;           // beam metric
  std::optional<double> csi_snr_db;

  void validate(const ModelConfig& mcfg) const;
  /// Width of the head output.
  std::size_t output_dim(const ModelConfig& mcfg) const;
};

std::string head_prefix(TaskKind t);

/// Adds the task head parameters (none for reconstruction tasks, which reuse the CSI decoder).
void init_task_head(ParamStore& ps, const ModelConfig& mcfg, const TaskConfig& tcfg, Rng& rng);

/// Parameters updated under a freeze policy.
std::vector<Tensor> trainable_params(const ParamStore& ps, const TaskConfig& tcfg, FreezePolicy freeze);

/// Input CSI token mask of a reconstruction task: trailing columns for
/// prediction, comb pilots for estimation.
MaskSpec task_mask(const TaskConfig& tcfg, const ModelConfig& mcfg);

// ---- metrics ---------------------------------------------------------------

inline constexpr double kNmseFloorDb = -120.0;

/// 10 log10(|pred - target|^2 / |target|^2), floored at -120 dB.
double nmse_db(const ComplexTensor& pred, const ComplexTensor& target);
double nmse_db(std::span<const double> pred, std::span<const double> target);

/// Fraction of rows whose label is among the k largest logits (ties to the lower index).
double topk_accuracy(const Tensor& logits, std::span<const std::size_t> labels, std::size_t k);

/// Mean absolute error; with a period the error is wrapped to (-period/2, period/2].
double mae_metric(std::span<const double> pred, std::span<const double> target,
                  std::optional<double> period = std::nullopt);

double wrap_angle(double x, double period);

// ---- fine-tuning -----------------------------------------------------------

struct TaskSample {
  std::vector<Modality> present;
  std::array<Tensor, 3> input;  // preprocessed
  Tensor csi_target;            // clean normalized CSI patches
  double csi_scale = 1.0;
  synth::Labels labels;
};

/// Preprocesses the task's modalities of each sample; samples lacking CSI for a
/// CSI task or lacking every requested modality raise AvailabilityError.
/// `drop` removes modalities at this stage (inference-time ablation).
std::vector<TaskSample> prepare_task_batch(std::span<const synth::MultimodalSample* const> samples,
                                           const ModelConfig& mcfg, const TaskConfig& tcfg, Rng& rng,
                                           std::span<const Modality> drop = {});

struct TaskOutput {
  Tensor loss;
  /// Per sample: reconstructed CSI in physical units (reconstruction tasks).
  std::vector<ComplexTensor> csi_pred, csi_true;
  Tensor logits;                  // beam
  std::vector<double> values;     // distance (m) or angle (rad)
};

TaskOutput task_forward(std::span<const TaskSample> batch, const ParamStore& ps, const ModelConfig& mcfg,
                        const TaskConfig& tcfg);

struct TaskMetric {
  std::string name;
  double value = 0.0;
  std::size_t n_samples = 0;
};

/// Metric of a task over the given forward output.
TaskMetric task_metric(const TaskOutput& out, std::span<const TaskSample> batch, const TaskConfig& tcfg);

struct FinetuneResult {
  double loss = 0.0;
  TaskMetric metric;
};

FinetuneResult finetune_step(std::span<const TaskSample> batch, const ParamStore& ps, const ModelConfig& mcfg,
                             const TaskConfig& tcfg, Adam& opt, double lr);

/// Metric over a whole sample set, in batches, with no gradient.
TaskMetric evaluate_task(std::span<const synth::MultimodalSample* const> samples, const ParamStore& ps,
                         const ModelConfig& mcfg, const TaskConfig& tcfg, std::size_t batch_size,
                         std::uint64_t seed, std::span<const Modality> drop = {});

}  // namespace misac
