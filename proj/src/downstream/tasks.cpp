// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "misac/downstream.hpp"
#include "misac/ops.hpp"
#include "misac/synth/channel.hpp"

namespace misac {

const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::channel_prediction:
      return "channel_prediction";
    case TaskKind::channel_estimation:
      return "channel_estimation";
    case TaskKind::beam_prediction:
      return "beam_prediction";
    case TaskKind::distance_estimation:
      return "distance_estimation";
    case TaskKind::aoa_estimation:
      return "aoa_estimation";
  }
  return "?";
}

TaskKind parse_task(const std::string& name) {
  for (TaskKind t : kTasks)
    if (name == task_name(t)) return t;
  throw std::invalid_argument("unknown task '" + name + "'");
}

bool is_reconstruction(TaskKind t) {
  return t == TaskKind::channel_prediction || t == TaskKind::channel_estimation;
}

const char* freeze_name(FreezePolicy f) { return f == FreezePolicy::full ? "full" : "head"; }

FreezePolicy parse_freeze(const std::string& name) {
  if (name == "full") return FreezePolicy::full;
  if (name == "head") return FreezePolicy::head_only;
  throw std::invalid_argument("unknown freeze policy '" + name + "' (expected full or head)");
}

namespace {

std::size_t predicted_columns(const TaskConfig& t, std::size_t cols) {
  return static_cast<std::size_t>(std::llround(t.prediction_ratio * static_cast<double>(cols)));
}

bool wants(const TaskConfig& t, Modality m) { return std::find(t.modalities.begin(), t.modalities.end(), m) != t.modalities.end(); }

}  // namespace

void TaskConfig::validate(const ModelConfig& mcfg) const {
  if (modalities.empty()) throw std::invalid_argument("task: at least one input modality required");
  if ((is_reconstruction(kind) || kind == TaskKind::beam_prediction) && !wants(*this, Modality::csi))
    throw std::invalid_argument(std::string("task ") + task_name(kind) + " needs csi among its inputs");
  const auto& csi = mcfg.encoder.tokenizer.spec(Modality::csi);
  if (kind == TaskKind::channel_prediction) {
    const std::size_t np = predicted_columns(*this, csi.grid_cols());
    if (!(prediction_ratio > 0.0 && prediction_ratio < 1.0) || np == 0 || np >= csi.grid_cols())
      throw std::invalid_argument("task: prediction ratio must leave both history and future columns");
  }
  if (kind == TaskKind::channel_estimation) {
    if (pilot_spacing < 2) throw std::invalid_argument("task: pilot spacing must be at least 2");
    if (comb_token_spacing(pilot_spacing, csi.patch_w) < 2)
      throw std::invalid_argument("task: pilot spacing is finer than one CSI token column");
  }
  if (kind == TaskKind::beam_prediction && (n_beams < 2 || topk < 1 || topk > n_beams))
    throw std::invalid_argument("task: need n_beams >= 2 and 1 <= topk <= n_beams");
  if (!(distance_scale > 0.0)) throw std::invalid_argument("task: distance_scale must be positive");
  if (csi_snr_db && std::isnan(*csi_snr_db)) throw std::invalid_argument("task: csi_snr_db is NaN");
}

std::size_t TaskConfig::output_dim(const ModelConfig& mcfg) const {
  switch (kind) {
    case TaskKind::channel_prediction:
    case TaskKind::channel_estimation:
      return mcfg.encoder.tokenizer.spec(Modality::csi).patch_dim();
    case TaskKind::beam_prediction:
      return n_beams;
    case TaskKind::distance_estimation:
      return 1;
    case TaskKind::aoa_estimation:
      return 2;
  }
  return 0;
}

std::string head_prefix(TaskKind t) { return std::string("head.") + task_name(t) + "."; }

void init_task_head(ParamStore& ps, const ModelConfig& mcfg, const TaskConfig& tcfg, Rng& rng) {
  tcfg.validate(mcfg);
  if (is_reconstruction(tcfg.kind)) return;
  const std::string p = head_prefix(tcfg.kind);
  if (ps.contains(p + "w")) return;
  ps.add(p + "w", init_weight({mcfg.encoder.d(), tcfg.output_dim(mcfg)}, rng));
  ps.add(p + "b", init_zeros({tcfg.output_dim(mcfg)}));
}

std::vector<Tensor> trainable_params(const ParamStore& ps, const TaskConfig& tcfg, FreezePolicy freeze) {
  if (freeze == FreezePolicy::full) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : ps.items()) {
      // Other heads and unused decoders never receive gradients; Adam skips them.
      if (name.rfind("head.", 0) == 0 && name.rfind(head_prefix(tcfg.kind), 0) != 0) continue;
      out.push_back(t);
    }
    return out;
  }
  const std::string p = is_reconstruction(tcfg.kind) ? decoder_prefix(Modality::csi) : head_prefix(tcfg.kind);
  auto out = ps.with_prefix(p);
  if (out.empty()) throw std::invalid_argument("trainable_params: no parameters under " + p);
  return out;
}

MaskSpec task_mask(const TaskConfig& tcfg, const ModelConfig& mcfg) {
  const auto& spec = mcfg.encoder.tokenizer.spec(Modality::csi);
  const std::size_t rows = spec.grid_rows(), cols = spec.grid_cols();
  std::vector<std::uint8_t> omega(rows * cols, 0);
  if (tcfg.kind == TaskKind::channel_prediction) {
    const std::size_t first = cols - predicted_columns(tcfg, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = first; c < cols; ++c) omega[r * cols + c] = 1;
  } else if (tcfg.kind == TaskKind::channel_estimation) {
    const std::size_t s = comb_token_spacing(tcfg.pilot_spacing, spec.patch_w);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) omega[r * cols + c] = c % s != 0;
  }
  return make_mask(rows, cols, omega);
}

std::vector<TaskSample> prepare_task_batch(std::span<const synth::MultimodalSample* const> samples,
                                           const ModelConfig& mcfg, const TaskConfig& tcfg, Rng& rng,
                                           std::span<const Modality> drop) {
  tcfg.validate(mcfg);
  const auto& csi_spec = mcfg.encoder.tokenizer.spec(Modality::csi);
  std::vector<TaskSample> out;
  for (const auto* s : samples) {
    TaskSample t;
    t.labels = s->labels;
    for (Modality m : kModalities) {
      if (!wants(tcfg, m) || !has_modality(*s, m)) continue;
      if (std::find(drop.begin(), drop.end(), m) != drop.end()) continue;
      t.present.push_back(m);
    }
    if (t.present.empty()) throw AvailabilityError(std::string(task_name(tcfg.kind)) + ": sample has none of the task's modalities");
    if (tcfg.kind != TaskKind::distance_estimation && tcfg.kind != TaskKind::aoa_estimation &&
        std::find(t.present.begin(), t.present.end(), Modality::csi) == t.present.end())
      throw AvailabilityError(std::string(task_name(tcfg.kind)) + ": sample lacks csi");
    for (Modality m : t.present) {
      const Preprocessed pre = preprocess(*s, m);
      auto& in = t.input[static_cast<std::size_t>(m)];
      if (m != Modality::csi) {
        in = pre.x;
        continue;
      }
      t.csi_scale = pre.scale;
      t.csi_target = patchify(pre.x, csi_spec.patch_h, csi_spec.patch_w);
      if (!tcfg.csi_snr_db) {
        in = pre.x;
        continue;
      }
      const auto noisy = synth::add_awgn(*s->csi, *tcfg.csi_snr_db, rng).h.to_tensor();
      in = scale(noisy, 1.0 / pre.scale);
    }
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

bool has(const TaskSample& s, Modality m) { return std::find(s.present.begin(), s.present.end(), m) != s.present.end(); }

EncodeResult encode_sample(const TaskSample& s, const MaskSpec& csi_mask, const ParamStore& ps, const ModelConfig& mcfg) {
  std::vector<Tensor> inputs;
  std::vector<MaskSpec> masks;
  for (Modality m : s.present) {
    inputs.push_back(s.input[static_cast<std::size_t>(m)]);
    const auto& spec = mcfg.encoder.tokenizer.spec(m);
    masks.push_back(m == Modality::csi ? csi_mask : empty_mask(spec.grid_rows(), spec.grid_cols()));
  }
  return encode_visible(s.present, inputs, masks, ps, mcfg.encoder);
}

// Physical-unit CSI from normalized patches, restricted to subcarriers >= first_sc.
ComplexTensor to_csi(const Tensor& patches, const PatchSpec& spec, double scale_factor, std::size_t first_sc) {
  const Tensor grid = unpatchify(patches.detach(), spec.height, spec.width, spec.channels, spec.patch_h, spec.patch_w);
  const std::size_t n_sc = spec.width - first_sc;
  ComplexTensor c({spec.height, n_sc});
  auto x = grid.data();
  for (std::size_t a = 0; a < spec.height; ++a)
    for (std::size_t k = 0; k < n_sc; ++k) {
      const std::size_t src = (a * spec.width + first_sc + k) * 2;
      c.set(a * n_sc + k, {x[src] * scale_factor, x[src + 1] * scale_factor});
    }
  return c;
}

std::vector<double> head_values(const Tensor& y, TaskKind kind, double distance_scale) {
  std::vector<double> v;
  auto x = y.data();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    if (kind == TaskKind::distance_estimation) v.push_back(x[r] * distance_scale);
    else v.push_back(std::atan2(x[2 * r], x[2 * r + 1]));
  }
  return v;
}

TaskMetric metric_of(TaskKind kind, const TaskConfig& tcfg, const std::vector<ComplexTensor>& pred,
                     const std::vector<ComplexTensor>& truth, const Tensor& logits, const std::vector<double>& values,
                     const std::vector<synth::Labels>& labels) {
  TaskMetric m;
  m.n_samples = labels.size();
  switch (kind) {
    case TaskKind::channel_prediction:
    case TaskKind::channel_estimation: {
      // Per-sample normalized error averaged linearly, then in dB.
      double acc = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) acc += std::pow(10.0, nmse_db(pred[i], truth[i]) / 10.0);
      m.name = "nmse_db";
      m.value = pred.empty() ? 0.0 : std::max(kNmseFloorDb, 10.0 * std::log10(acc / static_cast<double>(pred.size())));
      break;
    }
    case TaskKind::beam_prediction: {
      std::vector<std::size_t> y;
      for (const auto& l : labels) y.push_back(l.beam_index);
      m.name = "top" + std::to_string(tcfg.topk) + "_accuracy";
      m.value = topk_accuracy(logits, y, tcfg.topk);
      break;
    }
    case TaskKind::distance_estimation: {
      std::vector<double> y;
      for (const auto& l : labels) y.push_back(l.distance_m);
      m.name = "mae_m";
      m.value = mae_metric(values, y);
      break;
    }
    case TaskKind::aoa_estimation: {
      std::vector<double> y;
      for (const auto& l : labels) y.push_back(l.aoa_rad);
      m.name = "mae_rad";
      m.value = mae_metric(values, y, 2.0 * std::numbers::pi);
      break;
    }
  }
  return m;
}

}  // namespace

TaskOutput task_forward(std::span<const TaskSample> batch, const ParamStore& ps, const ModelConfig& mcfg,
                        const TaskConfig& tcfg) {
  if (batch.empty()) throw std::invalid_argument("task_forward: empty batch");
  TaskOutput out;
  const auto& spec = mcfg.encoder.tokenizer.spec(Modality::csi);
  if (is_reconstruction(tcfg.kind)) {
    const MaskSpec mask = task_mask(tcfg, mcfg);
    const std::size_t first_sc =
        tcfg.kind == TaskKind::channel_prediction ? (mask.cols - predicted_columns(tcfg, mask.cols)) * spec.patch_w : 0;
    std::vector<MaskedError> terms;
    for (const auto& s : batch) {
      if (!has(s, Modality::csi)) throw AvailabilityError("task_forward: reconstruction sample lacks csi");
      const EncodeResult enc = encode_sample(s, mask, ps, mcfg);
      const Tensor recon = decode_modality(segment_rows(enc, Modality::csi), mask, Modality::csi, ps, mcfg);
      terms.push_back(masked_error(recon, s.csi_target, mask));
      // Observed tokens are passed through; the head fills in the masked ones.
      const Tensor observed = patchify(s.input[0], spec.patch_h, spec.patch_w).detach();
      std::vector<std::size_t> pick(mask.n_tokens());
      for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = mask.omega[i] ? i : mask.n_tokens() + i;
      const Tensor merged = gather_rows(concat_rows(std::vector<Tensor>{recon.detach(), observed}), pick);
      out.csi_pred.push_back(to_csi(merged, spec, s.csi_scale, first_sc));
      out.csi_true.push_back(to_csi(s.csi_target, spec, s.csi_scale, first_sc));
    }
    out.loss = mask_loss(terms);
    return out;
  }
  std::vector<Tensor> pooled;
  for (const auto& s : batch) {
    const auto& cs = mcfg.encoder.tokenizer.spec(Modality::csi);
    pooled.push_back(mean_rows(encode_sample(s, empty_mask(cs.grid_rows(), cs.grid_cols()), ps, mcfg).h));
  }
  const std::string p = head_prefix(tcfg.kind);
  const Tensor y = linear(concat_rows(pooled), ps.at(p + "w"), ps.at(p + "b"));
  const std::size_t b = batch.size();
  switch (tcfg.kind) {
    case TaskKind::beam_prediction: {
      std::vector<std::size_t> labels;
      for (const auto& s : batch) {
        if (s.labels.beam_index >= tcfg.n_beams) throw std::out_of_range("task_forward: beam label out of range");
        labels.push_back(s.labels.beam_index);
      }
      out.logits = y.detach();
      out.loss = cross_entropy(y, labels);
      break;
    }
    case TaskKind::distance_estimation: {
      std::vector<double> t;
      for (const auto& s : batch) t.push_back(s.labels.distance_m / tcfg.distance_scale);
      out.loss = scale(sum_squares(sub(y, Tensor::from_data({b, 1}, t))), 1.0 / static_cast<double>(b));
      out.values = head_values(y, tcfg.kind, tcfg.distance_scale);
      break;
    }
    case TaskKind::aoa_estimation: {
      std::vector<double> t;
      for (const auto& s : batch) {
        t.push_back(std::sin(s.labels.aoa_rad));
        t.push_back(std::cos(s.labels.aoa_rad));
      }
      out.loss = scale(sum_squares(sub(y, Tensor::from_data({b, 2}, t))), 1.0 / static_cast<double>(2 * b));
      out.values = head_values(y, tcfg.kind, tcfg.distance_scale);
      break;
    }
    default:
      break;
  }
  return out;
}

TaskMetric task_metric(const TaskOutput& out, std::span<const TaskSample> batch, const TaskConfig& tcfg) {
  std::vector<synth::Labels> labels;
  for (const auto& s : batch) labels.push_back(s.labels);
  return metric_of(tcfg.kind, tcfg, out.csi_pred, out.csi_true, out.logits, out.values, labels);
}

FinetuneResult finetune_step(std::span<const TaskSample> batch, const ParamStore& ps, const ModelConfig& mcfg,
                             const TaskConfig& tcfg, Adam& opt, double lr) {
  ps.zero_grad();
  Tape tape;
  TaskOutput out;
  {
    Tape::Scope scope(tape);
    out = task_forward(batch, ps, mcfg, tcfg);
  }
  const double loss = out.loss.item();
  if (!std::isfinite(loss)) throw NumericError(std::string("non-finite ") + task_name(tcfg.kind) + " loss");
  backward(out.loss, tape);
  opt.step(lr);
  return {loss, task_metric(out, batch, tcfg)};
}

TaskMetric evaluate_task(std::span<const synth::MultimodalSample* const> samples, const ParamStore& ps,
                         const ModelConfig& mcfg, const TaskConfig& tcfg, std::size_t batch_size, std::uint64_t seed,
                         std::span<const Modality> drop) {
  if (batch_size == 0) throw std::invalid_argument("evaluate_task: batch_size must be positive");
  if (samples.empty()) throw std::invalid_argument("evaluate_task: no samples");
  std::vector<ComplexTensor> pred, truth;
  std::vector<double> logits, values;
  std::vector<synth::Labels> labels;
  for (std::size_t b = 0, i = 0; i < samples.size(); ++b, i += batch_size) {
    const auto chunk = samples.subspan(i, std::min(batch_size, samples.size() - i));
    Rng rng = Rng::substream(seed, b);
    const auto batch = prepare_task_batch(chunk, mcfg, tcfg, rng, drop);
    auto out = task_forward(batch, ps, mcfg, tcfg);
    std::move(out.csi_pred.begin(), out.csi_pred.end(), std::back_inserter(pred));
    std::move(out.csi_true.begin(), out.csi_true.end(), std::back_inserter(truth));
    if (out.logits.defined()) logits.insert(logits.end(), out.logits.data().begin(), out.logits.data().end());
    values.insert(values.end(), out.values.begin(), out.values.end());
    for (const auto& s : batch) labels.push_back(s.labels);
  }
  Tensor all_logits;
  if (tcfg.kind == TaskKind::beam_prediction) all_logits = Tensor::from_data({labels.size(), tcfg.n_beams}, logits);
  return metric_of(tcfg.kind, tcfg, pred, truth, all_logits, values, labels);
}

}  // namespace misac
