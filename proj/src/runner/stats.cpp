// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <regex>

#include "misac/runner.hpp"

namespace misac {

ParamReport count_params(const ParamStore& ps, const ModelConfig& mcfg) {
  static const std::regex expert_name(R"(^enc\.\d+\.[a-z]+\.e\d+\.)");
  ParamReport r;
  for (const auto& [name, t] : ps.items()) {
    r.total += t.numel();
    if (std::regex_search(name, expert_name)) r.expert += t.numel();
  }
  const auto& e = mcfg.encoder;
  r.activated = static_cast<double>(r.total - r.expert) +
                static_cast<double>(r.expert) * static_cast<double>(e.top_k) / static_cast<double>(e.n_experts);
  return r;
}

// Multiply-adds counted as two FLOPs; norms, softmax and activations ignored.
double estimate_flops(const ModelConfig& mcfg, const TaskConfig& tcfg) {
  const auto& e = mcfg.encoder;
  const double d = static_cast<double>(e.d());
  const double h = static_cast<double>(e.hidden());
  const double K = static_cast<double>(e.n_experts);
  const double k = static_cast<double>(e.top_k);

  double n = 0.0, flops = 0.0;
  for (Modality m : tcfg.modalities) {
    const auto& spec = e.tokenizer.spec(m);
    double tokens = static_cast<double>(spec.n_tokens());
    if (m == Modality::csi && is_reconstruction(tcfg.kind))
      tokens = static_cast<double>(task_mask(tcfg, mcfg).visible.size());
    n += tokens;
    flops += 2.0 * tokens * static_cast<double>(spec.patch_dim()) * d;
  }
  const double attn = 8.0 * n * d * d + 4.0 * n * n * d;
  const double gates = 2.0 * n * (2.0 * d) * K + 2.0 * n * d * K;
  const double experts = 2.0 * k * n * 4.0 * d * h;  // shared and specific pool per token
  flops += static_cast<double>(e.n_layers) * (attn + gates + experts);

  if (is_reconstruction(tcfg.kind)) {
    const auto& spec = e.tokenizer.spec(Modality::csi);
    const double nc = static_cast<double>(spec.n_tokens());
    flops += static_cast<double>(mcfg.decoder_layers) * (8.0 * nc * d * d + 4.0 * nc * nc * d + 4.0 * nc * d * h);
    flops += 2.0 * nc * d * static_cast<double>(spec.patch_dim());
  } else {
    flops += 2.0 * d * static_cast<double>(tcfg.output_dim(mcfg));
  }
  return flops;
}

void write_routing_csv(const RoutingStats& stats, std::size_t n_experts, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "layer,pool,expert,importance,load\n";
  out.precision(17);
  for (std::size_t l = 0; l < stats.n_layers; ++l) {
    for (std::size_t p = 0; p < kNumPools; ++p) {
      const PoolStats& s = stats.at(l, p);
      if (s.tokens == 0) continue;
      const auto imp = s.importance();
      const auto load = s.load();
      for (std::size_t e = 0; e < n_experts; ++e)
        out << l << "," << pool_name(p) << "," << e << "," << imp[e] << "," << load[e] << "\n";
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

StatsSummary cmd_stats(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                       const std::filesystem::path& checkpoint, const std::filesystem::path& csv_out, bool force) {
  cfg.validate();
  const Checkpoint ck = load_checkpoint(checkpoint);
  check_fingerprint(ck, cfg, FingerprintScope::model, force);
  ParamStore ps;
  Rng init_rng(cfg.seed);
  init_model(ps, cfg.model, init_rng);
  restore_params(ck, ps);

  const synth::Dataset ds = synth::load_dataset(dataset_dir);
  StatsSummary out;
  out.routing = RoutingStats(cfg.model.encoder.n_layers);
  for (const auto& s : ds.samples) {
    std::vector<Modality> present;
    std::vector<Tensor> inputs;
    std::vector<MaskSpec> masks;
    for (Modality m : kModalities) {
      const auto av = s.availability();
      const bool has = m == Modality::csi ? av.csi : m == Modality::radar ? av.radar : av.map;
      if (!has) continue;
      const auto& spec = cfg.model.encoder.tokenizer.spec(m);
      present.push_back(m);
      inputs.push_back(preprocess(s, m).x);
      masks.push_back(empty_mask(spec.grid_rows(), spec.grid_cols()));
    }
    const EncodeResult r = encode_visible(present, inputs, masks, ps, cfg.model.encoder);
    out.routing.merge(r.stats);
  }
  write_routing_csv(out.routing, cfg.model.encoder.n_experts, csv_out);
  out.csv = csv_out;
  out.params = count_params(ps, cfg.model);
  out.params.flops_per_sample = estimate_flops(cfg.model, cfg.task);
  return out;
}

}  // namespace misac
