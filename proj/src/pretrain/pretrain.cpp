// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "misac/ops.hpp"
#include "misac/pretrain.hpp"
#include "misac/synth/channel.hpp"

namespace misac {

void PretrainConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  };
  require(std::isfinite(weights.lambda_cl) && weights.lambda_cl >= 0.0, "pretrain: lambda_cl must be >= 0");
  require(std::isfinite(weights.lambda_lb) && weights.lambda_lb >= 0.0, "pretrain: lambda_lb must be >= 0");
  require(tau > 0.0, "pretrain: tau must be positive");
  require(std::isfinite(snr_min_db) && snr_min_db <= snr_max_db && std::isfinite(snr_max_db), "pretrain: invalid SNR range");
  require(ratio_min > 0.0 && ratio_min <= ratio_max && ratio_max < 1.0, "pretrain: mask ratios must satisfy 0 < min <= max < 1");
  require(comb_min >= 1 && comb_min <= comb_max, "pretrain: invalid comb spacing range");
  require(modality_dropout >= 0.0 && modality_dropout <= 1.0, "pretrain: modality_dropout must lie in [0, 1]");
  require(batch_size >= 1, "pretrain: batch_size must be >= 1");
  require(lr_max > 0.0 && lr_min >= 0.0 && lr_min <= lr_max, "pretrain: need 0 <= lr_min <= lr_max, lr_max > 0");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0,
          "pretrain: invalid Adam parameters");
}

bool PreparedSample::has(Modality m) const {
  for (Modality p : present)
    if (p == m) return true;
  return false;
}

MaskKind draw_csi_scheme(Rng& rng) {
  static constexpr MaskKind kinds[] = {MaskKind::random, MaskKind::frequency, MaskKind::comb};
  return kinds[rng.uniform_int(0, 2)];
}

namespace {

Tensor csi_tensor(const ComplexTensor& h, double scale) {
  std::vector<double> v(2 * h.numel());
  for (std::size_t i = 0; i < h.numel(); ++i) {
    v[2 * i] = h.re[i] / scale;
    v[2 * i + 1] = h.im[i] / scale;
  }
  return Tensor::from_data({h.shape.at(0), h.shape.at(1), 2}, std::move(v));
}

}  // namespace

std::vector<PreparedSample> prepare_batch(std::span<const synth::MultimodalSample* const> samples,
                                          const ModelConfig& mcfg, const PretrainConfig& cfg, MaskKind csi_scheme,
                                          Rng& rng) {
  std::vector<PreparedSample> out;
  const auto& tok = mcfg.encoder.tokenizer;
  for (const auto* s : samples) {
    PreparedSample p;
    for (Modality m : kModalities)
      if (has_modality(*s, m)) p.present.push_back(m);
    if (p.present.empty()) throw AvailabilityError("prepare_batch: sample without any modality");
    for (Modality m : {Modality::map, Modality::radar}) {
      const bool drop = rng.bernoulli(cfg.modality_dropout);
      if (drop && p.has(m) && p.present.size() > 1) std::erase(p.present, m);
    }
    for (Modality m : p.present) {
      const auto i = static_cast<std::size_t>(m);
      const auto& spec = tok.spec(m);
      const Preprocessed pre = preprocess(*s, m);
      p.target[i] = patchify(pre.x, spec.patch_h, spec.patch_w);
      MaskScheme scheme = MaskScheme::random(rng.uniform(cfg.ratio_min, cfg.ratio_max));
      if (m == Modality::csi) {
        p.csi_scale = pre.scale;
        const double snr = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
        p.input[i] = csi_tensor(synth::add_awgn(*s->csi, snr, rng).h, pre.scale);
        if (csi_scheme == MaskKind::frequency) scheme = MaskScheme::frequency(scheme.ratio);
        if (csi_scheme == MaskKind::comb) {
          scheme = MaskScheme::comb(static_cast<std::size_t>(
              rng.uniform_int(static_cast<std::int64_t>(cfg.comb_min), static_cast<std::int64_t>(cfg.comb_max))));
        }
      } else {
        p.input[i] = pre.x;
      }
      p.masks[i] = sample_mask(scheme, spec.grid_rows(), spec.grid_cols(), rng, spec.patch_w);
    }
    out.push_back(std::move(p));
  }
  return out;
}

LossTensors pretrain_objective(std::span<const PreparedSample> batch, const ParamStore& ps, const ModelConfig& mcfg,
                               const PretrainConfig& cfg, RoutingTrace* trace) {
  if (batch.empty()) throw std::invalid_argument("pretrain_objective: empty batch");
  std::vector<MaskedError> terms;
  std::vector<Tensor> zc, zr, zm;
  RoutingStats stats(mcfg.encoder.n_layers);
  std::size_t masked_tokens = 0, tokens = 0;
  for (const auto& s : batch) {
    std::vector<Tensor> inputs;
    std::vector<MaskSpec> masks;
    for (Modality m : s.present) {
      inputs.push_back(s.input[static_cast<std::size_t>(m)]);
      masks.push_back(s.masks[static_cast<std::size_t>(m)]);
    }
    const EncodeResult enc = encode_visible(s.present, inputs, masks, ps, mcfg.encoder, trace);
    stats.merge(enc.stats);
    for (Modality m : s.present) {
      const auto i = static_cast<std::size_t>(m);
      const Tensor latent = segment_rows(enc, m);
      if (!latent.defined()) throw std::invalid_argument(std::string("pretrain: no visible ") + modality_name(m) + " token");
      const Tensor recon = decode_modality(latent, s.masks[i], m, ps, mcfg);
      terms.push_back(masked_error(recon, s.target[i], s.masks[i]));
      masked_tokens += s.masks[i].masked.size();
      tokens += s.masks[i].n_tokens();
    }
    if (s.present.size() == kModalities.size()) {
      auto z = [&](Modality m) {
        const std::string p = std::string("proj.") + modality_name(m) + ".";
        return contrastive_embedding(segment_rows(enc, m), ps.at(p + "w"), ps.at(p + "b"));
      };
      zc.push_back(z(Modality::csi));
      zr.push_back(z(Modality::radar));
      zm.push_back(z(Modality::map));
    }
  }
  LossTensors out;
  out.l_mask = mask_loss(terms);
  for (const auto& t : terms) out.l_mask_raw += t.sse.item();
  const ContrastiveResult cl = contrastive_loss(zc, zr, zm, cfg.tau);
  out.l_cl = cl.loss;
  out.cl_skipped = cl.skipped;
  out.complete = cl.complete;
  out.l_lb = load_balance_loss(stats, mcfg.encoder.n_experts);
  out.total = total_loss(out.l_mask, out.l_cl, out.l_lb, cfg.weights);
  out.masked_fraction = tokens ? static_cast<double>(masked_tokens) / static_cast<double>(tokens) : 0.0;
  return out;
}

PretrainLoss pretrain_step(std::span<const synth::MultimodalSample* const> batch, const ParamStore& ps,
                           const ModelConfig& mcfg, const PretrainConfig& cfg, Adam& opt, double lr, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  const MaskKind scheme = draw_csi_scheme(rng);
  const auto prepared = prepare_batch(batch, mcfg, cfg, scheme, rng);
  opt.zero_grad();
  Tape tape;
  LossTensors lt;
  {
    Tape::Scope scope(tape);
    lt = pretrain_objective(prepared, ps, mcfg, cfg);
  }
  backward(lt.total, tape);
  opt.step(lr);
  PretrainLoss r;
  r.l_mask = lt.l_mask.item();
  r.l_mask_raw = lt.l_mask_raw;
  r.l_cl = lt.l_cl.item();
  r.l_lb = lt.l_lb.item();
  r.total = lt.total.item();
  r.cl_skipped = lt.cl_skipped;
  r.complete_triplets = lt.complete;
  r.masked_fraction = lt.masked_fraction;
  r.lr = lr;
  return r;
}

std::string loss_json(std::size_t step, const PretrainLoss& l) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["l_mask"] = l.l_mask;
  j["l_mask_raw"] = l.l_mask_raw;
  j["l_cl"] = l.l_cl;
  j["l_lb"] = l.l_lb;
  j["total"] = l.total;
  j["lr"] = l.lr;
  j["masked_fraction"] = l.masked_fraction;
  j["complete_triplet_count"] = l.complete_triplets;
  j["cl_skipped"] = l.cl_skipped;
  return j.dump();
}

}  // namespace misac
