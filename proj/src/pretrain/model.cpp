// SPDX-License-Identifier: Apache-2.0

#include <numeric>
#include <stdexcept>

#include "misac/ops.hpp"
#include "misac/pretrain.hpp"

namespace misac {

void ModelConfig::validate() const {
  encoder.validate();
  if (decoder_layers == 0) throw std::invalid_argument("model: decoder_layers must be positive");
}

std::string decoder_prefix(Modality m) { return std::string("dec.") + modality_name(m) + "."; }

namespace {

std::string block_prefix(Modality m, std::size_t l) { return decoder_prefix(m) + std::to_string(l) + "."; }

}  // namespace

void init_model(ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  init_encoder(ps, cfg.encoder, rng);
  const std::size_t d = cfg.encoder.d(), hidden = cfg.encoder.hidden();
  for (Modality m : kModalities) {
    const auto& spec = cfg.encoder.tokenizer.spec(m);
    const std::string p = decoder_prefix(m);
    ps.add(p + "mask", init_weight({d}, rng));
    ps.add(p + "pos", init_weight({spec.n_tokens(), d}, rng));
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
      const std::string bp = block_prefix(m, l);
      for (const char* n : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) ps.add(bp + n, init_weight({d, d}, rng));
      for (const char* n : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) ps.add(bp + n, init_zeros({d}));
      ps.add(bp + "attn.g_attn", init_ones({d}));
      ps.add(bp + "ffn.w1", init_weight({d, hidden}, rng));
      ps.add(bp + "ffn.b1", init_zeros({hidden}));
      ps.add(bp + "ffn.w2", init_weight({hidden, d}, rng));
      ps.add(bp + "ffn.b2", init_zeros({d}));
      ps.add(bp + "g_ffn", init_ones({d}));
    }
    ps.add(p + "out.w", init_weight({d, spec.patch_dim()}, rng));
    ps.add(p + "out.b", init_zeros({spec.patch_dim()}));
    const std::string q = std::string("proj.") + modality_name(m) + ".";
    ps.add(q + "w", init_weight({d, d}, rng));
    ps.add(q + "b", init_zeros({d}));
  }
}

Tensor decode_modality(const Tensor& latent, const MaskSpec& mask, Modality m, const ParamStore& ps,
                       const ModelConfig& cfg) {
  const auto& spec = cfg.encoder.tokenizer.spec(m);
  if (mask.n_tokens() != spec.n_tokens()) throw ShapeError(std::string("decode: mask grid does not match ") + modality_name(m));
  if (latent.rows() != mask.visible.size()) throw ShapeError("decode: one latent row per visible token required");
  const std::string p = decoder_prefix(m);
  const std::size_t n = spec.n_tokens(), nv = mask.visible.size(), d = cfg.encoder.d();
  // Row r of the grid reads latent row k for the k-th visible token, else the mask token.
  std::vector<std::size_t> src(n, nv);
  for (std::size_t k = 0; k < nv; ++k) src[mask.visible[k]] = k;
  const Tensor mask_row = ps.at(p + "mask").reshape({1, d});
  const Tensor pool = nv == 0 ? mask_row : concat_rows(std::vector<Tensor>{latent, mask_row});
  Tensor h = add(gather_rows(pool, src), ps.at(p + "pos"));
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    const std::string bp = block_prefix(m, l);
    h = attention_residual(h, ps, bp + "attn.", cfg.encoder.n_heads);
    const Tensor f = linear(gelu(linear(h, ps.at(bp + "ffn.w1"), ps.at(bp + "ffn.b1"))), ps.at(bp + "ffn.w2"),
                            ps.at(bp + "ffn.b2"));
    h = add(h, rmsnorm(f, ps.at(bp + "g_ffn")));
  }
  return linear(h, ps.at(p + "out.w"), ps.at(p + "out.b"));
}

EncodeResult encode_visible(std::span<const Modality> modalities, std::span<const Tensor> inputs,
                            std::span<const MaskSpec> masks, const ParamStore& ps, const EncoderConfig& cfg,
                            RoutingTrace* trace) {
  if (modalities.size() != inputs.size() || modalities.size() != masks.size())
    throw std::invalid_argument("encode_visible: argument lengths differ");
  std::vector<ModalityTokens> tokens;
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    if (masks[i].visible.empty()) continue;
    tokens.push_back(embed_patches(inputs[i], modalities[i], ps, cfg, &masks[i].visible));
  }
  if (tokens.empty()) throw std::invalid_argument("encode_visible: every token of every modality is masked");
  return encode(tokens, ps, cfg, trace);
}

}  // namespace misac
