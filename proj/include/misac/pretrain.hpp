// SPDX-License-Identifier: Apache-2.0
//
// Masked reconstruction, CSI-anchored contrastive alignment, load balancing
// and the pre-training loop.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "misac/encoder.hpp"
#include "misac/optim.hpp"
#include "misac/synth/types.hpp"

namespace misac {

// ---- masking ---------------------------------------------------------------

enum class MaskKind { none, random, frequency, comb };

struct MaskScheme {
  MaskKind kind = MaskKind::none;
  double ratio = 0.0;       // random / frequency
  std::size_t spacing = 4;  // comb, in subcarriers

  static MaskScheme none() { return {}; }
  static MaskScheme random(double r) { return {MaskKind::random, r, 0}; }
  static MaskScheme frequency(double r) { return {MaskKind::frequency, r, 0}; }
  static MaskScheme comb(std::size_t ns) { return {MaskKind::comb, 0.0, ns}; }
  void validate() const;
};

const char* mask_kind_name(MaskKind k);

/// Token-level mask over a rows x cols grid; columns are the frequency axis for CSI.
struct MaskSpec {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> visible;  // ascending
  std::vector<std::size_t> masked;   // ascending
  std::vector<std::uint8_t> omega;   // 1 where masked, per token

  std::size_t n_tokens() const { return rows * cols; }
  double masked_fraction() const;
};

MaskSpec make_mask(std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& omega);
MaskSpec empty_mask(std::size_t rows, std::size_t cols);

/// Comb token spacing for a subcarrier spacing: ns / patch_w when divisible,
/// else the nearest integer, at least 1.
std::size_t comb_token_spacing(std::size_t ns, std::size_t patch_w);

/// Draws a mask. A draw with an empty visible or masked set is retried once,
/// then std::invalid_argument is thrown. MaskKind::none yields the empty mask.
MaskSpec sample_mask(const MaskScheme& scheme, std::size_t rows, std::size_t cols, Rng& rng, std::size_t patch_w = 1);

// ---- model -----------------------------------------------------------------

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t decoder_layers = 1;

  void validate() const;
};

/// Encoder, one reconstruction decoder per modality and the contrastive projections.
void init_model(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

std::string decoder_prefix(Modality m);

/// Decoder for one modality: visible latents and mask tokens placed on the
/// full grid, decoder positions added, plain transformer blocks, projection to
/// patch pixels. Returns [N_m x patch_dim].
Tensor decode_modality(const Tensor& latent, const MaskSpec& mask, Modality m, const ParamStore& ps,
                       const ModelConfig& cfg);

/// Encodes only visible tokens of each preprocessed input.
EncodeResult encode_visible(std::span<const Modality> modalities, std::span<const Tensor> inputs,
                            std::span<const MaskSpec> masks, const ParamStore& ps, const EncoderConfig& cfg,
                            RoutingTrace* trace = nullptr);

// ---- losses ----------------------------------------------------------------

struct MaskedError {
  Tensor sse;               // sum of squared errors on masked elements
  std::size_t count = 0;    // masked scalar elements
};

/// Squared error of patch rows flagged in mask.omega. Zero (constant) if none.
MaskedError masked_error(const Tensor& recon, const Tensor& target, const MaskSpec& mask);

/// Sum of SSE over terms divided by the total masked element count (0 if none).
Tensor mask_loss(std::span<const MaskedError> terms);

/// Mean-pooled projection z = mean_i(H_i W + b) as [1 x d].
Tensor contrastive_embedding(const Tensor& h, const Tensor& w, const Tensor& b);

/// InfoNCE with `anchor` rows as queries against `other` rows, positives on the diagonal.
Tensor info_nce(const Tensor& anchor, const Tensor& other, double tau);

struct ContrastiveResult {
  Tensor loss;  // scalar, constant zero when skipped
  bool skipped = true;
  std::size_t complete = 0;
};

/// L = InfoNCE(csi, radar) + InfoNCE(csi, map) over the given complete triplets.
/// Fewer than two triplets: zero and skipped.
ContrastiveResult contrastive_loss(std::span<const Tensor> z_csi, std::span<const Tensor> z_radar,
                                   std::span<const Tensor> z_map, double tau);

/// Per pool (1/K) sum_e Imp(e) Load(e), averaged over (layer, pool) pairs that routed tokens.
Tensor load_balance_loss(const RoutingStats& stats, std::size_t n_experts);
double pool_balance_value(std::span<const double> importance, std::span<const double> load);

struct LossWeights {
  double lambda_cl = 0.0005;
  double lambda_lb = 0.05;
};

struct PretrainLoss {
  double l_mask = 0.0;
  double l_mask_raw = 0.0;  // unnormalized sum of squared errors
  double l_cl = 0.0;
  double l_lb = 0.0;
  double total = 0.0;
  bool cl_skipped = true;
  std::size_t complete_triplets = 0;
  double masked_fraction = 0.0;
  double lr = 0.0;
};

/// total = l_mask + lambda_cl l_cl + lambda_lb l_lb; throws NumericError naming
/// the first non-finite component.
double total_loss(double l_mask, double l_cl, double l_lb, const LossWeights& w);
Tensor total_loss(const Tensor& l_mask, const Tensor& l_cl, const Tensor& l_lb, const LossWeights& w);

// ---- pre-training ----------------------------------------------------------

struct PretrainConfig {
  LossWeights weights;
  double tau = 0.07;
  double snr_min_db = 10.0;
  double snr_max_db = 25.0;
  double ratio_min = 0.1;
  double ratio_max = 0.5;
  std::size_t comb_min = 4;
  std::size_t comb_max = 16;
  double modality_dropout = 0.2;
  std::size_t batch_size = 8;
  std::size_t steps = 200;
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  AdamConfig adam;

  void validate() const;
};

/// One sample with noise, dropout and masks already drawn.
struct PreparedSample {
  std::vector<Modality> present;           // enum order
  std::array<Tensor, 3> input;             // preprocessed [H x W x C] fed to the encoder
  std::array<Tensor, 3> target;            // clean patches [N x patch_dim]
  std::array<MaskSpec, 3> masks;
  double csi_scale = 1.0;

  bool has(Modality m) const;
};

/// Draws SNR, dropout and masks for each sample. `csi_scheme` selects the CSI
/// masking family for the whole batch.
std::vector<PreparedSample> prepare_batch(std::span<const synth::MultimodalSample* const> samples,
                                          const ModelConfig& mcfg, const PretrainConfig& cfg, MaskKind csi_scheme,
                                          Rng& rng);

struct LossTensors {
  Tensor total, l_mask, l_cl, l_lb;
  double l_mask_raw = 0.0;
  bool cl_skipped = true;
  std::size_t complete = 0;
  double masked_fraction = 0.0;
};

/// Full objective over a prepared batch.
LossTensors pretrain_objective(std::span<const PreparedSample> batch, const ParamStore& ps, const ModelConfig& mcfg,
                               const PretrainConfig& cfg, RoutingTrace* trace = nullptr);

/// CSI masking family for a step, uniform over random, frequency and comb.
MaskKind draw_csi_scheme(Rng& rng);

/// One optimizer update on `batch`. rng drives noise, dropout and masks.
PretrainLoss pretrain_step(std::span<const synth::MultimodalSample* const> batch, const ParamStore& ps,
                           const ModelConfig& mcfg, const PretrainConfig& cfg, Adam& opt, double lr, Rng& rng);

std::string loss_json(std::size_t step, const PretrainLoss& l);

}  // namespace misac
