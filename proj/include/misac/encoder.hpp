// SPDX-License-Identifier: Apache-2.0
//
// Multimodal encoder: positional + modality embeddings, shared self-attention
// and the shared/specific sparse mixture-of-experts feed-forward.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "misac/ops.hpp"
#include "misac/params.hpp"
#include "misac/tokenizer.hpp"

namespace misac {

struct EncoderConfig {
  TokenizerConfig tokenizer;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t n_experts = 8;  // K per pool
  std::size_t top_k = 4;
  std::size_t hidden_mult = 2;  // expert hidden width = hidden_mult * d

  std::size_t d() const { return tokenizer.d; }
  std::size_t hidden() const { return hidden_mult * tokenizer.d; }
  void validate() const;
};

/// Pool index: 0 is the shared pool, 1 + modality the specific pools.
inline constexpr std::size_t kSharedPool = 0;
inline constexpr std::size_t kNumPools = 4;
inline std::size_t specific_pool(Modality m) { return 1 + static_cast<std::size_t>(m); }
std::string pool_name(std::size_t pool);

/// Parameter names.
std::string layer_prefix(std::size_t layer);
std::string pool_prefix(std::size_t layer, std::size_t pool);
std::string expert_prefix(std::size_t layer, std::size_t pool, std::size_t expert);

void init_encoder(ParamStore& ps, const EncoderConfig& cfg, Rng& rng);

/// Records top-k selections on the first pass and replays them afterwards,
/// so finite differences see a fixed routing.
class RoutingTrace {
 public:
  enum class Mode { record, replay };

  explicit RoutingTrace(Mode mode = Mode::record) : mode_(mode) {}
  Mode mode() const { return mode_; }
  void set_mode(Mode m) {
    mode_ = m;
    cursor_ = 0;
  }
  /// Next forced selection, or nullptr when recording.
  const std::vector<std::uint32_t>* next();
  void push(const std::vector<std::uint32_t>& sel);
  void rewind() { cursor_ = 0; }
  std::size_t size() const { return selections_.size(); }

 private:
  Mode mode_;
  std::vector<std::vector<std::uint32_t>> selections_;
  std::size_t cursor_ = 0;
};

/// Routing statistics of one pool in one layer over some token set.
struct PoolStats {
  Tensor importance_sum;  // [1 x K], sum of routing weights (differentiable)
  std::vector<double> load_count;  // selections per expert
  std::size_t tokens = 0;

  void merge(const PoolStats& other);
  /// Mean routing weight per expert; sums to 1.
  std::vector<double> importance() const;
  /// Mean selection frequency per expert; sums to top_k.
  std::vector<double> load() const;
};

struct RoutingStats {
  std::size_t n_layers = 0;
  std::vector<std::array<PoolStats, kNumPools>> layers;

  explicit RoutingStats(std::size_t n = 0) : n_layers(n), layers(n) {}
  void merge(const RoutingStats& other);
  PoolStats& at(std::size_t layer, std::size_t pool) { return layers.at(layer)[pool]; }
  const PoolStats& at(std::size_t layer, std::size_t pool) const { return layers.at(layer)[pool]; }
};

/// Embedded patch tokens of one modality, possibly a visible subset.
struct ModalityTokens {
  Modality modality = Modality::csi;
  Tensor tokens;                       // [n x d], patch projections
  std::vector<std::size_t> positions;  // grid index of each row
};

struct Segment {
  Modality modality = Modality::csi;
  std::size_t begin = 0;
  std::size_t count = 0;
  std::vector<std::size_t> positions;
};

/// Patch-embeds a preprocessed tensor; keeps only `visible` grid positions when given.
ModalityTokens embed_patches(const Tensor& x, Modality m, const ParamStore& ps, const EncoderConfig& cfg,
                             const std::vector<std::size_t>* visible = nullptr);

/// h_i = z_i + p[pos_i] + u.
Tensor embed_tokens(const Tensor& z, std::span<const std::size_t> positions, const Tensor& pos_table,
                    const Tensor& modality_id);

struct Concatenated {
  Tensor h;
  std::vector<Segment> segments;
};

/// Concatenates in csi, map, radar order. Throws if nothing is present.
Concatenated concat_modalities(std::span<const Tensor> embedded, std::span<const Modality> modalities,
                               std::span<const std::vector<std::size_t>> positions);

/// Mean of the map rows of h as [1 x d], or zeros when no map segment exists.
Tensor pool_context(const Tensor& h, std::span<const Segment> segments);

/// logits = [x, c] W + b over rows of x; c [1 x d] is broadcast.
TopKResult gate_shared(const Tensor& x, const Tensor& c, const Tensor& w, const Tensor& b, std::size_t k,
                       const std::vector<std::uint32_t>* forced = nullptr);
/// logits = x W + b.
TopKResult gate_specific(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t k,
                         const std::vector<std::uint32_t>* forced = nullptr);

/// Two-layer GELU MLP of expert `prefix`.
Tensor expert_forward(const Tensor& x, const ParamStore& ps, const std::string& prefix);

/// sum_j pi_j E_j(x) over the selected experts of each row, plus its stats.
Tensor expert_mixture(const Tensor& x, const TopKResult& route, const ParamStore& ps, std::size_t layer,
                      std::size_t pool, std::size_t n_experts, PoolStats* stats);

/// x + rmsnorm(y_shared) + rmsnorm(y_specific).
Tensor ss_dmoe_forward(const Tensor& h, std::span<const Segment> segments, const Tensor& context,
                       const ParamStore& ps, const EncoderConfig& cfg, std::size_t layer, RoutingTrace* trace,
                       RoutingStats* stats);

/// h + rmsnorm(MSA(h)) with projections under `prefix` (wq, bq, ..., wo, bo, g_attn).
Tensor attention_residual(const Tensor& h, const ParamStore& ps, const std::string& prefix, std::size_t n_heads,
                          std::vector<double>* probs = nullptr);

Tensor encoder_block(const Tensor& h, std::span<const Segment> segments, const ParamStore& ps,
                     const EncoderConfig& cfg, std::size_t layer, RoutingTrace* trace, RoutingStats* stats,
                     std::vector<double>* attn_probs = nullptr);

struct EncodeResult {
  Tensor h;  // [N x d]
  std::vector<Segment> segments;
  RoutingStats stats;
};

/// Full encoder over whatever modalities are given (any order).
EncodeResult encode(std::span<const ModalityTokens> inputs, const ParamStore& ps, const EncoderConfig& cfg,
                    RoutingTrace* trace = nullptr);

/// Rows of one modality in an encoder output, or an undefined tensor.
Tensor segment_rows(const EncodeResult& r, Modality m);

}  // namespace misac
