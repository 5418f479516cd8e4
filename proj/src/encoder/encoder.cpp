// SPDX-License-Identifier: Apache-2.0

#include "misac/encoder.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace misac {

void EncoderConfig::validate() const {
  tokenizer.validate();
  if (n_layers == 0) throw std::invalid_argument("encoder: n_layers must be positive");
  if (n_heads == 0 || d() % n_heads != 0) throw std::invalid_argument("encoder: d must be divisible by n_heads");
  if (n_experts == 0 || top_k == 0 || top_k > n_experts) throw std::invalid_argument("encoder: need 1 <= top_k <= K");
  if (hidden_mult == 0) throw std::invalid_argument("encoder: hidden_mult must be positive");
}

std::string pool_name(std::size_t pool) {
  if (pool == kSharedPool) return "som";
  if (pool < kNumPools) return modality_name(static_cast<Modality>(pool - 1));
  throw std::out_of_range("pool index out of range");
}

std::string layer_prefix(std::size_t layer) { return "enc." + std::to_string(layer) + "."; }

std::string pool_prefix(std::size_t layer, std::size_t pool) { return layer_prefix(layer) + pool_name(pool) + "."; }

std::string expert_prefix(std::size_t layer, std::size_t pool, std::size_t expert) {
  return pool_prefix(layer, pool) + "e" + std::to_string(expert) + ".";
}

namespace {

void init_attention(ParamStore& ps, const std::string& p, std::size_t d, Rng& rng) {
  for (const char* n : {"wq", "wk", "wv", "wo"}) ps.add(p + n, init_weight({d, d}, rng));
  for (const char* n : {"bq", "bk", "bv", "bo"}) ps.add(p + n, init_zeros({d}));
  ps.add(p + "g_attn", init_ones({d}));
}

void init_expert(ParamStore& ps, const std::string& p, std::size_t d, std::size_t hidden, Rng& rng) {
  ps.add(p + "w1", init_weight({d, hidden}, rng));
  ps.add(p + "b1", init_zeros({hidden}));
  ps.add(p + "w2", init_weight({hidden, d}, rng));
  ps.add(p + "b2", init_zeros({d}));
}

std::string embed_name(Modality m, const char* what) { return std::string("embed.") + modality_name(m) + "." + what; }

}  // namespace

void init_encoder(ParamStore& ps, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d();
  for (Modality m : kModalities) {
    const auto& spec = cfg.tokenizer.spec(m);
    ps.add(embed_name(m, "w"), init_weight({spec.patch_dim(), d}, rng));
    ps.add(embed_name(m, "b"), init_zeros({d}));
    ps.add(embed_name(m, "pos"), init_weight({spec.n_tokens(), d}, rng));
    ps.add(embed_name(m, "id"), init_zeros({d}));
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = layer_prefix(l);
    init_attention(ps, lp + "attn.", d, rng);
    ps.add(lp + "g_som", init_ones({d}));
    ps.add(lp + "g_spec", init_ones({d}));
    for (std::size_t pool = 0; pool < kNumPools; ++pool) {
      const std::string pp = pool_prefix(l, pool);
      const std::size_t gate_in = pool == kSharedPool ? 2 * d : d;
      ps.add(pp + "gate.w", init_weight({gate_in, cfg.n_experts}, rng));
      ps.add(pp + "gate.b", init_zeros({cfg.n_experts}));
      for (std::size_t e = 0; e < cfg.n_experts; ++e) init_expert(ps, expert_prefix(l, pool, e), d, cfg.hidden(), rng);
    }
  }
}

const std::vector<std::uint32_t>* RoutingTrace::next() {
  if (mode_ == Mode::record) return nullptr;
  if (cursor_ >= selections_.size()) throw std::logic_error("RoutingTrace: replay ran past the recorded routing");
  return &selections_[cursor_++];
}

void RoutingTrace::push(const std::vector<std::uint32_t>& sel) {
  if (mode_ == Mode::record) selections_.push_back(sel);
}

void PoolStats::merge(const PoolStats& o) {
  if (o.tokens == 0) return;
  if (tokens == 0) {
    *this = o;
    return;
  }
  importance_sum = add(importance_sum, o.importance_sum);
  for (std::size_t e = 0; e < load_count.size(); ++e) load_count[e] += o.load_count[e];
  tokens += o.tokens;
}

std::vector<double> PoolStats::importance() const {
  std::vector<double> out;
  if (tokens == 0) return out;
  for (double v : importance_sum.data()) out.push_back(v / static_cast<double>(tokens));
  return out;
}

std::vector<double> PoolStats::load() const {
  std::vector<double> out;
  if (tokens == 0) return out;
  for (double v : load_count) out.push_back(v / static_cast<double>(tokens));
  return out;
}

void RoutingStats::merge(const RoutingStats& o) {
  if (n_layers == 0) {
    *this = o;
    return;
  }
  if (o.n_layers != n_layers) throw std::invalid_argument("RoutingStats::merge: layer count mismatch");
  for (std::size_t l = 0; l < n_layers; ++l)
    for (std::size_t p = 0; p < kNumPools; ++p) layers[l][p].merge(o.layers[l][p]);
}

ModalityTokens embed_patches(const Tensor& x, Modality m, const ParamStore& ps, const EncoderConfig& cfg,
                             const std::vector<std::size_t>* visible) {
  const auto& spec = cfg.tokenizer.spec(m);
  if (x.shape() != Shape{spec.height, spec.width, spec.channels}) {
    throw ShapeError(std::string("embed_patches(") + modality_name(m) + "): input " + shape_str(x.shape()) +
                     " does not match " + shape_str({spec.height, spec.width, spec.channels}));
  }
  Tensor patches = patchify(x, spec.patch_h, spec.patch_w);
  ModalityTokens out;
  out.modality = m;
  if (visible) {
    if (visible->empty()) throw std::invalid_argument("embed_patches: empty visible set");
    patches = gather_rows(patches, *visible);
    out.positions = *visible;
  } else {
    out.positions.resize(spec.n_tokens());
    std::iota(out.positions.begin(), out.positions.end(), 0);
  }
  out.tokens = linear(patches, ps.at(embed_name(m, "w")), ps.at(embed_name(m, "b")));
  return out;
}

Tensor embed_tokens(const Tensor& z, std::span<const std::size_t> positions, const Tensor& pos_table,
                    const Tensor& modality_id) {
  if (z.rows() != positions.size()) throw ShapeError("embed_tokens: one position per token required");
  for (std::size_t p : positions)
    if (p >= pos_table.rows()) throw ShapeError("embed_tokens: position outside the positional table");
  return add_row(add(z, gather_rows(pos_table, positions)), modality_id);
}

Concatenated concat_modalities(std::span<const Tensor> embedded, std::span<const Modality> modalities,
                               std::span<const std::vector<std::size_t>> positions) {
  if (embedded.size() != modalities.size() || embedded.size() != positions.size())
    throw std::invalid_argument("concat_modalities: argument lengths differ");
  if (embedded.empty()) throw std::invalid_argument("concat_modalities: no modality present");
  std::vector<std::size_t> order(embedded.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return modalities[a] < modalities[b]; });
  Concatenated out;
  std::vector<Tensor> parts;
  std::size_t row = 0;
  for (std::size_t i : order) {
    if (!out.segments.empty() && out.segments.back().modality == modalities[i])
      throw std::invalid_argument("concat_modalities: duplicate modality");
    parts.push_back(embedded[i]);
    out.segments.push_back({modalities[i], row, embedded[i].rows(), positions[i]});
    row += embedded[i].rows();
  }
  out.h = parts.size() == 1 ? parts[0] : concat_rows(parts);
  return out;
}

Tensor pool_context(const Tensor& h, std::span<const Segment> segments) {
  for (const auto& s : segments) {
    if (s.modality == Modality::map && s.count > 0) return mean_rows(slice_rows(h, s.begin, s.count));
  }
  return Tensor::zeros({1, h.cols()});
}

TopKResult gate_shared(const Tensor& x, const Tensor& c, const Tensor& w, const Tensor& b, std::size_t k,
                       const std::vector<std::uint32_t>* forced) {
  if (c.numel() != x.cols() || w.rows() != 2 * x.cols())
    throw ShapeError("gate_shared: expects context of width d and a [2d x K] gate");
  const Tensor ctx = c.rank() == 2 ? c : c.reshape({1, c.numel()});
  return topk_softmax(linear(concat_cols(x, broadcast_rows(ctx, x.rows())), w, b), k, forced);
}

TopKResult gate_specific(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t k,
                         const std::vector<std::uint32_t>* forced) {
  if (w.rows() != x.cols()) throw ShapeError("gate_specific: expects a [d x K] gate");
  return topk_softmax(linear(x, w, b), k, forced);
}

Tensor expert_forward(const Tensor& x, const ParamStore& ps, const std::string& p) {
  return linear(gelu(linear(x, ps.at(p + "w1"), ps.at(p + "b1"))), ps.at(p + "w2"), ps.at(p + "b2"));
}

Tensor expert_mixture(const Tensor& x, const TopKResult& route, const ParamStore& ps, std::size_t layer,
                      std::size_t pool, std::size_t n_experts, PoolStats* stats) {
  const std::size_t n = x.rows(), k = route.k;
  std::vector<std::vector<std::size_t>> rows(n_experts);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) rows.at(route.selected[i * k + j]).push_back(i);
  for (auto& r : rows) std::sort(r.begin(), r.end());
  Tensor y = Tensor::zeros({n, x.cols()});
  for (std::size_t e = 0; e < n_experts; ++e) {
    if (rows[e].empty()) continue;
    const Tensor out = expert_forward(gather_rows(x, rows[e]), ps, expert_prefix(layer, pool, e));
    y = scatter_add_rows(y, mul_rows(out, pick_column(route.weights, rows[e], e)), rows[e]);
  }
  if (stats) {
    PoolStats s;
    s.importance_sum = scale(mean_rows(route.weights), static_cast<double>(n));
    s.load_count.assign(n_experts, 0.0);
    for (std::size_t e = 0; e < n_experts; ++e) s.load_count[e] = static_cast<double>(rows[e].size());
    s.tokens = n;
    stats->merge(s);
  }
  return y;
}

Tensor ss_dmoe_forward(const Tensor& h, std::span<const Segment> segments, const Tensor& context,
                       const ParamStore& ps, const EncoderConfig& cfg, std::size_t layer, RoutingTrace* trace,
                       RoutingStats* stats) {
  auto route = [&](auto&& gate) {
    const auto* forced = trace ? trace->next() : nullptr;
    TopKResult r = gate(forced);
    if (trace) trace->push(r.selected);
    return r;
  };
  const std::string sp = pool_prefix(layer, kSharedPool);
  const TopKResult shared = route([&](const std::vector<std::uint32_t>* f) {
    return gate_shared(h, context, ps.at(sp + "gate.w"), ps.at(sp + "gate.b"), cfg.top_k, f);
  });
  const Tensor y_som = expert_mixture(h, shared, ps, layer, kSharedPool, cfg.n_experts,
                                      stats ? &stats->at(layer, kSharedPool) : nullptr);

  std::vector<Tensor> spec_parts;
  std::size_t row = 0;
  for (const auto& seg : segments) {
    if (seg.begin != row) throw std::invalid_argument("ss_dmoe_forward: segments must tile the rows in order");
    const std::size_t pool = specific_pool(seg.modality);
    const std::string pp = pool_prefix(layer, pool);
    if (!ps.contains(pp + "gate.w"))
      throw std::invalid_argument(std::string("ss_dmoe_forward: no expert pool for ") + modality_name(seg.modality));
    const Tensor xs = segments.size() == 1 ? h : slice_rows(h, seg.begin, seg.count);
    const TopKResult r = route([&](const std::vector<std::uint32_t>* f) {
      return gate_specific(xs, ps.at(pp + "gate.w"), ps.at(pp + "gate.b"), cfg.top_k, f);
    });
    spec_parts.push_back(expert_mixture(xs, r, ps, layer, pool, cfg.n_experts, stats ? &stats->at(layer, pool) : nullptr));
    row += seg.count;
  }
  if (row != h.rows()) throw std::invalid_argument("ss_dmoe_forward: segments do not cover every row");
  const Tensor y_spec = spec_parts.size() == 1 ? spec_parts[0] : concat_rows(spec_parts);
  const std::string lp = layer_prefix(layer);
  return add(add(h, rmsnorm(y_som, ps.at(lp + "g_som"))), rmsnorm(y_spec, ps.at(lp + "g_spec")));
}

Tensor attention_residual(const Tensor& h, const ParamStore& ps, const std::string& p, std::size_t n_heads,
                          std::vector<double>* probs) {
  const Tensor q = linear(h, ps.at(p + "wq"), ps.at(p + "bq"));
  const Tensor k = linear(h, ps.at(p + "wk"), ps.at(p + "bk"));
  const Tensor v = linear(h, ps.at(p + "wv"), ps.at(p + "bv"));
  const Tensor o = linear(attention(q, k, v, n_heads, probs), ps.at(p + "wo"), ps.at(p + "bo"));
  return add(h, rmsnorm(o, ps.at(p + "g_attn")));
}

Tensor encoder_block(const Tensor& h, std::span<const Segment> segments, const ParamStore& ps,
                     const EncoderConfig& cfg, std::size_t layer, RoutingTrace* trace, RoutingStats* stats,
                     std::vector<double>* attn_probs) {
  const Tensor h1 = attention_residual(h, ps, layer_prefix(layer) + "attn.", cfg.n_heads, attn_probs);
  return ss_dmoe_forward(h1, segments, pool_context(h1, segments), ps, cfg, layer, trace, stats);
}

EncodeResult encode(std::span<const ModalityTokens> inputs, const ParamStore& ps, const EncoderConfig& cfg,
                    RoutingTrace* trace) {
  if (inputs.empty()) throw std::invalid_argument("encode: at least one modality required");
  std::vector<Tensor> embedded;
  std::vector<Modality> mods;
  std::vector<std::vector<std::size_t>> positions;
  for (const auto& in : inputs) {
    if (in.tokens.cols() != cfg.d()) throw ShapeError("encode: token width differs from d");
    embedded.push_back(embed_tokens(in.tokens, in.positions, ps.at(embed_name(in.modality, "pos")),
                                    ps.at(embed_name(in.modality, "id"))));
    mods.push_back(in.modality);
    positions.push_back(in.positions);
  }
  Concatenated cat = concat_modalities(embedded, mods, positions);
  EncodeResult out{cat.h, std::move(cat.segments), RoutingStats(cfg.n_layers)};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) out.h = encoder_block(out.h, out.segments, ps, cfg, l, trace, &out.stats);
  return out;
}

Tensor segment_rows(const EncodeResult& r, Modality m) {
  for (const auto& s : r.segments)
    if (s.modality == m) return r.segments.size() == 1 ? r.h : slice_rows(r.h, s.begin, s.count);
  return {};
}

}  // namespace misac
