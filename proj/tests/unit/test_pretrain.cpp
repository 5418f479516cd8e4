// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "misac/grad_check.hpp"
#include "misac/ops.hpp"
#include "misac/pretrain.hpp"
#include "misac/synth/dataset.hpp"

using namespace misac;
using misac::testing::random_tensor;

namespace {

// CSI 8x8 (4,1) -> 2x8 grid; radar/map 32x32 (8,8) -> 16 tokens each.
ModelConfig tiny_model_config() {
  ModelConfig c;
  c.encoder.tokenizer = make_tokenizer_config(16, 8, 8, {4, 1}, 32, 8, 32, 8);
  c.encoder.n_layers = 2;
  c.encoder.n_heads = 2;
  c.encoder.n_experts = 4;
  c.encoder.top_k = 2;
  c.decoder_layers = 1;
  return c;
}

synth::SynthConfig tiny_synth_config() {
  synth::SynthConfig s;
  s.n_antennas = 8;
  s.n_subcarriers = 8;
  s.radar_map.rows = 32;
  s.radar_map.cols = 32;
  s.map_resolution = 32;
  return s;
}

std::vector<const synth::MultimodalSample*> pointers(const synth::Dataset& ds) {
  std::vector<const synth::MultimodalSample*> out;
  for (const auto& s : ds.samples) out.push_back(&s);
  return out;
}

bool columns_masked_only(const MaskSpec& m, std::size_t c) {
  for (std::size_t r = 0; r < m.rows; ++r)
    if (!m.omega[r * m.cols + c]) return false;
  return true;
}

bool column_visible(const MaskSpec& m, std::size_t c) {
  for (std::size_t r = 0; r < m.rows; ++r)
    if (m.omega[r * m.cols + c]) return false;
  return true;
}

std::vector<double> snapshot(const ParamStore& ps) {
  std::vector<double> v;
  for (const auto& t : ps.tensors()) v.insert(v.end(), t.data().begin(), t.data().end());
  return v;
}

}  // namespace

TEST_CASE("comb mask on 32 columns keeps every fourth column") {
  Rng rng(1);
  auto m = sample_mask(MaskScheme::comb(4), 4, 32, rng);
  std::size_t vis_cols = 0;
  for (std::size_t c = 0; c < 32; ++c) {
    const bool v = column_visible(m, c);
    CHECK(v == (c % 4 == 0));
    if (!v) CHECK(columns_masked_only(m, c));
    vis_cols += v;
  }
  CHECK(vis_cols == 8);
  CHECK(m.visible.size() == 32);
  CHECK(m.masked.size() == 96);
  CHECK(comb_token_spacing(16, 4) == 4);
  CHECK(comb_token_spacing(2, 4) == 1);
}

TEST_CASE("random mask rounds r*N and frequency mask is one stripe") {
  Rng rng(2);
  auto m = sample_mask(MaskScheme::random(0.5), 4, 32, rng);
  CHECK(m.masked.size() == 64);
  CHECK(m.visible.size() == 64);
  CHECK(std::is_sorted(m.masked.begin(), m.masked.end()));

  auto f = sample_mask(MaskScheme::frequency(0.25), 2, 32, rng);
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < 32; ++c) {
    if (columns_masked_only(f, c)) cols.push_back(c);
    else CHECK(column_visible(f, c));
  }
  REQUIRE(cols.size() == 8);
  CHECK(cols.back() - cols.front() == 7);

  CHECK_THROWS_AS(sample_mask(MaskScheme::random(0.01), 2, 2, rng), std::invalid_argument);
  auto none = sample_mask(MaskScheme::none(), 3, 3, rng);
  CHECK(none.masked.empty());
  CHECK(none.visible.size() == 9);
}

TEST_CASE("sampled masks cover the configured ratio ranges") {
  Rng rng(3);
  const std::size_t rows = 4, cols = 32, n = rows * cols;
  const double lo = std::round(0.1 * n) / n, hi = std::round(0.5 * n) / n;
  for (int i = 0; i < 1000; ++i) {
    const double r = rng.uniform(0.1, 0.5);
    auto a = sample_mask(MaskScheme::random(r), rows, cols, rng);
    CHECK(a.masked_fraction() >= lo);
    CHECK(a.masked_fraction() <= hi);
    auto f = sample_mask(MaskScheme::frequency(r), rows, cols, rng);
    CHECK(f.masked_fraction() >= std::round(0.1 * cols) / cols);
    CHECK(f.masked_fraction() <= std::round(0.5 * cols) / cols);
    const auto ns = static_cast<std::size_t>(rng.uniform_int(4, 16));
    auto c = sample_mask(MaskScheme::comb(ns), rows, cols, rng);
    for (std::size_t k = 0; k < n; ++k) CHECK(c.omega[k] == ((k % cols) % ns != 0));
  }
}

TEST_CASE("mask loss of one masked scalar is its squared error") {
  auto target = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  auto recon = Tensor::from_data({2, 2}, {1, 2, 3.5, 4});
  auto m = make_mask(2, 1, {0, 1});
  std::vector<MaskedError> terms{masked_error(recon, target, m)};
  CHECK(mask_loss(terms).item() == doctest::Approx(0.25 / 2));
  auto single = Tensor::from_data({1, 1}, {0.0});
  std::vector<MaskedError> one{masked_error(Tensor::from_data({1, 1}, {0.3}), single, make_mask(1, 1, {1}))};
  CHECK(mask_loss(one).item() == doctest::Approx(0.09).epsilon(1e-12));
  auto empty = masked_error(recon, target, empty_mask(2, 1));
  CHECK(empty.count == 0);
  CHECK(mask_loss(std::vector<MaskedError>{empty}).item() == 0.0);
}

TEST_CASE("mask loss ignores ground truth outside the masked support") {
  Rng rng(4);
  auto recon = random_tensor({16, 6}, rng);
  auto target = random_tensor({16, 6}, rng, -1, 1, true);
  auto mask = sample_mask(MaskScheme::random(0.3), 4, 4, rng);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope s(tape);
    std::vector<MaskedError> t{masked_error(recon, target, mask)};
    loss = mask_loss(t);
  }
  backward(loss, tape);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      const double g = target.grad()[r * 6 + c];
      if (!mask.omega[r]) CHECK(g == 0.0);
    }
  // Perturbation: moving unmasked ground truth leaves the loss bit-identical.
  auto moved = target.detach();
  Tensor mv = moved;
  for (std::size_t v : mask.visible)
    for (std::size_t c = 0; c < 6; ++c) mv.mutable_data()[v * 6 + c] += 3.0;
  std::vector<MaskedError> a{masked_error(recon, target.detach(), mask)}, b{masked_error(recon, moved, mask)};
  CHECK(mask_loss(a).item() == mask_loss(b).item());
}

TEST_CASE("InfoNCE with identical embeddings equals log B") {
  for (std::size_t b : {2u, 5u, 8u}) {
    std::vector<double> row{0.3, -0.2, 0.7};
    std::vector<double> v;
    for (std::size_t i = 0; i < b; ++i) v.insert(v.end(), row.begin(), row.end());
    auto z = Tensor::from_data({b, 3}, v);
    CHECK(std::abs(info_nce(z, z, 0.07).item() - std::log(static_cast<double>(b))) < 1e-9);
  }
  // Aligned positives, opposed negatives, large s/tau -> near zero.
  auto a = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto o = Tensor::from_data({2, 2}, {1, -1, -1, 1});
  CHECK(info_nce(scale(a, 10.0), o, 0.07).item() < 1e-12);
}

TEST_CASE("contrastive loss skips fewer than two triplets") {
  Rng rng(5);
  std::vector<Tensor> c{random_tensor({1, 4}, rng)}, r{random_tensor({1, 4}, rng)}, m{random_tensor({1, 4}, rng)};
  auto res = contrastive_loss(c, r, m, 0.07);
  CHECK(res.skipped);
  CHECK(res.loss.item() == 0.0);
  c.push_back(random_tensor({1, 4}, rng));
  r.push_back(random_tensor({1, 4}, rng));
  m.push_back(random_tensor({1, 4}, rng));
  res = contrastive_loss(c, r, m, 0.07);
  CHECK_FALSE(res.skipped);
  CHECK(res.complete == 2);
  CHECK(res.loss.item() > 0.0);
}

TEST_CASE("total loss arithmetic") {
  CHECK(total_loss(1.0, 2.0, 0.5, LossWeights{}) == 1.026);
  CHECK(total_loss(0.7, 9.0, 3.0, LossWeights{0.0, 0.0}) == 0.7);
  auto t = total_loss(Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(0.5), LossWeights{});
  CHECK(t.item() == total_loss(1.0, 2.0, 0.5, LossWeights{}));
  CHECK_THROWS_AS(total_loss(1.0, std::nan(""), 0.0, LossWeights{}), NumericError);
  try {
    total_loss(1.0, 0.0, INFINITY, LossWeights{});
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("l_lb") != std::string::npos);
  }
}

TEST_CASE("load balance values for uniform and collapsed routing") {
  const std::size_t K = 8, T = 64;
  RoutingStats st(1);
  auto& p = st.at(0, kSharedPool);
  p.tokens = T;
  p.importance_sum = Tensor::from_data({1, K}, std::vector<double>(K, double(T) / K));
  p.load_count.assign(K, double(T) * 4 / K);
  CHECK(std::abs(load_balance_loss(st, K).item() - 0.0625) < 1e-12);

  RoutingStats col(1);
  auto& q = col.at(0, specific_pool(Modality::csi));
  q.tokens = T;
  std::vector<double> imp(K, 0.0), load(K, 0.0);
  imp[3] = T;
  load[3] = T;
  q.importance_sum = Tensor::from_data({1, K}, imp);
  q.load_count = load;
  CHECK(load_balance_loss(col, K).item() == doctest::Approx(1.0 / K));

  // Averaged over pools that routed tokens.
  RoutingStats both(1);
  both.at(0, kSharedPool) = p;
  both.at(0, specific_pool(Modality::csi)) = q;
  CHECK(load_balance_loss(both, K).item() == doctest::Approx((0.0625 + 0.125) / 2));
  CHECK(load_balance_loss(RoutingStats(2), K).item() == 0.0);
}

TEST_CASE("encode_visible with empty masks matches plain encode") {
  auto cfg = tiny_model_config();
  ParamStore ps;
  Rng rng(6);
  init_model(ps, cfg, rng);
  std::vector<Modality> mods{Modality::csi, Modality::map, Modality::radar};
  std::vector<Tensor> inputs;
  std::vector<MaskSpec> masks;
  std::vector<ModalityTokens> toks;
  for (Modality m : mods) {
    const auto& s = cfg.encoder.tokenizer.spec(m);
    inputs.push_back(random_tensor({s.height, s.width, s.channels}, rng));
    masks.push_back(empty_mask(s.grid_rows(), s.grid_cols()));
    toks.push_back(embed_patches(inputs.back(), m, ps, cfg.encoder));
  }
  auto a = encode_visible(mods, inputs, masks, ps, cfg.encoder);
  auto b = encode(toks, ps, cfg.encoder);
  CHECK(a.h.data().size() == b.h.data().size());
  CHECK(std::equal(a.h.data().begin(), a.h.data().end(), b.h.data().begin()));
}

TEST_CASE("reconstruction does not see masked ground truth") {
  auto cfg = tiny_model_config();
  ParamStore ps;
  Rng rng(7);
  init_model(ps, cfg, rng);
  const auto& spec = cfg.encoder.tokenizer.spec(Modality::csi);
  auto x = random_tensor({spec.height, spec.width, spec.channels}, rng);
  auto mask = sample_mask(MaskScheme::random(0.4), spec.grid_rows(), spec.grid_cols(), rng);
  auto run = [&](const Tensor& in) {
    std::vector<Modality> mods{Modality::csi};
    std::vector<Tensor> ins{in};
    std::vector<MaskSpec> ms{mask};
    auto enc = encode_visible(mods, ins, ms, ps, cfg.encoder);
    return decode_modality(segment_rows(enc, Modality::csi), mask, Modality::csi, ps, cfg);
  };
  auto base = run(x);
  CHECK(base.shape() == Shape{spec.n_tokens(), spec.patch_dim()});
  // Overwrite every pixel of the masked patches.
  auto patches = patchify(x, spec.patch_h, spec.patch_w).detach();
  Tensor pt = patches;
  for (std::size_t t : mask.masked)
    for (std::size_t j = 0; j < spec.patch_dim(); ++j) pt.mutable_data()[t * spec.patch_dim() + j] = 100.0 + j;
  auto x2 = unpatchify(patches, spec.height, spec.width, spec.channels, spec.patch_h, spec.patch_w);
  auto moved = run(x2);
  CHECK(std::equal(base.data().begin(), base.data().end(), moved.data().begin()));
}

TEST_CASE("prepare_batch keeps a clean target and at least one modality") {
  auto mcfg = tiny_model_config();
  auto ds = synth::synth_dataset(4, tiny_synth_config(), 21);
  auto ptrs = pointers(ds);
  PretrainConfig cfg;
  cfg.modality_dropout = 1.0;
  Rng rng(8);
  auto batch = prepare_batch(ptrs, mcfg, cfg, MaskKind::comb, rng);
  REQUIRE(batch.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& p = batch[i];
    CHECK(p.present == std::vector<Modality>{Modality::csi});
    const auto clean = preprocess(ds.samples[i], Modality::csi);
    const auto& sp = mcfg.encoder.tokenizer.spec(Modality::csi);
    auto want = patchify(clean.x, sp.patch_h, sp.patch_w);
    CHECK(std::equal(want.data().begin(), want.data().end(), p.target[0].data().begin()));
    CHECK_FALSE(std::equal(clean.x.data().begin(), clean.x.data().end(), p.input[0].data().begin()));
    CHECK(p.masks[0].omega[0] == 0);
  }
  // CSI-less sample with dropout 1 keeps its last modality.
  auto lone = ds.samples[0];
  lone.csi.reset();
  lone.radar.reset();
  std::vector<const synth::MultimodalSample*> one{&lone};
  auto b2 = prepare_batch(one, mcfg, cfg, MaskKind::random, rng);
  CHECK(b2[0].present == std::vector<Modality>{Modality::map});
}

TEST_CASE("pre-training objective gradient check with frozen routing and masks") {
  auto mcfg = tiny_model_config();
  ParamStore ps;
  Rng rng(9);
  init_model(ps, mcfg, rng);
  for (Tensor t : ps.tensors())
    for (auto& v : t.mutable_data()) v += rng.uniform(-0.05, 0.05);
  auto ds = synth::synth_dataset(3, tiny_synth_config(), 22);
  auto ptrs = pointers(ds);
  PretrainConfig cfg;
  cfg.modality_dropout = 0.0;
  cfg.weights = {0.5, 0.5};  // make every term visible in the check
  auto batch = prepare_batch(ptrs, mcfg, cfg, MaskKind::random, rng);
  RoutingTrace trace;
  auto f = [&] {
    trace.rewind();
    return pretrain_objective(batch, ps, mcfg, cfg, &trace).total;
  };
  auto first = pretrain_objective(batch, ps, mcfg, cfg, &trace);
  CHECK_FALSE(first.cl_skipped);
  CHECK(first.complete == 3);
  trace.set_mode(RoutingTrace::Mode::replay);
  auto params = ps.tensors();
  GradCheckOptions opts;
  opts.coords_per_param = 2;
  const double err = grad_check(f, params, opts);
  MESSAGE("objective grad check max error " << err);
  CHECK(err < 1e-4);
}

TEST_CASE("pre-training steps are deterministic and handle incomplete batches") {
  auto mcfg = tiny_model_config();
  auto ds = synth::synth_dataset(4, tiny_synth_config(), 23);
  auto ptrs = pointers(ds);
  PretrainConfig cfg;
  cfg.steps = 3;
  auto run = [&] {
    ParamStore ps;
    Rng init(10);
    init_model(ps, mcfg, init);
    Adam opt(ps.tensors(), cfg.adam);
    std::vector<std::string> log;
    for (std::size_t s = 0; s < cfg.steps; ++s) {
      Rng rng = Rng::substream(99, s);
      log.push_back(loss_json(s, pretrain_step(ptrs, ps, mcfg, cfg, opt, cosine_lr(s, cfg.steps, 1e-3, 1e-5), rng)));
    }
    return std::pair{log, snapshot(ps)};
  };
  auto [la, pa] = run();
  auto [lb, pb] = run();
  CHECK(la == lb);
  CHECK(pa.size() == pb.size());
  CHECK(std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(double)) == 0);
  CHECK(la[0].find("\"complete_triplet_count\"") != std::string::npos);

  // No sample carries radar: contrastive term is skipped, the step still updates.
  std::vector<synth::MultimodalSample> partial(ds.samples.begin(), ds.samples.end());
  for (auto& s : partial) s.radar.reset();
  std::vector<const synth::MultimodalSample*> pp;
  for (const auto& s : partial) pp.push_back(&s);
  ParamStore ps;
  Rng init(11);
  init_model(ps, mcfg, init);
  Adam opt(ps.tensors(), cfg.adam);
  auto before = snapshot(ps);
  Rng rng(12);
  auto loss = pretrain_step(pp, ps, mcfg, cfg, opt, 1e-3, rng);
  CHECK(loss.cl_skipped);
  CHECK(loss.complete_triplets == 0);
  CHECK(std::isfinite(loss.total));
  CHECK(snapshot(ps) != before);
}

TEST_CASE("adam update and cosine schedule") {
  auto w = Tensor::from_data({1, 2}, {1.0, -2.0}, true);
  Adam opt({w});
  Tape tape;
  Tensor loss;
  {
    Tape::Scope s(tape);
    loss = sum_squares(w);
  }
  backward(loss, tape);
  opt.step(0.1);
  // First bias-corrected step moves each coordinate by lr * sign(g) (up to eps).
  CHECK(w.data()[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(w.data()[1] == doctest::Approx(-1.9).epsilon(1e-7));
  CHECK(cosine_lr(0, 10, 1e-4, 1e-6) == doctest::Approx(1e-4));
  CHECK(cosine_lr(5, 10, 1e-4, 1e-6) == doctest::Approx((1e-4 + 1e-6) / 2));
  CHECK(cosine_lr(10, 10, 1e-4, 1e-6) == doctest::Approx(1e-6));
  CHECK(cosine_lr(50, 10, 1e-4, 1e-6) == doctest::Approx(1e-6));
}

TEST_CASE("config validation rejects bad ranges") {
  PretrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.ratio_max = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.snr_min_db = 30.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("balance bound holds for equal-weight routing, not for arbitrary weights") {
  const std::size_t K = 8, k = 4;
  const double uniform = double(k) / (K * K);
  Rng rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t T = 1 + static_cast<std::size_t>(rng.uniform_int(0, 63));
    std::vector<double> imp(K, 0.0), load(K, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<std::size_t> e(K);
      std::iota(e.begin(), e.end(), 0);
      for (std::size_t i = 0; i < k; ++i) std::swap(e[i], e[i + rng.uniform_int(0, static_cast<std::int64_t>(K - 1 - i))]);
      for (std::size_t i = 0; i < k; ++i) {
        imp[e[i]] += 1.0 / (k * T);
        load[e[i]] += 1.0 / T;
      }
    }
    CHECK(pool_balance_value(imp, load) >= uniform - 1e-12);
  }
  // K=3, k=2: half the tokens pick {0,1} weighting 1, half pick {0,2} weighting 2.
  const std::vector<double> imp{0.0, 0.5, 0.5}, load{1.0, 0.5, 0.5};
  CHECK(pool_balance_value(imp, load) < 2.0 / 9.0);
}
