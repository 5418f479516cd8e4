// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "helpers.hpp"
#include "misac/ops.hpp"
#include "misac/synth/dataset.hpp"
#include "misac/tokenizer.hpp"

using namespace misac;
using misac::testing::random_tensor;

namespace {

synth::MultimodalSample full_sample() {
  synth::SynthConfig cfg;
  return synth::synth_dataset(1, cfg, 5).samples.at(0);
}

}  // namespace

TEST_CASE("modality names round trip") {
  for (Modality m : kModalities) CHECK(parse_modality(modality_name(m)) == m);
  CHECK(static_cast<int>(Modality::csi) == 0);
  CHECK(static_cast<int>(Modality::map) == 1);
  CHECK(static_cast<int>(Modality::radar) == 2);
  CHECK_THROWS_AS(parse_modality("lidar"), std::invalid_argument);
}

TEST_CASE("preprocess csi, radar and map") {
  synth::MultimodalSample s;
  synth::ChannelSample c;
  c.h = ComplexTensor({4, 8});
  for (std::size_t i = 0; i < c.h.numel(); ++i) c.h.set(i, {1.0, 0.0});
  s.csi = c;
  auto p = preprocess(s, Modality::csi);
  CHECK(p.x.shape() == Shape{4, 8, 2});
  CHECK(p.scale == 1.0);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(p.x[2 * i] == 1.0);
    CHECK(p.x[2 * i + 1] == 0.0);
  }
  CHECK_THROWS_AS(preprocess(s, Modality::radar), AvailabilityError);

  auto full = full_sample();
  auto csi = preprocess(full, Modality::csi);
  double power = 0;
  for (double v : csi.x.data()) power += v * v;
  CHECK(power / 512.0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(csi.x[0] * csi.scale == doctest::Approx(full.csi->h.re[0]).epsilon(1e-12));

  auto radar = preprocess(full, Modality::radar);
  CHECK(radar.x.shape() == Shape{64, 64, 4});

  auto map = preprocess(full, Modality::map);
  CHECK(map.x.shape() == Shape{64, 64, 4});
  for (std::size_t i = 0; i < 64 * 64; ++i) {
    CHECK(map.x[4 * i + 3] == full.map->height[i]);
    CHECK(map.x[4 * i + 1] == full.map->bev[3 * i + 1]);
  }
}

TEST_CASE("token counts") {
  CHECK(token_count(64, 64, 8, 8) == 64);
  CHECK(token_count(64, 128, 4, 4) == 512);
  CHECK(token_count(256, 256, 8, 8) == 1024);
  CHECK(token_count(16, 32, 4, 1) == 128);
  CHECK_THROWS_AS(token_count(65, 64, 8, 8), ShapeError);
  CHECK_THROWS_AS(token_count(64, 64, 0, 8), ShapeError);
}

TEST_CASE("patchify is a lossless row-major partition") {
  Rng rng(1);
  auto x = random_tensor({8, 12, 3}, rng);
  auto p = patchify(x, 4, 3);
  CHECK(p.shape() == Shape{8, 36});
  // token 5 sits at grid (1, 1): rows 4..7, cols 3..5
  CHECK(p[5 * 36 + (2 * 3 + 1) * 3 + 2] == x[((4 + 2) * 12 + (3 + 1)) * 3 + 2]);
  auto back = unpatchify(p, 8, 12, 3, 4, 3);
  CHECK(back.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
}

TEST_CASE("patchify_embed examples") {
  PatchSpec spec{8, 8, 2, 4, 2};
  Rng rng(2);
  auto x = random_tensor({8, 8, 2}, rng);
  auto b0 = Tensor::from_data({3}, {0.5, -1.0, 2.0});
  auto seq = patchify_embed(x, spec, Modality::csi, Tensor::zeros({16, 3}), b0);
  CHECK(seq.tokens.shape() == Shape{8, 3});
  CHECK(seq.rows == 2);
  CHECK(seq.cols == 4);
  CHECK(seq.coords(5) == std::pair<std::size_t, std::size_t>{1, 1});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(seq.tokens[i * 3 + j] == b0[j]);

  auto w = random_tensor({16, 3}, rng);
  auto z = patchify_embed(Tensor::zeros({8, 8, 2}), spec, Modality::csi, w, b0);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(z.tokens[i * 3 + j] == b0[j]);

  std::vector<double> onehot(16 * 3, 0.0);
  onehot[0] = 1.0;
  auto sel = patchify_embed(x, spec, Modality::csi, Tensor::from_data({16, 3}, onehot), Tensor::zeros({3}));
  for (std::size_t t = 0; t < 8; ++t) {
    const std::size_t r = (t / 4) * 4, c = (t % 4) * 2;
    CHECK(sel.tokens[t * 3] == x[(r * 8 + c) * 2]);
  }

  CHECK_THROWS_AS(patchify_embed(x, spec, Modality::csi, Tensor::zeros({15, 3}), b0), ShapeError);
  CHECK_THROWS_AS(patchify_embed(Tensor::zeros({8, 6, 2}), spec, Modality::csi, w, b0), ShapeError);
}

TEST_CASE("patch embedding locality and affine law") {
  PatchSpec spec{8, 8, 2, 4, 2};
  Rng rng(3);
  auto w = random_tensor({16, 4}, rng);
  auto b = random_tensor({4}, rng);
  auto x = random_tensor({8, 8, 2}, rng);
  auto y = random_tensor({8, 8, 2}, rng);
  auto base = patchify_embed(x, spec, Modality::map, w, b).tokens;

  std::vector<double> bumped(x.data().begin(), x.data().end());
  bumped[((5 * 8) + 3) * 2 + 1] += 0.75;  // grid (1, 1) -> token 5
  auto changed = patchify_embed(Tensor::from_data({8, 8, 2}, bumped), spec, Modality::map, w, b).tokens;
  for (std::size_t t = 0; t < 8; ++t) {
    bool diff = false;
    for (std::size_t j = 0; j < 4; ++j) diff |= changed[t * 4 + j] != base[t * 4 + j];
    CHECK(diff == (t == 5));
  }

  const double alpha = 0.7, beta = -1.3;
  auto mix = add(scale(x, alpha), scale(y, beta));
  auto lhs = patchify_embed(mix, spec, Modality::map, w, b).tokens;
  auto ey = patchify_embed(y, spec, Modality::map, w, b).tokens;
  for (std::size_t t = 0; t < 8; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double rhs = alpha * base[t * 4 + j] + beta * ey[t * 4 + j] - (alpha + beta - 1.0) * b[j];
      CHECK(lhs[t * 4 + j] == doctest::Approx(rhs).epsilon(1e-12));
    }
  }
}
