// SPDX-License-Identifier: Apache-2.0

#include "misac/tokenizer.hpp"

#include <cmath>

#include "misac/ops.hpp"

namespace misac {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::csi:
      return "csi";
    case Modality::map:
      return "map";
    case Modality::radar:
      return "radar";
  }
  return "?";
}

Modality parse_modality(const std::string& name) {
  for (Modality m : kModalities)
    if (name == modality_name(m)) return m;
  throw std::invalid_argument("unknown modality '" + name + "' (expected csi, map or radar)");
}

bool has_modality(const synth::MultimodalSample& s, Modality m) {
  switch (m) {
    case Modality::csi:
      return s.csi.has_value();
    case Modality::map:
      return s.map.has_value();
    case Modality::radar:
      return s.radar.has_value();
  }
  return false;
}

void PatchSpec::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ShapeError("patch spec: empty input extents");
  token_count(height, width, patch_h, patch_w);
}

void TokenizerConfig::validate() const {
  if (d == 0) throw ShapeError("tokenizer: d must be positive");
  for (const auto& s : specs) s.validate();
}

TokenizerConfig make_tokenizer_config(std::size_t d, std::size_t n_a, std::size_t n_sc,
                                      std::pair<std::size_t, std::size_t> csi_patch, std::size_t radar_res,
                                      std::size_t radar_patch, std::size_t map_res, std::size_t map_patch) {
  TokenizerConfig c;
  c.d = d;
  c.spec(Modality::csi) = {n_a, n_sc, 2, csi_patch.first, csi_patch.second};
  c.spec(Modality::radar) = {radar_res, radar_res, 4, radar_patch, radar_patch};
  c.spec(Modality::map) = {map_res, map_res, 4, map_patch, map_patch};
  c.validate();
  return c;
}

namespace {

double rms(const std::vector<double>& re, const std::vector<double>& im) {
  double p = 0.0;
  for (std::size_t i = 0; i < re.size(); ++i) p += re[i] * re[i] + im[i] * im[i];
  return std::sqrt(p / static_cast<double>(re.size()));
}

double safe_scale(double s) { return s > 0.0 ? s : 1.0; }

}  // namespace

Preprocessed preprocess(const synth::MultimodalSample& s, Modality m) {
  if (!has_modality(s, m)) throw AvailabilityError(std::string("modality not available: ") + modality_name(m));
  switch (m) {
    case Modality::csi: {
      const auto& h = s.csi->h;
      const double scale = safe_scale(rms(h.re, h.im));
      std::vector<double> v(2 * h.numel());
      for (std::size_t i = 0; i < h.numel(); ++i) {
        v[2 * i] = h.re[i] / scale;
        v[2 * i + 1] = h.im[i] / scale;
      }
      return {Tensor::from_data({h.shape.at(0), h.shape.at(1), 2}, std::move(v)), scale};
    }
    case Modality::radar: {
      const auto& ra = s.radar->ra;
      const auto& rv = s.radar->rv;
      if (ra.shape != rv.shape || ra.shape.size() != 2) throw ShapeError("radar maps must share 2D extents");
      const double sa = safe_scale(rms(ra.re, ra.im)), sv = safe_scale(rms(rv.re, rv.im));
      std::vector<double> v(4 * ra.numel());
      for (std::size_t i = 0; i < ra.numel(); ++i) {
        v[4 * i] = ra.re[i] / sa;
        v[4 * i + 1] = ra.im[i] / sa;
        v[4 * i + 2] = rv.re[i] / sv;
        v[4 * i + 3] = rv.im[i] / sv;
      }
      return {Tensor::from_data({ra.shape[0], ra.shape[1], 4}, std::move(v)), 1.0};
    }
    case Modality::map: {
      const auto& bev = s.map->bev;
      const auto& ht = s.map->height;
      if (bev.rank() != 3 || bev.dim(2) != 3 || ht.shape() != Shape{bev.dim(0), bev.dim(1), 1})
        throw ShapeError("map: expected bev [H x W x 3] and height [H x W x 1]");
      const std::size_t n = bev.dim(0) * bev.dim(1);
      std::vector<double> v(4 * n);
      auto b = bev.data();
      auto h = ht.data();
      for (std::size_t i = 0; i < n; ++i) {
        v[4 * i] = b[3 * i];
        v[4 * i + 1] = b[3 * i + 1];
        v[4 * i + 2] = b[3 * i + 2];
        v[4 * i + 3] = h[i];
      }
      return {Tensor::from_data({bev.dim(0), bev.dim(1), 4}, std::move(v)), 1.0};
    }
  }
  throw std::logic_error("preprocess: bad modality");
}

std::size_t token_count(std::size_t h, std::size_t w, std::size_t ph, std::size_t pw) {
  if (ph == 0 || pw == 0) throw ShapeError("token_count: patch extents must be positive");
  if (h % ph != 0 || w % pw != 0) {
    throw ShapeError("token_count: input " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                     std::to_string(ph) + "x" + std::to_string(pw));
  }
  return (h / ph) * (w / pw);
}

namespace {

// Flat index of element (patch t, offset e) in the [H x W x C] source.
std::vector<std::size_t> patch_order(std::size_t h, std::size_t w, std::size_t c, std::size_t ph, std::size_t pw) {
  const std::size_t n = token_count(h, w, ph, pw);
  const std::size_t gc = w / pw, pd = ph * pw * c;
  std::vector<std::size_t> src(n * pd);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t r0 = (t / gc) * ph, c0 = (t % gc) * pw;
    for (std::size_t i = 0; i < ph; ++i)
      for (std::size_t j = 0; j < pw; ++j)
        for (std::size_t k = 0; k < c; ++k) src[t * pd + (i * pw + j) * c + k] = ((r0 + i) * w + (c0 + j)) * c + k;
  }
  return src;
}

}  // namespace

Tensor patchify(const Tensor& x, std::size_t ph, std::size_t pw) {
  if (x.rank() != 3) throw ShapeError("patchify: expected [H x W x C], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto src = patch_order(h, w, c, ph, pw);
  const std::size_t pd = ph * pw * c;
  return gather_rows(x.reshape({h * w * c, 1}), src).reshape({src.size() / pd, pd});
}

Tensor unpatchify(const Tensor& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t ph, std::size_t pw) {
  const auto fwd = patch_order(h, w, c, ph, pw);
  const std::size_t pd = ph * pw * c;
  if (patches.shape() != Shape{fwd.size() / pd, pd}) throw ShapeError("unpatchify: expected " + shape_str({fwd.size() / pd, pd}));
  std::vector<std::size_t> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
  return gather_rows(patches.reshape({fwd.size(), 1}), inv).reshape({h, w, c});
}

TokenSequence patchify_embed(const Tensor& x, const PatchSpec& spec, Modality m, const Tensor& w, const Tensor& b) {
  if (x.shape() != Shape{spec.height, spec.width, spec.channels}) {
    throw ShapeError(std::string("patchify_embed(") + modality_name(m) + "): input " + shape_str(x.shape()) +
                     " does not match " + shape_str({spec.height, spec.width, spec.channels}));
  }
  if (w.rank() != 2 || w.dim(0) != spec.patch_dim() || b.numel() != w.dim(1)) {
    throw ShapeError(std::string("patchify_embed(") + modality_name(m) + "): parameter shape mismatch");
  }
  TokenSequence seq;
  seq.tokens = linear(patchify(x, spec.patch_h, spec.patch_w), w, b);
  seq.rows = spec.grid_rows();
  seq.cols = spec.grid_cols();
  seq.modality = m;
  return seq;
}

}  // namespace misac
