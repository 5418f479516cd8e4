// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "misac/complex_tensor.hpp"
#include "misac/grad_check.hpp"
#include "misac/mstn.hpp"
#include "misac/ops.hpp"
#include "misac/rng.hpp"

using namespace misac;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool rg = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), rg);
}

// Phi(x) by composite Simpson integration of the normal density from -12.
double normal_cdf_by_quadrature(double x) {
  const int n = 200000;
  const double a = -12.0, h = (x - a) / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double s = pdf(a) + pdf(x);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("gelu values") {
  auto zero = gelu(Tensor::scalar(0.0));
  CHECK(zero.item() == 0.0);

  const double oracle = 3.0 * normal_cdf_by_quadrature(3.0);
  CHECK(oracle == doctest::Approx(2.99595).epsilon(1e-5));
  CHECK(gelu(Tensor::scalar(3.0)).item() == doctest::Approx(oracle).epsilon(1e-12));

  Rng rng(3);
  auto x = random_tensor({64}, rng, -6.0, 6.0, false);
  auto diff = sub(gelu(x), gelu(scale(x, -1.0)));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(diff[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("gelu rejects NaN") {
  auto t = Tensor::scalar(0.0);
  t.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(gelu(t), NumericError);
}

TEST_CASE("rmsnorm values and errors") {
  auto ones = Tensor::full({2}, 1.0);
  auto r = rmsnorm(Tensor::from_data({2}, {3.0, 4.0}), ones, 0.0);
  CHECK(r[0] == doctest::Approx(3.0 / std::sqrt(12.5)).epsilon(1e-12));
  CHECK(r[0] == doctest::Approx(0.8485).epsilon(1e-4));
  CHECK(r[1] == doctest::Approx(1.1314).epsilon(1e-4));

  auto c = rmsnorm(Tensor::full({5}, -2.5), Tensor::full({5}, 1.0), 1e-15);
  for (double v : c.data()) CHECK(v == doctest::Approx(-1.0));

  auto z = rmsnorm(Tensor::zeros({4}), Tensor::full({4}, 1.0));
  for (double v : z.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(rmsnorm(Tensor::zeros({2, 4}), Tensor::full({3}, 1.0)), ShapeError);
}

TEST_CASE("backward on linear and quadratic losses") {
  Rng rng(11);
  auto w = random_tensor({6}, rng);
  auto x = random_tensor({6}, rng, -1, 1, false);
  Tape tape;
  {
    Tape::Scope s(tape);
    backward(sum(mul(w, x)), tape);
  }
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == doctest::Approx(x[i]));
  CHECK(tape.empty());

  w.zero_grad();
  {
    Tape::Scope s(tape);
    backward(sum_squares(w), tape);
  }
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == doctest::Approx(2.0 * w[i]));

  // two paths into one parameter accumulate
  w.zero_grad();
  {
    Tape::Scope s(tape);
    backward(add(sum(w), sum(scale(w, 3.0))), tape);
  }
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == doctest::Approx(4.0));
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  auto w = Tensor::zeros({3}, true);
  CHECK_THROWS_AS(backward(scale(w, 2.0), tape), ShapeError);
}

TEST_CASE("inference mode records nothing") {
  Tape tape;
  auto w = Tensor::full({3}, 1.0, true);
  auto y = gelu(w);
  CHECK(tape.empty());
  {
    Tape::Scope s(tape);
    y = gelu(w);
  }
  CHECK(tape.size() == 1);
}

TEST_CASE("grad_check on sum(sin(w))") {
  Rng rng(5);
  std::vector<Tensor> params{random_tensor({10}, rng, -3, 3)};
  const double err = grad_check([&] { return sum(sin(params[0])); }, params, {.step = 1e-5});
  CHECK(err < 1e-7);
}

TEST_CASE("grad_check rejects non-deterministic f") {
  std::vector<Tensor> params{Tensor::full({2}, 1.0, true)};
  int calls = 0;
  auto f = [&] { return scale(sum(params[0]), 1.0 + (calls++)); };
  CHECK_THROWS(grad_check(f, params));
}

TEST_CASE("per-primitive gradient checks") {
  Rng rng(17);
  const GradCheckOptions opts{.step = 1e-5, .coords_per_param = 64};
  auto weights = random_tensor({5, 7}, rng, -1, 1, false);  // fixed readout keeps losses non-trivial
  auto readout = [&](const Tensor& y) { return sum(mul(y, weights)); };

  SUBCASE("elementwise") {
    std::vector<Tensor> p{random_tensor({5, 7}, rng), random_tensor({5, 7}, rng)};
    CHECK(grad_check([&] { return readout(add(p[0], p[1])); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(sub(p[0], p[1])); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(mul(p[0], p[1])); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(scale(p[0], -1.7)); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(gelu(scale(p[0], 3.0))); }, p, opts) < 1e-7);
  }
  SUBCASE("reductions") {
    std::vector<Tensor> p{random_tensor({5, 7}, rng)};
    CHECK(grad_check([&] { return mean(mul(p[0], p[0])); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return sum_squares(p[0]); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return sum(mul(mean_rows(p[0]), slice_rows(weights, 0, 1))); }, p, opts) < 1e-7);
  }
  SUBCASE("matmul and linear") {
    std::vector<Tensor> p{random_tensor({5, 3}, rng), random_tensor({3, 7}, rng), random_tensor({7}, rng),
                          random_tensor({7, 3}, rng)};
    CHECK(grad_check([&] { return readout(matmul(p[0], p[1])); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(matmul(p[0], p[3], true)); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(linear(p[0], p[1], p[2])); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(add_row(matmul(p[0], p[1]), p[2])); }, p, opts) < 1e-7);
  }
  SUBCASE("normalization and softmax") {
    std::vector<Tensor> p{random_tensor({5, 7}, rng), random_tensor({7}, rng, 0.5, 1.5)};
    CHECK(grad_check([&] { return readout(rmsnorm(p[0], p[1])); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(softmax_rows(scale(p[0], 2.0))); }, p, opts) < 1e-7);
  }
  SUBCASE("row plumbing") {
    std::vector<Tensor> p{random_tensor({5, 7}, rng), random_tensor({1, 7}, rng), random_tensor({5}, rng),
                          random_tensor({5, 2}, rng)};
    const std::vector<std::size_t> idx{4, 0, 2, 2, 1};
    CHECK(grad_check([&] { return readout(gather_rows(p[0], idx)); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(scatter_add_rows(p[0], gather_rows(p[0], idx), idx)); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(add(p[0], broadcast_rows(p[1], 5))); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(mul_rows(p[0], p[2])); }, p, opts) < 1e-7);
    CHECK(grad_check(
              [&] {
                std::vector<Tensor> parts{slice_rows(p[0], 3, 2), slice_rows(p[0], 0, 3)};
                return readout(concat_rows(parts));
              },
              p, opts) < 1e-7);
    auto wide = random_tensor({5, 9}, rng, -1, 1, false);
    CHECK(grad_check([&] { return sum(mul(concat_cols(p[0], p[3]), wide)); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return sum(mul(pick_column(p[0], idx, 3), p[2])); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return readout(p[0].reshape({35}).reshape({5, 7})); }, p, opts) < 1e-7);
  }
  SUBCASE("cross entropy") {
    std::vector<Tensor> p{random_tensor({5, 7}, rng, -2, 2)};
    const std::vector<std::size_t> labels{0, 6, 3, 3, 1};
    CHECK(grad_check([&] { return cross_entropy(p[0], labels); }, p, opts) < 1e-7);
  }
  SUBCASE("top-k softmax with fixed selection") {
    std::vector<Tensor> p{random_tensor({5, 7}, rng, -2, 2)};
    auto sel = topk_softmax(p[0], 3).selected;
    CHECK(grad_check([&] { return readout(topk_softmax(p[0], 3, &sel).weights); }, p, opts) < 1e-7);
  }
  SUBCASE("attention") {
    std::vector<Tensor> p{random_tensor({6, 8}, rng), random_tensor({6, 8}, rng), random_tensor({6, 8}, rng)};
    auto w = random_tensor({6, 8}, rng, -1, 1, false);
    CHECK(grad_check([&] { return sum(mul(attention(p[0], p[1], p[2], 2), w)); }, p, opts) < 1e-7);
    CHECK(grad_check([&] { return sum(mul(attention(p[0], p[0], p[0], 4), w)); }, p, opts) < 1e-7);
  }
}

TEST_CASE("top-k softmax selection rules") {
  auto r = topk_softmax(Tensor::from_data({1, 4}, {2, 1, 0, -1}), 2);
  CHECK(r.selected == std::vector<std::uint32_t>{0, 1});
  CHECK(r.weights[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)));
  CHECK(r.weights[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(r.weights[1] == doctest::Approx(0.2689).epsilon(1e-4));
  CHECK(r.weights[2] == 0.0);
  CHECK(r.weights[3] == 0.0);

  auto tie = topk_softmax(Tensor::zeros({1, 4}), 2);
  CHECK(tie.selected == std::vector<std::uint32_t>{0, 1});
  CHECK(tie.weights[0] == 0.5);
  CHECK(tie.weights[1] == 0.5);

  Rng rng(2);
  auto logits = random_tensor({3, 6}, rng, -2, 2, false);
  auto full = topk_softmax(logits, 6).weights;
  auto dense = softmax_rows(logits);
  for (std::size_t i = 0; i < 18; ++i) CHECK(full[i] == doctest::Approx(dense[i]).epsilon(1e-14));
}

TEST_CASE("attention rows are stochastic") {
  Rng rng(8);
  auto q = random_tensor({9, 8}, rng, -2, 2, false);
  std::vector<double> probs;
  attention(q, q, q, 4, &probs);
  for (std::size_t row = 0; row < 4 * 9; ++row) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) s += probs[row * 9 + c];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  // single token: softmax over one key is 1, output is the value row
  auto v = random_tensor({1, 8}, rng, -1, 1, false);
  auto one = attention(slice_rows(q, 0, 1), slice_rows(q, 1, 1), v, 2);
  for (std::size_t i = 0; i < 8; ++i) CHECK(one[i] == doctest::Approx(v[i]).epsilon(1e-15));
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0}), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(attention(Tensor::zeros({2, 6}), Tensor::zeros({2, 6}), Tensor::zeros({2, 6}), 4), ShapeError);
}

TEST_CASE("determinism of a composite forward") {
  auto run = [] {
    Rng rng(99);
    auto a = random_tensor({16, 8}, rng);
    auto w = random_tensor({8, 8}, rng);
    auto g = Tensor::full({8}, 1.0);
    auto y = rmsnorm(gelu(matmul(a, w)), g);
    auto att = attention(y, y, y, 2);
    return std::vector<double>(att.data().begin(), att.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("MSTN round trip and corruption") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rank = static_cast<std::size_t>(rng.uniform_int(1, 4));
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(rng.uniform_int(1, 5));
    auto t = random_tensor(shape, rng, -1e3, 1e3, false);
    std::vector<std::uint8_t> buf;
    mstn::encode(buf, t);
    CHECK(buf.size() == 4 + 4 + 4 + 8 * rank + 4 + 8 * t.numel());
    mstn::Reader r(buf);
    auto back = mstn::decode(r);
    CHECK(back.shape() == t.shape());
    CHECK(std::equal(back.data().begin(), back.data().end(), t.data().begin()));
    std::vector<std::uint8_t> again;
    mstn::encode(again, back);
    CHECK(again == buf);
  }
  std::vector<std::uint8_t> buf;
  mstn::encode(buf, Tensor::from_data({2}, {1.5, -2.0}));
  CHECK(buf[0] == 'M');
  CHECK(buf[4] == 1);  // version, little-endian
  buf.resize(buf.size() - 3);
  mstn::Reader r(buf);
  CHECK_THROWS_AS(mstn::decode(r), mstn::FormatError);
}

TEST_CASE("complex tensor realification") {
  ComplexTensor c({2, 3});
  c.set(4, {1.0, -2.0});
  auto t = c.to_tensor();
  CHECK(t.shape() == Shape{2, 3, 2});
  CHECK(t[8] == 1.0);
  CHECK(t[9] == -2.0);
  auto back = ComplexTensor::from_tensor(t);
  CHECK(back.re == c.re);
  CHECK(back.im == c.im);
}

TEST_CASE("rng determinism and ranges") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(1);
  const auto saved = c.state();
  const double x = c.normal();
  c.set_state(saved);
  CHECK(c.normal() == x);
  for (int i = 0; i < 1000; ++i) {
    auto k = c.uniform_int(4, 16);
    CHECK(k >= 4);
    CHECK(k <= 16);
    CHECK(std::abs(c.truncated_normal(0.02)) <= 0.04);
  }
}
