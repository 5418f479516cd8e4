// SPDX-License-Identifier: Apache-2.0

#include "misac/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace misac {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;
using Strided = Eigen::OuterStride<>;
using ConstStridedMat = Eigen::Map<const RowMat, 0, Strided>;
using MutStridedMat = Eigen::Map<RowMat, 0, Strided>;
using NodePtr = std::shared_ptr<detail::Node>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Tensor finish(const char* op, Shape shape, std::vector<double> value, bool requires_grad) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output in ") + op);
  }
  return make_result(std::move(shape), std::move(value), requires_grad);
}

template <class Fn>
void record(const char* op, const Tensor& out, Fn&& fn) {
  if (!out.requires_grad()) return;
  if (Tape* tape = Tape::active()) tape->record(op, std::forward<Fn>(fn));
}

ConstMat mat(const NodePtr& n, std::size_t rows, std::size_t cols) { return ConstMat(n->value.data(), rows, cols); }
MutMat grad_mat(const NodePtr& n, std::size_t rows, std::size_t cols) { return MutMat(n->ensure_grad(), rows, cols); }

void require_same_numel(const Tensor& a, const Tensor& b, const char* op) {
  if (a.numel() != b.numel()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_numel(a, b, "add");
  std::vector<double> v(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  auto out = finish("add", a.shape(), std::move(v), a.requires_grad() || b.requires_grad());
  record("add", out, [an = a.node(), bn = b.node(), o = out.node()] {
    if (o->grad.empty()) return;
    for (auto& n : {an, bn}) {
      if (!n->requires_grad) continue;
      double* g = n->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_numel(a, b, "sub");
  std::vector<double> v(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  auto out = finish("sub", a.shape(), std::move(v), a.requires_grad() || b.requires_grad());
  record("sub", out, [an = a.node(), bn = b.node(), o = out.node()] {
    if (o->grad.empty()) return;
    if (an->requires_grad) {
      double* g = an->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i];
    }
    if (bn->requires_grad) {
      double* g = bn->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] -= o->grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_numel(a, b, "mul");
  std::vector<double> v(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  auto out = finish("mul", a.shape(), std::move(v), a.requires_grad() || b.requires_grad());
  record("mul", out, [an = a.node(), bn = b.node(), o = out.node()] {
    if (o->grad.empty()) return;
    if (an->requires_grad) {
      double* g = an->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      double* g = bn->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i] * an->value[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.data().begin(), a.data().end());
  for (auto& x : v) x *= s;
  auto out = finish("scale", a.shape(), std::move(v), a.requires_grad());
  record("scale", out, [an = a.node(), o = out.node(), s] {
    if (o->grad.empty()) return;
    double* g = an->ensure_grad();
    for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += s * o->grad[i];
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  std::vector<double> v(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isnan(xv[i])) throw NumericError("gelu: NaN input");
    v[i] = xv[i] * 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }
  auto out = finish("gelu", x.shape(), std::move(v), x.requires_grad());
  record("gelu", out, [xn = x.node(), o = out.node()] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    for (std::size_t i = 0; i < o->grad.size(); ++i) {
      const double z = xn->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(z * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * z * z);
      g[i] += o->grad[i] * (cdf + z * pdf);
    }
  });
  return out;
}

Tensor sin(const Tensor& x) {
  std::vector<double> v(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(xv[i]);
  auto out = finish("sin", x.shape(), std::move(v), x.requires_grad());
  record("sin", out, [xn = x.node(), o = out.node()] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i] * std::cos(xn->value[i]);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  auto out = finish("sum", {1}, {s}, x.requires_grad());
  record("sum", out, [xn = x.node(), o = out.node()] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += o->grad[0];
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_squares(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  auto out = finish("sum_squares", {1}, {s}, x.requires_grad());
  record("sum_squares", out, [xn = x.node(), o = out.node()] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += 2.0 * xn->value[i] * o->grad[0];
  });
  return out;
}

Tensor mean_rows(const Tensor& x) {
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> v(m, 0.0);
  auto xv = x.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) v[c] += xv[r * m + c];
  for (auto& e : v) e /= static_cast<double>(n);
  auto out = finish("mean_rows", matrix_shape(1, m), std::move(v), x.requires_grad());
  record("mean_rows", out, [xn = x.node(), o = out.node(), n, m] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) g[r * m + c] += o->grad[c] * inv;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const std::size_t n = a.rows(), k = a.cols();
  const std::size_t bk = transpose_b ? b.cols() : b.rows();
  const std::size_t m = transpose_b ? b.rows() : b.cols();
  if (bk != k) {
    throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                     (transpose_b ? "^T" : ""));
  }
  std::vector<double> v(n * m);
  MutMat c(v.data(), n, m);
  if (transpose_b) {
    c.noalias() = mat(a.node(), n, k) * mat(b.node(), m, k).transpose();
  } else {
    c.noalias() = mat(a.node(), n, k) * mat(b.node(), k, m);
  }
  auto out = finish("matmul", matrix_shape(n, m), std::move(v), a.requires_grad() || b.requires_grad());
  record("matmul", out, [an = a.node(), bn = b.node(), o = out.node(), n, k, m, transpose_b] {
    if (o->grad.empty()) return;
    ConstMat go(o->grad.data(), n, m);
    if (transpose_b) {
      ConstMat bm = mat(bn, m, k);
      if (an->requires_grad) grad_mat(an, n, k).noalias() += go * bm;
      if (bn->requires_grad) grad_mat(bn, m, k).noalias() += go.transpose() * mat(an, n, k);
    } else {
      ConstMat bm = mat(bn, k, m);
      if (an->requires_grad) grad_mat(an, n, k).noalias() += go * bm.transpose();
      if (bn->requires_grad) grad_mat(bn, k, m).noalias() += mat(an, n, k).transpose() * go;
    }
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const std::size_t n = x.rows(), in = x.cols();
  if (w.rows() != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  }
  const std::size_t outw = w.cols();
  if (bias.numel() != outw) throw ShapeError("linear: bias length mismatch " + shape_str(bias.shape()));
  std::vector<double> v(n * outw);
  MutMat c(v.data(), n, outw);
  c.noalias() = mat(x.node(), n, in) * mat(w.node(), in, outw);
  c.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), outw);
  const bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
  auto out = finish("linear", matrix_shape(n, outw), std::move(v), rg);
  record("linear", out, [xn = x.node(), wn = w.node(), bn = bias.node(), o = out.node(), n, in, outw] {
    if (o->grad.empty()) return;
    ConstMat go(o->grad.data(), n, outw);
    if (xn->requires_grad) grad_mat(xn, n, in).noalias() += go * mat(wn, in, outw).transpose();
    if (wn->requires_grad) grad_mat(wn, in, outw).noalias() += mat(xn, n, in).transpose() * go;
    if (bn->requires_grad) {
      double* gb = bn->ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < outw; ++c) gb[c] += o->grad[r * outw + c];
    }
  });
  return out;
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  const std::size_t n = x.rows(), m = x.cols();
  if (row.numel() != m) throw ShapeError("add_row: row length mismatch");
  std::vector<double> v(x.data().begin(), x.data().end());
  auto rv = row.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) v[r * m + c] += rv[c];
  auto out = finish("add_row", x.shape(), std::move(v), x.requires_grad() || row.requires_grad());
  record("add_row", out, [xn = x.node(), rn = row.node(), o = out.node(), n, m] {
    if (o->grad.empty()) return;
    if (xn->requires_grad) {
      double* g = xn->ensure_grad();
      for (std::size_t i = 0; i < n * m; ++i) g[i] += o->grad[i];
    }
    if (rn->requires_grad) {
      double* g = rn->ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) g[c] += o->grad[r * m + c];
    }
  });
  return out;
}

Tensor mul_rows(const Tensor& x, const Tensor& w) {
  const std::size_t n = x.rows(), m = x.cols();
  if (w.numel() != n) throw ShapeError("mul_rows: weight count mismatch");
  std::vector<double> v(x.data().begin(), x.data().end());
  auto wv = w.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) v[r * m + c] *= wv[r];
  auto out = finish("mul_rows", x.shape(), std::move(v), x.requires_grad() || w.requires_grad());
  record("mul_rows", out, [xn = x.node(), wn = w.node(), o = out.node(), n, m] {
    if (o->grad.empty()) return;
    if (xn->requires_grad) {
      double* g = xn->ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) g[r * m + c] += o->grad[r * m + c] * wn->value[r];
    }
    if (wn->requires_grad) {
      double* g = wn->ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m; ++c) acc += o->grad[r * m + c] * xn->value[r * m + c];
        g[r] += acc;
      }
    }
  });
  return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t n = x.rows(), m = x.cols();
  if (gain.numel() != m) {
    throw ShapeError("rmsnorm: gain length " + std::to_string(gain.numel()) + " vs last axis " + std::to_string(m));
  }
  if (!(eps >= 0.0)) throw std::invalid_argument("rmsnorm: eps must be non-negative");
  std::vector<double> v(n * m);
  std::vector<double> inv_rms(n);
  auto xv = x.data();
  auto gv = gain.data();
  for (std::size_t r = 0; r < n; ++r) {
    double ms = 0.0;
    for (std::size_t c = 0; c < m; ++c) ms += xv[r * m + c] * xv[r * m + c];
    ms /= static_cast<double>(m);
    if (ms + eps <= 0.0) throw NumericError("rmsnorm: zero vector with eps = 0");
    inv_rms[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t c = 0; c < m; ++c) v[r * m + c] = xv[r * m + c] * inv_rms[r] * gv[c];
  }
  auto out = finish("rmsnorm", x.shape(), std::move(v), x.requires_grad() || gain.requires_grad());
  record("rmsnorm", out, [xn = x.node(), gn = gain.node(), o = out.node(), inv = std::move(inv_rms), n, m] {
    if (o->grad.empty()) return;
    const auto& xv = xn->value;
    const auto& gv = gn->value;
    double* gx = xn->requires_grad ? xn->ensure_grad() : nullptr;
    double* gg = gn->requires_grad ? gn->ensure_grad() : nullptr;
    for (std::size_t r = 0; r < n; ++r) {
      const double ir = inv[r];
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        const double du = o->grad[r * m + c] * gv[c];
        dot += du * xv[r * m + c];
        if (gg) gg[c] += o->grad[r * m + c] * xv[r * m + c] * ir;
      }
      if (!gx) continue;
      const double coef = ir * ir * ir * dot / static_cast<double>(m);
      for (std::size_t c = 0; c < m; ++c) {
        gx[r * m + c] += ir * o->grad[r * m + c] * gv[c] - coef * xv[r * m + c];
      }
    }
  });
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> v(n * m);
  auto xv = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) z += (v[r * m + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < m; ++c) v[r * m + c] /= z;
  }
  auto out = finish("softmax_rows", x.shape(), std::move(v), x.requires_grad());
  record("softmax_rows", out, [xn = x.node(), o = out.node(), n, m] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += o->grad[r * m + c] * o->value[r * m + c];
      for (std::size_t c = 0; c < m; ++c) g[r * m + c] += o->value[r * m + c] * (o->grad[r * m + c] - dot);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Row plumbing

Tensor broadcast_rows(const Tensor& row, std::size_t n) {
  const std::size_t m = row.numel();
  std::vector<double> v(n * m);
  for (std::size_t r = 0; r < n; ++r) std::copy(row.data().begin(), row.data().end(), v.begin() + r * m);
  auto out = finish("broadcast_rows", matrix_shape(n, m), std::move(v), row.requires_grad());
  record("broadcast_rows", out, [rn = row.node(), o = out.node(), n, m] {
    if (o->grad.empty()) return;
    double* g = rn->ensure_grad();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) g[c] += o->grad[r * m + c];
  });
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t n = x.rows(), m = x.cols();
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  std::vector<double> v(index.size() * m);
  auto xv = x.data();
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] >= n) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.begin() + index[j] * m, m, v.begin() + j * m);
  }
  auto out = finish("gather_rows", matrix_shape(index.size(), m), std::move(v), x.requires_grad());
  record("gather_rows", out, [xn = x.node(), o = out.node(), idx = std::vector<std::size_t>(index.begin(), index.end()), m] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    for (std::size_t j = 0; j < idx.size(); ++j)
      for (std::size_t c = 0; c < m; ++c) g[idx[j] * m + c] += o->grad[j * m + c];
  });
  return out;
}

Tensor scatter_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> index) {
  const std::size_t n = base.rows(), m = base.cols();
  if (src.cols() != m || src.rows() != index.size()) throw ShapeError("scatter_add_rows: shape mismatch");
  std::vector<double> v(base.data().begin(), base.data().end());
  auto sv = src.data();
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] >= n) throw ShapeError("scatter_add_rows: index out of range");
    for (std::size_t c = 0; c < m; ++c) v[index[j] * m + c] += sv[j * m + c];
  }
  auto out = finish("scatter_add_rows", base.shape(), std::move(v), base.requires_grad() || src.requires_grad());
  record("scatter_add_rows", out,
         [bn = base.node(), sn = src.node(), o = out.node(), idx = std::vector<std::size_t>(index.begin(), index.end()), m] {
           if (o->grad.empty()) return;
           if (bn->requires_grad) {
             double* g = bn->ensure_grad();
             for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i];
           }
           if (sn->requires_grad) {
             double* g = sn->ensure_grad();
             for (std::size_t j = 0; j < idx.size(); ++j)
               for (std::size_t c = 0; c < m; ++c) g[j * m + c] += o->grad[idx[j] * m + c];
           }
         });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t m = x.cols();
  if (count == 0 || begin + count > x.rows()) throw ShapeError("slice_rows: range out of bounds");
  std::vector<double> v(x.data().begin() + begin * m, x.data().begin() + (begin + count) * m);
  auto out = finish("slice_rows", matrix_shape(count, m), std::move(v), x.requires_grad());
  record("slice_rows", out, [xn = x.node(), o = out.node(), off = begin * m] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    for (std::size_t i = 0; i < o->grad.size(); ++i) g[off + i] += o->grad[i];
  });
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t m = parts.front().cols();
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != m) throw ShapeError("concat_rows: column mismatch");
    n += p.rows();
    rg = rg || p.requires_grad();
  }
  std::vector<double> v;
  v.reserve(n * m);
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    v.insert(v.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  auto out = finish("concat_rows", matrix_shape(n, m), std::move(v), rg);
  record("concat_rows", out, [nodes = std::move(nodes), o = out.node()] {
    if (o->grad.empty()) return;
    std::size_t off = 0;
    for (const auto& nd : nodes) {
      const std::size_t len = nd->value.size();
      if (nd->requires_grad) {
        double* g = nd->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) g[i] += o->grad[off + i];
      }
      off += len;
    }
  });
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows();
  if (b.rows() != n) throw ShapeError("concat_cols: row mismatch");
  const std::size_t ma = a.cols(), mb = b.cols();
  std::vector<double> v(n * (ma + mb));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.data().begin() + r * ma, ma, v.begin() + r * (ma + mb));
    std::copy_n(b.data().begin() + r * mb, mb, v.begin() + r * (ma + mb) + ma);
  }
  auto out = finish("concat_cols", matrix_shape(n, ma + mb), std::move(v), a.requires_grad() || b.requires_grad());
  record("concat_cols", out, [an = a.node(), bn = b.node(), o = out.node(), n, ma, mb] {
    if (o->grad.empty()) return;
    const std::size_t w = ma + mb;
    if (an->requires_grad) {
      double* g = an->ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < ma; ++c) g[r * ma + c] += o->grad[r * w + c];
    }
    if (bn->requires_grad) {
      double* g = bn->ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < mb; ++c) g[r * mb + c] += o->grad[r * w + ma + c];
    }
  });
  return out;
}

Tensor pick_column(const Tensor& x, std::span<const std::size_t> rows, std::size_t col) {
  const std::size_t m = x.cols();
  if (col >= m) throw ShapeError("pick_column: column out of range");
  if (rows.empty()) throw ShapeError("pick_column: empty row set");
  std::vector<double> v(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j] >= x.rows()) throw ShapeError("pick_column: row out of range");
    v[j] = x.data()[rows[j] * m + col];
  }
  auto out = finish("pick_column", {rows.size()}, std::move(v), x.requires_grad());
  record("pick_column", out, [xn = x.node(), o = out.node(), r = std::vector<std::size_t>(rows.begin(), rows.end()), m, col] {
    if (o->grad.empty()) return;
    double* g = xn->ensure_grad();
    for (std::size_t j = 0; j < r.size(); ++j) g[r[j] * m + col] += o->grad[j];
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) throw ShapeError("cross_entropy: label count mismatch");
  std::vector<double> probs(b * c);
  double loss = 0.0;
  auto lv = logits.data();
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= c) throw ShapeError("cross_entropy: label out of range");
    const double* row = lv.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[r * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= z;
    loss += std::log(z) + mx - row[labels[r]];
  }
  loss /= static_cast<double>(b);
  auto out = finish("cross_entropy", {1}, {loss}, logits.requires_grad());
  record("cross_entropy", out,
         [ln = logits.node(), o = out.node(), p = std::move(probs), lab = std::vector<std::size_t>(labels.begin(), labels.end()), b, c] {
           if (o->grad.empty()) return;
           double* g = ln->ensure_grad();
           const double s = o->grad[0] / static_cast<double>(b);
           for (std::size_t r = 0; r < b; ++r)
             for (std::size_t j = 0; j < c; ++j) g[r * c + j] += s * (p[r * c + j] - (j == lab[r] ? 1.0 : 0.0));
         });
  return out;
}

TopKResult topk_softmax(const Tensor& logits, std::size_t k, const std::vector<std::uint32_t>* forced) {
  const std::size_t n = logits.rows(), kk = logits.cols();
  if (k < 1 || k > kk) throw std::invalid_argument("topk_softmax: k must be in [1, K]");
  if (forced && forced->size() != n * k) throw ShapeError("topk_softmax: forced selection has wrong size");
  TopKResult res;
  res.k = k;
  res.selected.resize(n * k);
  std::vector<double> w(n * kk, 0.0);
  std::vector<std::uint32_t> order(kk);
  auto lv = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = lv.data() + r * kk;
    std::uint32_t* sel = res.selected.data() + r * k;
    if (forced) {
      std::copy_n(forced->begin() + r * k, k, sel);
    } else {
      std::iota(order.begin(), order.end(), 0u);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [row](std::uint32_t a, std::uint32_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
      std::copy_n(order.begin(), k, sel);
    }
    double mx = row[sel[0]];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[sel[j]]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (w[r * kk + sel[j]] = std::exp(row[sel[j]] - mx));
    for (std::size_t j = 0; j < k; ++j) w[r * kk + sel[j]] /= z;
  }
  res.weights = finish("topk_softmax", logits.shape(), std::move(w), logits.requires_grad());
  record("topk_softmax", res.weights, [ln = logits.node(), o = res.weights.node(), sel = res.selected, n, kk, k] {
    if (o->grad.empty()) return;
    double* g = ln->ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      const std::uint32_t* s = sel.data() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += o->grad[r * kk + s[j]] * o->value[r * kk + s[j]];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = r * kk + s[j];
        g[i] += o->value[i] * (o->grad[i] - dot);
      }
    }
  });
  return res;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads, std::vector<double>* probs_out) {
  const std::size_t n = q.rows(), d = q.cols();
  if (k.rows() != n || v.rows() != n || k.cols() != d || v.cols() != d) throw ShapeError("attention: q/k/v shape mismatch");
  if (n_heads == 0 || d % n_heads != 0) throw ShapeError("attention: d not divisible by heads");
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> probs(n_heads * n * n);
  std::vector<double> outv(n * d);
  for (std::size_t h = 0; h < n_heads; ++h) {
    ConstStridedMat qh(q.data().data() + h * dh, n, dh, Strided(d));
    ConstStridedMat kh(k.data().data() + h * dh, n, dh, Strided(d));
    ConstStridedMat vh(v.data().data() + h * dh, n, dh, Strided(d));
    MutMat p(probs.data() + h * n * n, n, n);
    p.noalias() = (qh * kh.transpose()) * inv_sqrt;
    // scalar loops: Eigen reductions peel by address alignment, which breaks bit-reproducibility
    for (std::size_t r = 0; r < n; ++r) {
      double* row = probs.data() + h * n * n + r * n;
      const double mx = *std::max_element(row, row + n);
      double z = 0.0;
      for (std::size_t c = 0; c < n; ++c) z += (row[c] = std::exp(row[c] - mx));
      for (std::size_t c = 0; c < n; ++c) row[c] /= z;
    }
    MutStridedMat oh(outv.data() + h * dh, n, dh, Strided(d));
    oh.noalias() = p * vh;
  }
  if (probs_out) *probs_out = probs;
  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
  auto out = finish("attention", matrix_shape(n, d), std::move(outv), rg);
  record("attention", out,
         [qn = q.node(), kn = k.node(), vn = v.node(), o = out.node(), pr = std::move(probs), n, d, dh, n_heads, inv_sqrt] {
           if (o->grad.empty()) return;
           RowMat dp(n, n);
           for (std::size_t h = 0; h < n_heads; ++h) {
             const std::size_t off = h * dh;
             ConstMat p(pr.data() + h * n * n, n, n);
             ConstStridedMat go(o->grad.data() + off, n, dh, Strided(d));
             ConstStridedMat qh(qn->value.data() + off, n, dh, Strided(d));
             ConstStridedMat kh(kn->value.data() + off, n, dh, Strided(d));
             ConstStridedMat vh(vn->value.data() + off, n, dh, Strided(d));
             if (vn->requires_grad) {
               MutStridedMat gv(vn->ensure_grad() + off, n, dh, Strided(d));
               gv.noalias() += p.transpose() * go;
             }
             if (!qn->requires_grad && !kn->requires_grad) continue;
             dp.noalias() = go * vh.transpose();
             for (std::size_t r = 0; r < n; ++r) {
               const double* prow = pr.data() + h * n * n + r * n;
               double* drow = dp.data() + r * n;
               double dot = 0.0;
               for (std::size_t c = 0; c < n; ++c) dot += prow[c] * drow[c];
               for (std::size_t c = 0; c < n; ++c) drow[c] = prow[c] * (drow[c] - dot) * inv_sqrt;
             }
             if (qn->requires_grad) {
               MutStridedMat gq(qn->ensure_grad() + off, n, dh, Strided(d));
               gq.noalias() += dp * kh;
             }
             if (kn->requires_grad) {
               MutStridedMat gk(kn->ensure_grad() + off, n, dh, Strided(d));
               gk.noalias() += dp.transpose() * qh;
             }
           }
         });
  return out;
}

}  // namespace misac
