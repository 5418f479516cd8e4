// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <vector>

#include "misac/tensor.hpp"

namespace misac {

using cdouble = std::complex<double>;

/// Complex array stored as split real/imaginary planes. Not differentiable;
/// realified via to_tensor() before entering the model.
struct ComplexTensor {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  ComplexTensor() = default;
  explicit ComplexTensor(Shape s);

  std::size_t numel() const { return re.size(); }
  cdouble at(std::size_t i) const { return {re[i], im[i]}; }
  void set(std::size_t i, cdouble v) {
    re[i] = v.real();
    im[i] = v.imag();
  }
  double power() const;  // sum |x|^2

  /// Stacks re/im on a new trailing axis: shape + [2].
  Tensor to_tensor() const;
  /// Inverse of to_tensor(); last axis must have extent 2.
  static ComplexTensor from_tensor(const Tensor& t);
};

}  // namespace misac
