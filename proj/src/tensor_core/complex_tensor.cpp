// SPDX-License-Identifier: Apache-2.0

#include "misac/complex_tensor.hpp"

namespace misac {

ComplexTensor::ComplexTensor(Shape s) : shape(std::move(s)) {
  const auto n = shape_numel(shape);
  re.assign(n, 0.0);
  im.assign(n, 0.0);
}

double ComplexTensor::power() const {
  double p = 0.0;
  for (std::size_t i = 0; i < re.size(); ++i) p += re[i] * re[i] + im[i] * im[i];
  return p;
}

Tensor ComplexTensor::to_tensor() const {
  Shape s = shape;
  s.push_back(2);
  std::vector<double> v(2 * re.size());
  for (std::size_t i = 0; i < re.size(); ++i) {
    v[2 * i] = re[i];
    v[2 * i + 1] = im[i];
  }
  return Tensor::from_data(std::move(s), std::move(v));
}

ComplexTensor ComplexTensor::from_tensor(const Tensor& t) {
  if (t.rank() < 2 || t.cols() != 2) throw ShapeError("ComplexTensor::from_tensor: trailing axis must be 2");
  Shape s(t.shape().begin(), t.shape().end() - 1);
  ComplexTensor c(s);
  auto v = t.data();
  for (std::size_t i = 0; i < c.numel(); ++i) {
    c.re[i] = v[2 * i];
    c.im[i] = v[2 * i + 1];
  }
  return c;
}

}  // namespace misac
