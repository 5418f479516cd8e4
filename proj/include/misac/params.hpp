// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "misac/rng.hpp"
#include "misac/tensor.hpp"

namespace misac {

/// Named trainable tensors kept in name order, which fixes iteration and
/// serialization order.
class ParamStore {
 public:
  /// Registers a trainable tensor; throws std::invalid_argument on a duplicate name.
  const Tensor& add(const std::string& name, Tensor t);
  /// Throws std::out_of_range naming the missing parameter.
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<std::string> names() const;
  std::vector<Tensor> tensors() const;
  std::vector<Tensor> with_prefix(const std::string& prefix) const;
  const std::map<std::string, Tensor>& items() const { return params_; }

  std::size_t size() const { return params_.size(); }
  /// Total scalar count.
  std::size_t count() const;
  std::size_t count_with_prefix(const std::string& prefix) const;
  void zero_grad() const;

 private:
  std::map<std::string, Tensor> params_;
};

/// Truncated normal (within 2 sigma) weight, trainable.
Tensor init_weight(Shape shape, Rng& rng, double sigma = 0.02);
Tensor init_zeros(Shape shape);
Tensor init_ones(Shape shape);

}  // namespace misac
