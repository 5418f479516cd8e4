// SPDX-License-Identifier: Apache-2.0

#include "misac/params.hpp"

#include <stdexcept>

namespace misac {

const Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (!t.defined()) throw std::invalid_argument("ParamStore: undefined tensor for " + name);
  t.set_requires_grad(true);
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("missing parameter " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(v);
  return out;
}

std::vector<Tensor> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (auto it = params_.lower_bound(prefix); it != params_.end() && it->first.compare(0, prefix.size(), prefix) == 0; ++it)
    out.push_back(it->second);
  return out;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : params_) n += v.numel();
  return n;
}

std::size_t ParamStore::count_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& t : with_prefix(prefix)) n += t.numel();
  return n;
}

void ParamStore::zero_grad() const {
  for (auto [k, v] : params_) v.zero_grad();
}

Tensor init_weight(Shape shape, Rng& rng, double sigma) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.truncated_normal(sigma);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor init_zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor init_ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

}  // namespace misac
