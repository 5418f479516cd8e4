// SPDX-License-Identifier: Apache-2.0

#include "misac/tensor.hpp"

#include <cmath>
#include <sstream>

namespace misac {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

double* Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

Tensor make_result(Shape shape, std::vector<double> value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  const auto n = shape_numel(shape);
  return make_result(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor data");
  }
  return make_result(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range");
  return shape()[axis];
}

std::size_t Tensor::rows() const { return numel() / cols(); }
std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return make_result(shape(), node_->value, false); }

Tensor Tensor::reshape(Shape new_shape) const {
  validate_shape(new_shape);
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape));
  }
  auto out = make_result(std::move(new_shape), node_->value, requires_grad());
  if (requires_grad()) {
    if (Tape* tape = Tape::active()) {
      tape->record("reshape", [in = node_, o = out.node()] {
        if (o->grad.empty()) return;
        double* g = in->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i];
      });
    }
  }
  return out;
}

void Tape::record(const char* op, BackwardFn fn) { entries_.push_back({op, std::move(fn)}); }

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss");
  }
  if (!std::isfinite(loss.item())) throw NumericError("backward() on non-finite loss");
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) it->backward();
  tape.clear();
}

}  // namespace misac
