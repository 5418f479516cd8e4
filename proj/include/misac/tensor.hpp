// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with tape-based reverse-mode differentiation.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace misac {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a primitive produces (or receives) NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  double* ensure_grad();
};

}  // namespace detail

/// Shared handle to a node. Copies alias the same buffer; primitives always
/// allocate a fresh output, so values are immutable once recorded.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  /// Product of all leading axes; the matrix view every 2D primitive uses.
  std::size_t rows() const;
  /// Extent of the last axis.
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Direct write access, for optimizer updates and test perturbations only.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Value copy cut off from the graph.
  Tensor detach() const;
  /// Copy with a new shape of equal element count; differentiable.
  Tensor reshape(Shape shape) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape shape, std::vector<double> value, bool requires_grad);

  std::shared_ptr<detail::Node> node_;
};

/// Wraps a freshly computed buffer as a tensor; used by primitives.
Tensor make_result(Shape shape, std::vector<double> value, bool requires_grad);

/// Ordered log of recorded primitive applications. Primitives record into the
/// tape installed by the innermost live Tape::Scope on the calling thread; with
/// no scope installed they run in inference mode and record nothing.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Entry {
    const char* op;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  static Tape* active();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  friend void backward(const Tensor& loss, Tape& tape);
  std::vector<Entry> entries_;
};

/// Seeds d(loss)/d(loss) = 1 and replays the tape in exact reverse order,
/// accumulating into every reachable requires_grad tensor. Consumes the tape.
void backward(const Tensor& loss, Tape& tape);

}  // namespace misac
