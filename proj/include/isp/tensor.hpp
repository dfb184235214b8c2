#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace isp {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation would produce (or receives) a NaN/Inf, or a
/// vector is too close to zero for a normalized quantity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  /// Gradient buffer of this node, zero-allocated on first use.
  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode differentiation.
///
/// A Tensor is a cheap handle: copies share the underlying storage. Results
/// of operations are immutable; only leaves (tensors built directly from
/// data) expose mutable storage, which is how optimizers and the gradient
/// checker update parameters in place.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major 2-D tensor from nested rows.
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Leading extent for 2-D tensors; 1 for vectors and scalars.
  std::size_t rows() const;
  /// Trailing extent; 1 for scalars.
  std::size_t cols() const;

  std::span<const double> data() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  /// Writable storage; only valid on leaves.
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Accumulated gradient (zeros if none has been accumulated yet).
  std::vector<double> grad() const;
  void zero_grad();

  /// Reverse pass from a single-element tensor. Gradients accumulate into
  /// every reachable tensor that requires them.
  void backward() const;

  /// Leaf copy of the values, cut off from the graph.
  Tensor detach() const;
  /// Same values under a new shape of equal size (differentiable).
  Tensor reshape(Shape shape) const;

  bool defined() const { return node_ != nullptr; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive, operations on this thread record no graph: results never
/// require gradients. Used for inference-only passes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

namespace detail {

/// Builds an op result. Validates finiteness, and wires parents and the
/// backward closure only when some input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace detail

}  // namespace isp
