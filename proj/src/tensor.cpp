#include "isp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace isp {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void check_finite(const char* op, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

}  // namespace

namespace {
thread_local bool no_grad_active = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(no_grad_active) { no_grad_active = true; }
NoGradGuard::~NoGradGuard() { no_grad_active = previous_; }
bool NoGradGuard::active() { return no_grad_active; }

namespace detail {

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

template <typename Range>
Tensor make_result_impl(const char* op, Shape shape, std::vector<double> data,
                        const Range& inputs, BackwardFn backward) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError(std::string(op) + ": data length does not match shape " +
                         shape_string(shape));
  }
  check_finite(op, data);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = !no_grad_active && std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(data), inputs,
                          std::move(backward));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(data), inputs,
                          std::move(backward));
}

}  // namespace detail

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError("Tensor: " + std::to_string(data.size()) +
                         " values do not fill shape " + shape_string(shape));
  }
  for (std::size_t dim : shape) {
    if (dim == 0) throw DimensionError("Tensor: zero extent in shape " + shape_string(shape));
  }
  check_finite("Tensor", data);
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows,
                      bool requires_grad) {
  if (rows.empty()) throw DimensionError("Tensor::matrix: no rows");
  std::size_t n = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{rows.size(), n}, std::move(data), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values), requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::rows() const { return rank() == 2 ? shape()[0] : 1; }

std::size_t Tensor::cols() const { return rank() == 0 ? 1 : shape().back(); }

std::span<const double> Tensor::data() const { return node_->data; }

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) {
    throw DimensionError("Tensor::at: index (" + std::to_string(row) + "," +
                         std::to_string(col) + ") outside " + shape_string(shape()));
  }
  return node_->data[row * cols() + col];
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("Tensor::item: tensor of shape " + shape_string(shape()) +
                         " is not a single value");
  }
  return node_->data[0];
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw std::logic_error("Tensor::mutable_data: not a leaf tensor");
  return node_->data;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return node_->parents.empty(); }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (size() != 1) {
    throw DimensionError("Tensor::backward: needs a single-element tensor, got " +
                         shape_string(shape()));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order with deterministic
  // parent visiting order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Interior buffers are scratch; leaves keep their accumulated gradient.
  for (detail::Node* node : order) {
    if (!node->parents.empty()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_size(new_shape) != size()) {
    throw DimensionError("reshape: cannot view " + shape_string(shape()) + " as " +
                         shape_string(new_shape));
  }
  return detail::make_result("reshape", std::move(new_shape), node_->data, {*this},
                             [](detail::Node& self) {
                               auto g = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             });
}

}  // namespace isp
