#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfit::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised by any op whose result contains NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense row-major double tensor. Copies share the underlying node; values of
/// non-leaf tensors never change after construction.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);

  // Records an op result. Parents that do not require gradients are dropped
  // together with the backward rule when no parent requires one.
  static Tensor from_op(const char* op, Shape shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const double> values() const;
  double item() const;
  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;

  // Only leaves may be written; the optimizer updates parameters this way
  // between graph constructions.
  std::span<double> mutable_values();

  // Same values, detached from any graph.
  Tensor detach() const;

  detail::Node& node() const;
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

using Gradients = std::vector<std::vector<double>>;

/// Reverse-mode sweep from a scalar loss. Returns one gradient per entry of
/// `params`, zero-filled when the parameter is unreachable from `loss`.
Gradients backward(const Tensor& loss, std::span<const Tensor> params);

void check_finite(std::span<const double> values, const char* op);

}  // namespace qfit::ad
