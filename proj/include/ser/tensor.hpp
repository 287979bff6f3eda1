#pragma once

#include "ser/error.hpp"

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ser {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class Mode { Train, Eval };

template <typename Scalar>
class Tensor;

namespace detail {

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array value;
  Array grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool consumed = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  Array& grad_buffer() {
    if (grad.size() != value.size()) grad = Array::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

/// Dense row-major n-d array with reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage and graph
/// node. Ops never modify their inputs; the only in-place mutations are
/// gradient accumulation during backward() and explicit writes through
/// mutable_values() (optimizer updates, running statistics).
template <typename Scalar>
class Tensor {
 public:
  using Array = typename detail::Node<Scalar>::Array;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;
  using BackwardFn = std::function<void(detail::Node<Scalar>&)>;

  Tensor() = default;
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  /// Records a new graph node. `backward` is dropped when no parent requires
  /// a gradient.
  static Tensor from_op(std::string_view op, Shape shape, Array values, std::vector<Tensor> parents,
                        BackwardFn backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  /// Size of `axis`; negative axes count from the end.
  Index dim(Index axis) const;
  Index size() const { return node_->value.size(); }

  const Array& values() const { return node_->value; }
  Array& mutable_values() { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }

  Scalar item() const;
  Scalar at(std::initializer_list<Index> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  /// Gradient, or zeros when none has been accumulated.
  Array grad() const;
  void zero_grad() { node_->grad.resize(0); }

  std::string_view op() const { return node_->op; }

  /// New leaf holding a copy of the values.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Runs reverse-mode accumulation from a scalar loss into every reachable
/// tensor that requires a gradient. Consumes the graph: a second call on the
/// same loss throws GraphConsumed.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

// ---------------------------------------------------------------------------

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array values, bool requires_grad)
    : node_(std::make_shared<detail::Node<Scalar>>()) {
  for (Index d : shape)
    if (d <= 0) throw Error(ErrorCode::ShapeMismatch, "non-positive dimension in " + shape_string(shape));
  if (numel(shape) != values.size())
    throw Error(ErrorCode::ShapeMismatch, shape_string(shape) + " does not hold " + std::to_string(values.size()) +
                                              " values");
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  Index n = numel(shape);
  return Tensor(std::move(shape), Array::Zero(n), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value, bool requires_grad) {
  Index n = numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return Tensor(Shape{}, Array::Constant(1, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_op(std::string_view op, Shape shape, Array values,
                                       std::vector<Tensor> parents, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  out.node_->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
  }
  return out;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  Index r = rank();
  Index a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw Error(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " +
                                              shape_string(shape()));
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw Error(ErrorCode::NotScalar, "item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> index) const {
  if (static_cast<Index>(index.size()) != rank())
    throw Error(ErrorCode::ShapeMismatch, "index rank does not match " + shape_string(shape()));
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    Index d = node_->shape[axis++];
    if (i < 0 || i >= d) throw Error(ErrorCode::ShapeMismatch, "index out of range");
    flat = flat * d + i;
  }
  return node_->value[flat];
}

template <typename Scalar>
typename Tensor<Scalar>::Array Tensor<Scalar>::grad() const {
  if (has_grad()) return node_->grad;
  return Array::Zero(size());
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(shape(), values());
}

}  // namespace ser
