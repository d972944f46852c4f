#pragma once

// Dense tensor handle with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Forward ops build new nodes;
// nodes are immutable after construction except for gradient accumulation.
// A graph belongs to one worker: concurrent episodes each build their own.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace apseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<T> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T v);
  static Tensor scalar(T v);
  /// Leaf that collects gradients.
  static Tensor leaf(Shape shape, std::vector<T> data);

  /// Records an op result. Inputs that do not require grad are not kept
  /// alive; if none does, the result is a constant. Throws NumericError if
  /// `value` holds NaN or Inf.
  static Tensor from_op(const char* op, Shape shape, std::vector<T> value,
                        const std::vector<Tensor>& inputs, std::function<void(Node<T>&)> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const T> data() const { return node_->value; }
  T at(std::size_t i) const { return node_->value.at(i); }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode accumulation from a scalar loss into every reachable node
/// that requires grad.
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace apseg
