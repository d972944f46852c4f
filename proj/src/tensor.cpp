#include "apseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "apseg/errors.hpp"

namespace apseg {

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

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

template <typename T>
std::shared_ptr<Node<T>> make_node(Shape shape, std::vector<T> data, const char* op) {
  if (shape_numel(shape) != data.size())
    throw DimensionError(std::string(op) + ": shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " elements");
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->op = op;
  return n;
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> data) {
  return Tensor(make_node(std::move(shape), std::move(data), "constant"));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return constant(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
  const auto n = shape_numel(shape);
  return constant(std::move(shape), std::vector<T>(n, v));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v) {
  return constant({1}, {v});
}

template <typename T>
Tensor<T> Tensor<T>::leaf(Shape shape, std::vector<T> data) {
  auto n = make_node(std::move(shape), std::move(data), "leaf");
  n->requires_grad = true;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::from_op(const char* op, Shape shape, std::vector<T> value,
                             const std::vector<Tensor>& inputs,
                             std::function<void(Node<T>&)> backward_fn) {
  if (!all_finite<T>(value)) throw NumericError(std::string("non-finite value produced by ") + op);
  auto n = make_node(std::move(shape), std::move(value), op);
  for (const auto& in : inputs)
    if (in.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node_);
    n->backward = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return constant(node_->shape, node_->value);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss");
  if (!loss.requires_grad()) throw ContractError("backward() on a loss with no recorded graph");

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace apseg
