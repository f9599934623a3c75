#include "atom/tensor.hpp"

#include <fmt/format.h>

#include <unordered_set>

namespace atom {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw TensorError(fmt::format("negative dimension in shape {}", shape_to_string(shape)));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

template <typename T>
Tensor<T> Tensor<T>::from_vector(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw TensorError(fmt::format("shape {} does not match {} values", shape_to_string(shape),
                                  values.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return from_vector(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = shape_numel(shape);
  return from_vector(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from_vector({}, {value});
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  auto t = from_vector(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
std::int64_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw TensorError(fmt::format("axis {} out of range for shape {}", axis, shape_to_string(s)));
  }
  return s[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  auto& n = checked();
  if (!n.parents.empty()) throw TensorError(fmt::format("in-place write to non-leaf '{}'", n.op));
  return n.value;
}

template <typename T>
void Tensor<T>::zero_grad() {
  checked().grad.clear();
}

template <typename T>
T Tensor<T>::item() const {
  const auto& n = checked();
  if (n.value.size() != 1) {
    throw TensorError(fmt::format("item() on tensor of shape {}", shape_to_string(n.shape)));
  }
  return n.value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_vector(shape(), checked().value);
}

template <typename T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                  std::initializer_list<Tensor<T>> inputs,
                  std::function<void(const std::vector<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  if (shape_numel(shape) != static_cast<std::int64_t>(value.size())) {
    throw TensorError(fmt::format("op '{}' produced {} values for shape {}", name, value.size(),
                                  shape_to_string(shape)));
  }
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) node->parents.push_back(in.node());
    }
    if (!node->parents.empty()) {
      node->requires_grad = true;
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

namespace {

template <typename T>
std::vector<detail::Node<T>*> topological_order(detail::Node<T>* root) {
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  // Iterative post-order DFS; graphs can be deep (one node per op).
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void run_backward(const Tensor<T>& root, std::span<const T> seed) {
  if (!root.requires_grad()) return;
  auto* root_node = root.node().get();
  auto& g = root_node->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  const auto order = topological_order(root_node);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& root) {
  if (root.numel() != 1) {
    throw TensorError(
        fmt::format("backward() needs a scalar root, got shape {}", shape_to_string(root.shape())));
  }
  const T one = T(1);
  run_backward(root, std::span<const T>(&one, 1));
}

template <typename T>
void backward_with(const Tensor<T>& root, std::span<const T> seed) {
  if (static_cast<std::int64_t>(seed.size()) != root.numel()) {
    throw TensorError("backward_with: seed size does not match root");
  }
  run_backward(root, seed);
}

#define ATOM_INSTANTIATE(T)                                                                  \
  template class Tensor<T>;                                                                  \
  template void backward<T>(const Tensor<T>&);                                               \
  template void backward_with<T>(const Tensor<T>&, std::span<const T>);                      \
  template Tensor<T> make_op<T>(const char*, Shape, std::vector<T>,                          \
                                std::initializer_list<Tensor<T>>,                            \
                                std::function<void(const std::vector<T>&)>);

ATOM_INSTANTIATE(float)
ATOM_INSTANTIATE(double)

#undef ATOM_INSTANTIATE

}  // namespace atom
