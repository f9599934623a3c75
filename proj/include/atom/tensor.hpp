#pragma once

// Dense tensor value type with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a graph node. Operations that receive at
// least one input with requires_grad() (while gradient recording is enabled)
// produce a node that remembers its parents and a closure that pushes the
// output gradient back into them. backward() walks the reachable graph once in
// reverse topological order.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace atom {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<T>&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from_vector(Shape shape, std::vector<T> values);
  static Tensor scalar(T value);
  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return shape().size(); }
  std::int64_t dim(std::size_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(checked().value.size()); }

  std::span<const T> data() const { return checked().value; }
  // Only leaves may be mutated in place (optimizer updates, checkpoint loads).
  std::span<T> mutable_data();

  bool requires_grad() const { return checked().requires_grad; }
  bool has_grad() const { return !checked().grad.empty(); }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return checked().grad; }
  void zero_grad();

  T item() const;
  Tensor detach() const;
  std::vector<T> to_vector() const { return checked().value; }

  const NodePtr& node() const { return node_; }

 private:
  detail::Node<T>& checked() const {
    if (!node_) throw TensorError("use of undefined tensor");
    return *node_;
  }
  NodePtr node_;
};

// Reverse pass from a scalar root. Leaves accumulate d(root)/d(leaf).
// A root that does not require grad leaves every gradient untouched.
template <typename T>
void backward(const Tensor<T>& root);

// Same as backward() but seeds the root with an arbitrary same-shape gradient.
template <typename T>
void backward_with(const Tensor<T>& root, std::span<const T> seed);

// Building block for custom differentiable ops. `backward` receives the output
// gradient and must accumulate into the inputs' grad buffers (see grad_of).
template <typename T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                  std::initializer_list<Tensor<T>> inputs,
                  std::function<void(const std::vector<T>&)> backward);

// Gradient buffer of an op input inside a backward closure, or nullptr when
// that input does not take gradients.
template <typename T>
T* grad_of(const Tensor<T>& input) {
  if (!input.defined() || !input.requires_grad()) return nullptr;
  return input.node()->grad_buffer().data();
}

}  // namespace atom
