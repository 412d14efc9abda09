#pragma once

// Dense n-dimensional tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Ops build new nodes that
// remember their parents and a backward rule; Tensor::backward() walks the
// resulting DAG in reverse topological order and accumulates gradients into
// every node that requires them. Tensors are instantiated for float (training)
// and double (finite-difference gradient checks).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aqg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;

  std::span<const T> data() const { return node_->data; }
  // Direct write access, meant for initialization and optimizer updates of
  // leaf parameters. Never mutate a tensor that an existing graph depends on.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode pass from this scalar. Gradients accumulate into leaves.
  void backward() const;

  // Same values, no graph history.
  Tensor detach() const;
  const char* op_name() const { return node_->op; }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  NodePtr node_;
};

using FloatTensor = Tensor<float>;
using DoubleTensor = Tensor<double>;

// Graph recording is on by default; a guard turns it off on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Verification hook: negates the upstream gradient entering the backward
// rule of every node whose op name equals `op`. Empty string disables it.
// Not thread-safe; set it before running any graph.
void set_backward_sign_flip(std::string op);
const std::string& backward_sign_flip();

// ---- ops -------------------------------------------------------------------

// [..., m, q] x [..., q, r] -> [..., m, r] with broadcast batch dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise with numpy-style broadcasting.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

// Normalizes over the last dimension, then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b);

// Gathers rows of `weight` [V, d]; result shape is index_shape + [d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& weight, std::span<const std::int32_t> ids,
                    const Shape& index_shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Mean token cross entropy of logits [..., V] against one target per row.
// Rows whose target equals ignore_index are excluded from the mean.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        std::span<const std::int32_t> targets,
                        std::int32_t ignore_index = -1);

// Inverted dropout. Identity when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng);

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

}  // namespace aqg
