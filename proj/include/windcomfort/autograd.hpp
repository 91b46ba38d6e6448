#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a shared handle to a graph node. Ops record their inputs and a
// backward closure only when grad mode is on and at least one input requires
// a gradient; otherwise they produce plain constants.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "windcomfort/tensor.hpp"

namespace wc::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.numel() != value.numel() || grad.shape != value.shape) grad = Tensor<T>(value.shape);
    return grad;
  }
  bool has_grad() const { return grad.numel() == value.numel() && !grad.data.empty(); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  const Tensor<T>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape; }
  int dim(std::size_t i) const { return node_->value.shape.at(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(T(0));
  }
  T item() const { return node_->value.data.at(0); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  // Seeds d(self)/d(self) = 1 (self must hold one element) and propagates.
  void backward();

 private:
  std::shared_ptr<Node<T>> node_;
};

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

// Detached copy of the value; gradients stop here.
template <typename T>
Var<T> detach(const Var<T>& x);

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
                        int pad, int out_pad);

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad);

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> tanh(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

// Inverted dropout: kept units scaled by 1/(1-p).
template <typename T>
Var<T> dropout(const Var<T>& x, T p, std::mt19937_64& rng);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// Elementwise with broadcasting of b along any dimension where b has size 1.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
Var<T> add_scalar(const Var<T>& x, T value);

// Spatial pooling to [N, C, 1, 1] and channel pooling to [N, 1, H, W].
template <typename T>
Var<T> mean_spatial(const Var<T>& x);

template <typename T>
Var<T> max_spatial(const Var<T>& x);

template <typename T>
Var<T> mean_channels(const Var<T>& x);

template <typename T>
Var<T> max_channels(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// Batched matmul on rank-3 tensors: out[b] = op(a[b]) * op(b[b]).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b);

template <typename T>
Var<T> softmax_last(const Var<T>& x);

// weight / sigma where sigma = u^T W v for fixed (u, v), W viewed as [rows, numel/rows].
template <typename T>
Var<T> spectral_divide(const Var<T>& weight, const std::vector<T>& u, const std::vector<T>& v);

template <typename T>
Var<T> mean(const Var<T>& x);

template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b);

// mean((x - target)^2)
template <typename T>
Var<T> mse_to_constant(const Var<T>& x, T target);

// Binary cross entropy of sigmoid(logits) against a constant label, averaged.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, T target);

}  // namespace wc::ag
