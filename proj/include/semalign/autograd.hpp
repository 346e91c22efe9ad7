#ifndef SEMALIGN_AUTOGRAD_HPP_
#define SEMALIGN_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <vector>

#include "semalign/tensor.hpp"

namespace semalign {

// Reverse-mode differentiation over tensors. Every differentiable operation
// produces a Node holding its value, its inputs and a closure that pushes the
// node's gradient into the gradients of its inputs.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  // Gradient buffer, allocated (zeroed) on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();

  const std::vector<int>& shape() const { return node_->value.shape(); }
  double item() const { return node_->value.item(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_op(Tensor, std::vector<Var>, std::function<void(Node&)>);
  std::shared_ptr<Node> node_;
};

// Creates the result node of an operation. The backward closure is only kept
// when some input requires a gradient.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Accumulates d(root)/d(leaf) * seed into every reachable leaf that requires a
// gradient. Interior gradients are reset on each call, so calling this for
// several roots of a shared graph sums their leaf gradients.
void backward(const Var& root, double seed = 1.0);

// Same value, cut from the graph.
Var detach(const Var& v);

// Input gradient accessor for backward closures: null when the input does not
// take a gradient.
inline Tensor* input_grad(Node& n, std::size_t i) {
  Node& in = *n.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

}  // namespace semalign

#endif  // SEMALIGN_AUTOGRAD_HPP_
