#include "semalign/autograd.hpp"

#include <unordered_set>
#include <utility>

#include "semalign/errors.hpp"

namespace semalign {

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  bool any = false;
  for (const Var& in : inputs) any = any || in.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (const Var& in : inputs) out.node_->inputs.push_back(in.node());
    out.node_->backward = std::move(backward);
  }
  return out;
}

void backward(const Var& root, double seed) {
  if (!root.defined() || !root.requires_grad()) return;
  if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root");
  if (root.node()->is_leaf()) {
    root.node()->grad_buffer()[0] += seed;
    return;
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !child->is_leaf() && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad = Tensor(n->value.shape(), 0.0);
  order.back()->grad[0] = seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    (*it)->backward(**it);
    (*it)->grad = Tensor();
  }
}

Var detach(const Var& v) { return Var(v.value(), false); }

}  // namespace semalign
