#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dinet/tensor.hpp"

namespace dinet {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor::zeros_like(value);
    return grad;
  }
  bool is_leaf() const noexcept { return !backward_fn; }
};

/// Handle to a node of the computation graph. Copies share the node.
class Var {
 public:
  Var() : node_(std::make_shared<Node>()) {}
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor& value() const noexcept { return node_->value; }
  Tensor& mutable_value() noexcept { return node_->value; }
  const Shape& shape() const noexcept { return node_->value.shape(); }
  int64_t dim(std::size_t i) const { return node_->value.dim(i); }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool r) noexcept { node_->requires_grad = r; }

  bool has_grad() const noexcept { return node_->grad.shape() == node_->value.shape(); }
  /// Gradient accumulated by backward(); zeros if none has been accumulated.
  Tensor grad() const { return has_grad() ? node_->grad : Tensor::zeros_like(node_->value); }
  void zero_grad() { node_->grad = Tensor(); }

  Var detach() const { return Var(node_->value, false); }

  Node& node() noexcept { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result. The closure receives the result node; its parents are
/// `inputs` in order. When grad mode is off or no input requires grad the
/// result is a constant leaf.
inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  Node& n = out.node();
  n.requires_grad = true;
  n.parents.reserve(inputs.size());
  for (auto& in : inputs) n.parents.push_back(in.node_ptr());
  n.backward_fn = std::move(backward_fn);
  return out;
}

/// Adds `g` into parent `i`'s gradient if that parent takes gradients.
inline void accumulate_into(Node& self, std::size_t i, const Tensor& g) {
  Node& p = *self.parents[i];
  if (p.requires_grad) p.grad_buffer() += g;
}

inline bool parent_needs_grad(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate; the
/// recorded graph is released afterwards.
inline void backward(Var root) {
  if (root.value().numel() != 1) throw ContractViolation("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node().grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    n->grad_buffer();
    n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (n->is_leaf()) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->requires_grad = false;
    n->grad = Tensor();
  }
}

}  // namespace dinet
