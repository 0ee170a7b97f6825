#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "affect/tensor.hpp"

namespace affect {

class Graph;

// Lightweight handle to a node of one computation graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

// Single-pass reverse-mode tape. One forward+backward owns its graph
// exclusively; parameter tensors bound via param() are only ever read, their
// gradients accumulate in graph-local buffers. Nodes are appended in
// execution order, so reverse insertion order is a reverse topological order.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  struct Node {
    std::string op;
    const Tensor* external = nullptr;  // leaf bound to a parameter tensor
    Tensor value;                      // owned value when external == nullptr
    Tensor grad;                       // lazily allocated during backward
    std::vector<int> inputs;
    BackwardFn backward;

    const Tensor& val() const { return external ? *external : value; }
  };

  // Leaf bound to an externally owned tensor. Binding the same tensor twice
  // returns the same node, so every consumer shares one gradient buffer.
  Var param(const Tensor& t) {
    auto it = param_ids_.find(&t);
    if (it != param_ids_.end()) return Var{this, it->second};
    Node node;
    node.op = "param";
    node.external = &t;
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(&t, id);
    return Var{this, id};
  }

  // Leaf owning its value (network inputs, label tensors).
  Var input(Tensor t) {
    Node node;
    node.op = "input";
    node.value = std::move(t);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var add_node(std::string op, Tensor value, std::vector<int> inputs, BackwardFn backward) {
    Node node;
    node.op = std::move(op);
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  // Ops install their backward after creating the node so the closure can
  // capture the node's own id.
  void set_backward(int id, BackwardFn fn) {
    nodes_[static_cast<std::size_t>(id)].backward = std::move(fn);
  }

  const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].val(); }
  const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].val(); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Gradient buffer of a node, allocated zero on first touch.
  Tensor& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor(n.val().shape());
    return n.grad;
  }

  bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  const Tensor& grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.empty()) throw ValueError("node '" + n.op + "' has no gradient; run backward first");
    return n.grad;
  }

  // Gradient accumulated for an externally bound parameter tensor, or nullptr
  // if the tensor never joined this graph or received no gradient.
  const Tensor* grad_for(const Tensor& t) const {
    auto it = param_ids_.find(&t);
    if (it == param_ids_.end()) return nullptr;
    const Node& n = nodes_[static_cast<std::size_t>(it->second)];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  // Reverse pass from a scalar root. Each node is visited exactly once, in
  // reverse insertion order; input gradients sum over all consumers.
  void backward(Var root) {
    if (root.graph != this) throw ValueError("backward: var belongs to another graph");
    const Tensor& rv = val(root);
    if (rv.numel() != 1)
      throw ShapeError("backward root must be scalar, got " + shape_str(rv.shape()));
    grad_buffer(root.id)[0] = 1.0;
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this);
    }
  }

  // Name of the first op (in execution order) holding a non-finite value or
  // gradient, or empty string if everything is finite.
  std::string first_non_finite() const {
    for (const Node& n : nodes_) {
      if (!n.val().all_finite()) return n.op;
      if (!n.grad.empty() && !n.grad.all_finite()) return n.op + " (gradient)";
    }
    return {};
  }

  // Piecewise-smoothness fingerprint. Kinked ops (relu sign masks, maxpool
  // argmax choices) fold their activation pattern in here during the forward
  // pass; two evaluations with equal hashes lie on the same smooth piece, so
  // finite differences between them are trustworthy.
  void fold_pattern(std::uint64_t v) {
    pattern_hash_ ^= v + 0x9e3779b97f4a7c15ULL + (pattern_hash_ << 6) + (pattern_hash_ >> 2);
  }
  std::uint64_t pattern_hash() const { return pattern_hash_; }

 private:
  // deque: appending nodes must not invalidate references handed out by
  // val()/grad() for nodes already in the graph
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, int> param_ids_;
  std::uint64_t pattern_hash_ = 0x243f6a8885a308d3ULL;
};

inline void accumulate(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "gradient accumulation");
  real* d = dst.data();
  const real* s = src.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

}  // namespace affect
