#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "frequnet/error.hpp"
#include "frequnet/tensor.hpp"

namespace frequnet {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Backward rule: receives the gradient w.r.t. the node output and one slot per
/// input. A slot is null when that input does not require a gradient; otherwise
/// it points at a zero-initialised accumulator the rule adds into.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

/// Gradients of the requires_grad leaves after a backward pass.
class Gradients {
 public:
  const Tensor& operator[](const Var& v) const {
    auto it = grads_.find(v.id());
    if (it == grads_.end()) throw StateError("no gradient recorded for node " + std::to_string(v.id()));
    return it->second;
  }
  bool contains(const Var& v) const { return grads_.count(v.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Dynamically built record of one forward pass. Nodes are appended in
/// evaluation order, so inputs always precede the nodes that consume them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, true});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op result. The node requires a gradient iff any input does.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (std::size_t i : inputs) {
      if (i >= nodes_.size()) throw StateError("op input refers to a node not on this tape");
      needs = needs || nodes_[i].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(backward) : BackwardFn{},
                          needs, false});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Reverse sweep from `output` seeded with `seed`. Each node is visited at
  /// most once, in reverse recording order.
  Gradients backward(const Var& output, const Tensor& seed) {
    if (nodes_.empty()) throw StateError("backward called on an empty tape (no forward recorded)");
    if (&output.tape() != this || output.id() >= nodes_.size()) {
      throw StateError("backward output does not belong to this tape");
    }
    const Tensor& out = nodes_[output.id()].value;
    out.require_same_shape(seed, "backward seed");

    std::vector<std::optional<Tensor>> grads(output.id() + 1);
    grads[output.id()] = seed;
    std::vector<Tensor*> slots;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!grads[i] || !node.requires_grad || node.is_leaf) continue;
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        std::size_t in = node.inputs[k];
        if (!nodes_[in].requires_grad) continue;
        if (!grads[in]) grads[in] = Tensor::zeros_like(nodes_[in].value);
        slots[k] = &*grads[in];
      }
      node.backward(*grads[i], slots);
      if (i != output.id()) grads[i].reset();
    }

    Gradients result;
    for (std::size_t i = 0; i <= output.id(); ++i) {
      if (!nodes_[i].is_leaf || !nodes_[i].requires_grad) continue;
      result.grads_.emplace(i, grads[i] ? std::move(*grads[i]) : Tensor::zeros_like(nodes_[i].value));
    }
    for (std::size_t i = output.id() + 1; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf && nodes_[i].requires_grad) {
        result.grads_.emplace(i, Tensor::zeros_like(nodes_[i].value));
      }
    }
    return result;
  }

  /// Convenience for scalar outputs.
  Gradients backward(const Var& output) { return backward(output, Tensor::ones(output.shape())); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace frequnet
