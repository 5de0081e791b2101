#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fictplay/tensor.hpp"

namespace fictplay {

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Gradients of a scalar with respect to the named leaves that required them.
template <typename Scalar>
class Gradients {
 public:
  using Map = std::map<std::string, Tensor<Scalar>>;

  const Tensor<Scalar>& operator[](const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw std::out_of_range("no gradient for '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return grads_.count(name) != 0; }
  Map& map() { return grads_; }
  const Map& map() const { return grads_; }

 private:
  Map grads_;
};

/// Define-by-run record of primitive operations. Nodes are appended in
/// evaluation order, so the node vector is already topologically sorted and a
/// single reverse sweep visits every node once.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  /// Receives the node's upstream gradient and pushes contributions to inputs.
  using BackwardFn = std::function<void(Tape&, const TensorT& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(TensorT value, bool requires_grad = false, std::string name = {}) {
    require_finite(value, name.empty() ? std::string("leaf") : name);
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.name = std::move(name);
    node.is_leaf = true;
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  Var<Scalar> constant(TensorT value) { return leaf(std::move(value), false); }

  /// Records an operation output. The node requires a gradient when any input does.
  Var<Scalar> record(TensorT value, const std::vector<Var<Scalar>>& inputs, BackwardFn backward,
                     const char* op) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output of ") + op);
    Node node;
    node.value = std::move(value);
    for (const auto& in : inputs) node.requires_grad = node.requires_grad || needs_grad(in);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  const TensorT& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool needs_grad(const Var<Scalar>& v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }

  /// Adds `g` into the gradient slot of `v` (no-op when `v` does not need one).
  void accumulate(const Var<Scalar>& v, const TensorT& g) {
    Node& node = nodes_[static_cast<std::size_t>(v.id())];
    if (!node.requires_grad) return;
    if (node.grad.empty())
      node.grad = g;
    else
      node.grad.values() += g.values();
  }

  template <typename Expr>
  void accumulate_expr(const Var<Scalar>& v, const Expr& expr) {
    Node& node = nodes_[static_cast<std::size_t>(v.id())];
    if (!node.requires_grad) return;
    if (node.grad.empty())
      node.grad = TensorT(node.value.shape(), expr);
    else
      node.grad.values() += expr;
  }

  /// Gradient accumulated on `v` by the last backward(); zeros when none arrived.
  TensorT grad(const Var<Scalar>& v) const {
    const Node& node = nodes_.at(static_cast<std::size_t>(v.id()));
    return node.grad.empty() ? TensorT::zeros(node.value.shape()) : node.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Returns gradients for every named leaf
  /// that requires one (zeros for leaves the loss does not depend on).
  Gradients<Scalar> backward(const Var<Scalar>& loss) {
    if (loss.value().size() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));
    for (auto& n : nodes_) n.grad = TensorT();
    const auto root = static_cast<std::size_t>(loss.id());
    if (nodes_[root].requires_grad) nodes_[root].grad = TensorT::constant(loss.shape(), Scalar(1));
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.is_leaf || !node.requires_grad || node.grad.empty()) continue;
      // The backward closure may push into earlier nodes only, so `node.grad` is stable.
      node.backward(*this, node.grad);
    }
    Gradients<Scalar> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& node = nodes_[i];
      if (!node.is_leaf || !node.requires_grad) continue;
      std::string key = node.name.empty() ? "#" + std::to_string(i) : node.name;
      TensorT g = node.grad.empty() ? TensorT::zeros(node.value.shape()) : node.grad;
      // Leaves bound more than once under one name (e.g. weights shared by two
      // forward passes) report the sum of their contributions.
      auto [it, inserted] = out.map().try_emplace(key, g);
      if (!inserted) {
        require_same_shape(it->second.shape(), g.shape(), "backward");
        it->second.values() += g.values();
      }
    }
    return out;
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    BackwardFn backward;
    std::string name;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::vector<Node> nodes_;
};

template <typename Scalar>
Gradients<Scalar> backward(const Var<Scalar>& loss) {
  return loss.tape().backward(loss);
}

}  // namespace fictplay
