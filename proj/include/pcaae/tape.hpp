#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pcaae/tensor.hpp"

namespace pcaae {

/// A named trainable array with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() {
    if (grad.shape() != value.shape())
      grad = Tensor<T>(value.shape());
    else
      grad.fill(T(0));
  }
};

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  T item() const { return value().item(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// backward() walks the record once in exact reverse order. A node only gets a
/// backward closure when at least one of its inputs requires a gradient, so
/// constants and frozen sub-networks cost nothing on the way back.
///
/// A Tape and everything recorded on it belong to one thread.
template <typename T>
class Tape {
 public:
  /// Receives the gradient of the node's output; pushes into inputs via accumulate().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr, false, {}); }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    return push(std::move(value), nullptr, requires_grad, {});
  }

  /// References the parameter's storage; the parameter must outlive the tape.
  /// After backward() the node gradient is added into `p.grad` when trainable.
  Var<T> param(Parameter<T>& p, bool trainable = true) {
    Node n;
    n.ref = &p.value;
    n.requires_grad = trainable;
    nodes_.push_back(std::move(n));
    if (trainable) params_.emplace_back(nodes_.size() - 1, &p);
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Appends an operation result. `fn` is dropped when no input is tracked.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool tracked = false;
    for (const auto& v : inputs) tracked = tracked || requires_grad(v.id());
    return push(std::move(value), nullptr, tracked, tracked ? std::move(fn) : BackwardFn{});
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool tracked = false;
    for (const auto& v : inputs) tracked = tracked || requires_grad(v.id());
    return push(std::move(value), nullptr, tracked, tracked ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.ref ? *n.ref : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Zero-initialized gradient buffer of a tracked node. Backward closures
  /// write into it directly; untracked nodes must be skipped by the caller.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    if (!requires_grad(id)) return;
    Tensor<T>& dst = grad_buffer(id);
    if (dst.shape() != g.shape())
      throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match node " + shape_str(dst.shape()));
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  /// Gradient of a node after backward(); nullptr when the node was never reached.
  const Tensor<T>* grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    return n.grad.empty() ? nullptr : &n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Parameter gradients are added
  /// into their Parameter::grad buffers (which are not cleared here).
  void backward(const Var<T>& loss) {
    if (loss.value().size() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!requires_grad(loss.id())) return;
    grad_buffer(loss.id())[0] = T(1);
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }
    for (auto& [id, p] : params_) {
      const Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (p->grad.shape() != p->value.shape()) p->grad = Tensor<T>(p->value.shape());
      for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, const Tensor<T>* ref, bool requires_grad, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    n.ref = ref;
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // deque: references to values stay valid as the tape grows
  std::vector<std::pair<std::size_t, Parameter<T>*>> params_;
};

}  // namespace pcaae
