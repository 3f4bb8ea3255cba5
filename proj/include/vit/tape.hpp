#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vit/error.hpp"
#include "vit/tensor.hpp"

namespace vit {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Trainable tensor owned by a model. `decay` marks whether decoupled weight
/// decay applies to it.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = false;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    else grad.fill(T(0));
  }
};

/// Linear record of operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's inputs precede it;
/// backward() visits nodes in exact reverse order. A tape is single-threaded
/// and single-use: build, call backward() once, read gradients, discard.
template <typename T>
class Tape {
 public:
  /// Backward rule for one node: read the node's gradient via
  /// tape.grad(self) and accumulate into its inputs.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// When set, every recorded value is checked for NaN/Inf.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var<T> leaf(Tensor<T> value) { return push(std::move(value), grad_enabled_, nullptr); }

  /// Binds a model parameter as a leaf. Repeated calls with the same
  /// parameter return the same node.
  Var<T> param(const Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<T>(this, it->second);
    Var<T> v = leaf(p.value);
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  /// Appends an op output. The node requires a gradient iff the tape records
  /// gradients and any input does.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (const auto& in : inputs) {
        if (in.valid() && node(in).requires_grad) {
          needs = true;
          break;
        }
      }
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(const Var<T>& v) const { return node(v).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(const Var<T>& v) const { return node(v).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  Tensor<T>& grad(const Var<T>& v) { return grad(v.id()); }

  /// Gradient if one was produced, else nullptr.
  const Tensor<T>* grad_if(const Var<T>& v) const {
    const Node& n = node(v);
    return n.grad.empty() ? nullptr : &n.grad;
  }

  const Tensor<T>* grad_of(const Parameter<T>& p) const {
    auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  /// Reverse sweep from a single-element output seeded with 1.
  void backward(const Var<T>& loss) {
    if (loss.value().size() != 1) {
      throw ContractError("backward requires a scalar output, got shape " + shape_str(loss.shape()));
    }
    if (backward_done_) throw ContractError("backward called twice on the same tape");
    backward_done_ = true;
    if (!node(loss).requires_grad) return;
    grad(loss.id())[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  const Node& node(const Var<T>& v) const {
    if (&v.tape() != this) throw ContractError("variable belongs to a different tape");
    return nodes_.at(v.id());
  }

  Var<T> push(Tensor<T> value, bool requires_grad, Backward backward) {
    if (check_finite_ && !value.all_finite()) {
      throw NumericError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
    }
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  // deque keeps references to existing nodes stable while new ones append.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool check_finite_ = false;
  bool backward_done_ = false;
};

}  // namespace vit
