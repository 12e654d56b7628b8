#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pfseg/tensor.hpp"

namespace pfseg {

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape.
template <std::floating_point T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Parameters are registered by storage address: using the
/// same tensor twice yields the same node, and gradients from every use are
/// summed into it.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr, false, {}, {}); }

  Var<T> variable(Tensor<T> value) { return push(std::move(value), nullptr, true, {}, {}); }

  Var<T> parameter(const Tensor<T>& storage, std::string name) {
    if (auto it = by_storage_.find(&storage); it != by_storage_.end()) return {this, it->second};
    Var<T> v = push(Tensor<T>{}, &storage, true, {}, {});
    by_storage_.emplace(&storage, v.id);
    params_.emplace(std::move(name), v.id);
    return v;
  }

  /// Records an op output. The backward rule reads grad(node) and accumulates
  /// into its inputs through grad_buffer().
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_.at(i).requires_grad;
    return push(std::move(value), nullptr, needs, std::move(inputs), needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const {
    check(v);
    return value(v.id);
  }
  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first touch.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape(), T{0});
    return n.grad;
  }

  /// Gradient of the last backward() with respect to v, or nullptr when v
  /// was not reached.
  const Tensor<T>* grad(Var<T> v) const {
    check(v);
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  void backward(Var<T> loss) {
    check(loss);
    if (value(loss.id).numel() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_string(value(loss.id).shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>{};
    grad_buffer(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Gradients of all registered parameters, keyed by name. Parameters not
  /// reached from the loss report zeros.
  std::map<std::string, Tensor<T>> parameter_gradients() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : params_) {
      const Node& n = nodes_[id];
      out.emplace(name, n.grad.empty() ? Tensor<T>(value(id).shape(), T{0}) : n.grad);
    }
    return out;
  }

  const std::map<std::string, std::size_t>& parameters() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> value, const Tensor<T>* external, bool requires_grad, std::vector<std::size_t> inputs,
              BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), external, {}, std::move(inputs), std::move(fn), requires_grad});
    return {this, nodes_.size() - 1};
  }

  void check(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw std::invalid_argument("variable is not recorded on this tape");
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> by_storage_;
  std::map<std::string, std::size_t> params_;
};

}  // namespace pfseg
