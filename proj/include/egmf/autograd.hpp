// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "egmf/errors.hpp"
#include "egmf/tensor.hpp"

namespace egmf {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run reverse-mode tape. One tape per forward pass; backward()
// consumes it.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var constant(Tensor value) {
    require_finite(value, "constant");
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  // Leaf whose gradient is kept on the tape (read it back with grad()).
  Var input(Tensor value) {
    require_finite(value, "input");
    Node n;
    n.value = std::move(value);
    n.needs_grad = grad_enabled_;
    return push(std::move(n));
  }

  // Leaf bound to a parameter. The parameter is referenced, not copied, and
  // reused if it appears more than once in the same pass.
  Var parameter(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    require_finite(p.tensor, p.name);
    Node n;
    n.ref = &p.tensor;
    n.param = &p;
    n.needs_grad = grad_enabled_ && !p.frozen;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].tensor(); }
  const Tensor& value(Var v) const { return value(v.id()); }

  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

  // Gradient of the last backward() w.r.t. v, or nullptr when v had none.
  const std::vector<double>* grad(Var v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  // Records an operation output. The backward closure is dropped when no
  // input needs a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    if (consumed_) throw GraphError(std::string(op) + ": tape already consumed by backward()");
    if (!value.all_finite()) {
      throw NonFiniteError(std::string(op) + ": produced a non-finite value");
    }
    Node n;
    n.value = std::move(value);
    bool any = false;
    for (const Var& in : inputs) {
      if (&in.tape() != this) throw GraphError(std::string(op) + ": inputs come from different tapes");
      any = any || nodes_[in.id()].needs_grad;
    }
    if (grad_enabled_ && any) {
      n.needs_grad = true;
      n.backward = std::move(fn);
    }
    return push(std::move(n));
  }

  // Adds g into the gradient of v; a no-op for values that need none.
  void accumulate(Var v, std::span<const double> g) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (n.grad.empty()) n.grad.assign(n.tensor().size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  // Writable gradient buffer for scatter-style backward passes, or an empty
  // span when v needs no gradient.
  std::span<double> grad_buffer(Var v) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.tensor().size(), 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    if (consumed_) throw GraphError("backward: graph already consumed; run a new forward pass");
    if (&loss.tape() != this) throw GraphError("backward: loss belongs to a different tape");
    if (loss.size() != 1) {
      throw GraphError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
    }
    consumed_ = true;
    Node& root = nodes_[loss.id()];
    if (!root.needs_grad) return;
    root.grad.assign(1, 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, std::span<const double>(n.grad));
    }
    for (Node& n : nodes_) {
      if (!n.param || n.grad.empty() || n.param->frozen) continue;
      auto& pg = n.param->tensor.grad;
      if (!pg) pg.emplace(n.grad.size(), 0.0);
      for (std::size_t k = 0; k < n.grad.size(); ++k) (*pg)[k] += n.grad[k];
    }
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Parameter* param = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    BackwardFn backward;

    const Tensor& tensor() const { return ref ? *ref : value; }
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  bool grad_enabled_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace egmf
