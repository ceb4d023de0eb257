#pragma once

// Reverse-mode automatic differentiation over row-major dense matrices.
//
// A Tape records every value produced during one forward pass together with
// a closure that propagates the gradient of that value back into its inputs.
// Parameters live outside the tape; `Tape::param` creates a leaf that
// references the parameter's storage and, on backward, accumulates into
// `Parameter::grad`. A tape may be differentiated exactly once.

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>

#include "fate/errors.hpp"

namespace fate::nn {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

/// A learnable array with its gradient slot.
template <class S>
struct Parameter {
  Matrix<S> value;
  Matrix<S> grad;

  Parameter() = default;
  explicit Parameter(Matrix<S> v) : value(std::move(v)) { zero_grad(); }

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <class S>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<S>& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  const Matrix<S>& value() const { return tape_->value(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool needs_grad() const { return tape_->needs_grad(*this); }

 private:
  Tape<S>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  /// `record = false` builds an inference-only tape: no closures are kept
  /// and `backward` is unavailable.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<S> constant(Matrix<S> value) {
    return push(std::move(value), false, nullptr);
  }

  /// Leaf bound to `p`. The parameter must outlive the tape.
  Var<S> param(Parameter<S>& p) {
    Node n;
    n.ref = &p.value;
    n.needs_grad = record_;
    if (record_) {
      Parameter<S>* target = &p;
      n.backward = [target](Tape& t, std::uint32_t self) {
        const Matrix<S>& g = t.nodes_[self].grad;
        if (target->grad.rows() != g.rows() || target->grad.cols() != g.cols()) {
          target->grad.setZero(g.rows(), g.cols());
        }
        target->grad += g;
      };
    }
    nodes_.push_back(std::move(n));
    return Var<S>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  /// Appends an op result. `backward` runs only when the node's gradient is
  /// non-empty and the tape is recording.
  Var<S> push(Matrix<S> value, bool needs_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<S>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  const Matrix<S>& value(Var<S> v) const { return value(v.id()); }
  const Matrix<S>& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }
  bool needs_grad(Var<S> v) const { return nodes_[v.id()].needs_grad; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }

  /// Gradient accumulator of node `id`, zero-initialized on first access.
  Matrix<S>& grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      const Matrix<S>& v = value(id);
      n.grad.setZero(v.rows(), v.cols());
    }
    return n.grad;
  }
  const Matrix<S>& grad_view(std::uint32_t id) const { return nodes_[id].grad; }

  /// Adds `e` into the gradient of `id`; the first contribution is assigned
  /// instead, which skips zero-filling the accumulator.
  template <class E>
  void accumulate(std::uint32_t id, const E& e) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      n.grad.noalias() = e;
    } else {
      n.grad.noalias() += e;
    }
  }
  void accumulate(std::uint32_t id, Matrix<S>&& m) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      n.grad = std::move(m);
    } else {
      n.grad += m;
    }
  }

  /// Populates gradients of every parameter reachable from `loss`.
  void backward(Var<S> loss) {
    if (!record_) throw Error("GraphReused", "backward on an inference-only tape");
    if (consumed_) throw Error("GraphReused", "backward already ran on this tape");
    const Matrix<S>& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ShapeError("NotScalarLoss", "loss has shape " + std::to_string(lv.rows()) + "x" +
                                            std::to_string(lv.cols()));
    }
    consumed_ = true;
    if (!nodes_[loss.id()].needs_grad) return;
    grad(loss.id()).setConstant(S(1));
    for (std::uint32_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<S> value;
    const Matrix<S>* ref = nullptr;
    Matrix<S> grad;
    bool needs_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
  bool record_;
  bool consumed_ = false;
};

}  // namespace fate::nn
