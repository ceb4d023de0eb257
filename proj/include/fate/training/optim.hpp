#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fate/errors.hpp"
#include "fate/nn/tape.hpp"

namespace fate {

/// Cosine annealing with warm restarts. Each cycle spans T_max + 1 steps so
/// that step T_max lands exactly on `min_lr` before the next restart.
inline double cosine_lr(long step, double start, double min_lr, long t_max) {
  if (t_max <= 0) return start;
  const long tau = step % (t_max + 1);
  return min_lr + 0.5 * (start - min_lr) *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(tau) /
                                      static_cast<double>(t_max)));
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias-corrected moments. Moment
/// buffers are bound to parameter slots by position, so the same parameter
/// list must be passed on every step.
template <class S>
class AdamW {
 public:
  explicit AdamW(std::vector<nn::Parameter<S>*> params, AdamWOptions opt = {})
      : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.push_back(nn::Matrix<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(nn::Matrix<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  long steps() const { return step_; }
  const std::vector<nn::Parameter<S>*>& params() const { return params_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step(double lr) {
    ++step_;
    const S b1 = static_cast<S>(opt_.beta1), b2 = static_cast<S>(opt_.beta2);
    const S bc1 = static_cast<S>(1.0 - std::pow(opt_.beta1, static_cast<double>(step_)));
    const S bc2 = static_cast<S>(1.0 - std::pow(opt_.beta2, static_cast<double>(step_)));
    const S lr_s = static_cast<S>(lr);
    const S decay = static_cast<S>(1.0 - lr * opt_.weight_decay);
    const S eps = static_cast<S>(opt_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      nn::Parameter<S>& p = *params_[i];
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
        throw ShapeError("ShapeMismatch", "AdamW: gradient shape differs from parameter");
      }
      auto g = p.grad.array();
      m_[i].array() = b1 * m_[i].array() + (S(1) - b1) * g;
      v_[i].array() = b2 * v_[i].array() + (S(1) - b2) * g.square();
      p.value.array() *= decay;
      p.value.array() -= lr_s * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
    }
  }

  /// Rescales gradients so their global L2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    double total = 0.0;
    for (auto* p : params_) total += static_cast<double>(p->grad.squaredNorm());
    const double norm = std::sqrt(total);
    if (max_norm > 0.0 && norm > max_norm) {
      const S f = static_cast<S>(max_norm / norm);
      for (auto* p : params_) p->grad *= f;
    }
    return norm;
  }

 private:
  std::vector<nn::Parameter<S>*> params_;
  AdamWOptions opt_;
  std::vector<nn::Matrix<S>> m_;
  std::vector<nn::Matrix<S>> v_;
  long step_ = 0;
};

}  // namespace fate
