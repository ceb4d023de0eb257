#pragma once

// Differentiable operations on tape variables. Each op computes its value
// eagerly and records how to push the output gradient back to its inputs.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/SpecialFunctions>

#include "fate/nn/tape.hpp"

namespace fate::nn {

namespace detail {

inline std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <class S>
void require_same_shape(const Matrix<S>& a, const Matrix<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("ShapeMismatch", std::string(op) + ": " + shape_str(a.rows(), a.cols()) +
                                          " vs " + shape_str(b.rows(), b.cols()));
  }
}

}  // namespace detail

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = a.tape();
  const Matrix<S>& av = a.value();
  const Matrix<S>& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("ShapeMismatch", "matmul: " + detail::shape_str(av.rows(), av.cols()) +
                                          " * " + detail::shape_str(bv.rows(), bv.cols()));
  }
  Matrix<S> out = av * bv;
  const auto ia = a.id(), ib = b.id();
  return t.push(std::move(out), a.needs_grad() || b.needs_grad(),
                [ia, ib](Tape<S>& t, std::uint32_t self) {
                  const Matrix<S>& g = t.grad_view(self);
                  if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                  if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                });
}

/// x * W + b, with W of shape in x out and b a 1 x out row broadcast over rows.
template <class S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  Tape<S>& t = x.tape();
  const Matrix<S>& xv = x.value();
  const Matrix<S>& wv = w.value();
  const Matrix<S>& bv = b.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("ShapeMismatch", "linear: x " + detail::shape_str(xv.rows(), xv.cols()) +
                                          ", W " + detail::shape_str(wv.rows(), wv.cols()) +
                                          ", b " + detail::shape_str(bv.rows(), bv.cols()));
  }
  Matrix<S> out(xv.rows(), wv.cols());
  out.noalias() = xv * wv;
  out.rowwise() += bv.row(0);
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return t.push(std::move(out), x.needs_grad() || w.needs_grad() || b.needs_grad(),
                [ix, iw, ib](Tape<S>& t, std::uint32_t self) {
                  const Matrix<S>& g = t.grad_view(self);
                  if (t.needs_grad(ix)) t.accumulate(ix, g * t.value(iw).transpose());
                  if (t.needs_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * g);
                  if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
                });
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Matrix<S> out = a.value() + b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), a.needs_grad() || b.needs_grad(),
                       [ia, ib](Tape<S>& t, std::uint32_t self) {
                         const Matrix<S>& g = t.grad_view(self);
                         if (t.needs_grad(ia)) t.accumulate(ia, g);
                         if (t.needs_grad(ib)) t.accumulate(ib, g);
                       });
}

/// a + tile(b): `a` has k * b.rows() rows; b is repeated down the rows.
template <class S>
Var<S> add_tiled(Var<S> a, Var<S> b) {
  const Matrix<S>& av = a.value();
  const Matrix<S>& bv = b.value();
  if (bv.rows() == 0 || av.cols() != bv.cols() || av.rows() % bv.rows() != 0) {
    throw ShapeError("ShapeMismatch", "add_tiled: " + detail::shape_str(av.rows(), av.cols()) +
                                          " + tile(" + detail::shape_str(bv.rows(), bv.cols()) +
                                          ")");
  }
  const Index block = bv.rows();
  const Index reps = av.rows() / block;
  Matrix<S> out = av;
  for (Index r = 0; r < reps; ++r) out.middleRows(r * block, block) += bv;
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), a.needs_grad() || b.needs_grad(),
                       [ia, ib, block, reps](Tape<S>& t, std::uint32_t self) {
                         const Matrix<S>& g = t.grad_view(self);
                         if (t.needs_grad(ia)) t.accumulate(ia, g);
                         if (t.needs_grad(ib)) {
                           Matrix<S>& gb = t.grad(ib);
                           for (Index r = 0; r < reps; ++r) gb += g.middleRows(r * block, block);
                         }
                       });
}

template <class S>
Var<S> scale(Var<S> a, S factor) {
  Matrix<S> out = a.value() * factor;
  const auto ia = a.id();
  return a.tape().push(std::move(out), a.needs_grad(),
                       [ia, factor](Tape<S>& t, std::uint32_t self) {
                         t.accumulate(ia, t.grad_view(self) * factor);
                       });
}

template <class S>
Var<S> sum(Var<S> a) {
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().sum();
  const auto ia = a.id();
  return a.tape().push(std::move(out), a.needs_grad(), [ia](Tape<S>& t, std::uint32_t self) {
    const Matrix<S>& av = t.value(ia);
    t.accumulate(ia, Matrix<S>::Constant(av.rows(), av.cols(), t.grad_view(self)(0, 0)));
  });
}

/// Exact GELU: x * Phi(x).
template <class S>
Var<S> gelu(Var<S> x) {
  const Matrix<S>& xv = x.value();
  Matrix<S> cdf(xv.rows(), xv.cols());
  cdf.array() = S(0.5) * (S(1) + (xv.array() * S(std::numbers::sqrt2_v<S> / 2)).erf());
  Matrix<S> out = xv.cwiseProduct(cdf);
  const auto ix = x.id();
  if (!x.needs_grad() || !x.tape().recording()) return x.tape().push(std::move(out), false, nullptr);
  return x.tape().push(std::move(out), true,
                       [ix, cdf = std::move(cdf)](Tape<S>& t, std::uint32_t self) {
                         const auto g = t.grad_view(self).array();
                         const auto xa = t.value(ix).array();
                         const S norm = S(1) / std::sqrt(S(2) * std::numbers::pi_v<S>);
                         const auto pdf = (S(-0.5) * xa.square()).exp() * norm;
                         t.accumulate(ix, (g * (cdf.array() + xa * pdf)).matrix());
                       });
}

/// Row-wise layer normalization with learned scale `gamma` and offset `beta`
/// (both 1 x cols). Variance is the biased estimator.
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps) {
  const Matrix<S>& xv = x.value();
  const Index rows = xv.rows(), cols = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols || beta.rows() != 1 || beta.cols() != cols) {
    throw ShapeError("ShapeMismatch", "layer_norm: scale/offset width != " + std::to_string(cols));
  }
  Matrix<S> xhat(rows, cols);
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd(rows);
  for (Index r = 0; r < rows; ++r) {
    const S mean = xv.row(r).mean();
    const S var = (xv.row(r).array() - mean).square().mean();
    rstd(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * rstd(r);
  }
  const Matrix<S>& gv = gamma.value();
  const Matrix<S>& bv = beta.value();
  Matrix<S> out(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    out.row(r) = xhat.row(r).cwiseProduct(gv.row(0)) + bv.row(0);
  }
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool ng = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  return x.tape().push(
      std::move(out), ng,
      [ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<S>& t, std::uint32_t self) {
        const Matrix<S>& g = t.grad_view(self);
        if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.needs_grad(ix)) {
          const Matrix<S>& gv = t.value(ig);
          Matrix<S>& gx = t.grad(ix);
          const S inv_n = S(1) / static_cast<S>(g.cols());
          for (Index r = 0; r < g.rows(); ++r) {
            const auto dxhat = g.row(r).cwiseProduct(gv.row(0));
            const S m1 = dxhat.sum() * inv_n;
            const S m2 = dxhat.cwiseProduct(xhat.row(r)).sum() * inv_n;
            gx.row(r).array() +=
                rstd(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
          }
        }
      });
}

/// Rows of `table` selected by `ids` (repeats allowed).
template <class S>
Var<S> gather_rows(Var<S> table, std::vector<Index> ids) {
  const Matrix<S>& tv = table.value();
  Matrix<S> out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw ShapeError("ShapeMismatch", "gather_rows: row " + std::to_string(ids[i]) +
                                            " outside table of " + std::to_string(tv.rows()));
    }
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  const auto it = table.id();
  return table.tape().push(std::move(out), table.needs_grad(),
                           [it, ids = std::move(ids)](Tape<S>& t, std::uint32_t self) {
                             const Matrix<S>& g = t.grad_view(self);
                             Matrix<S>& gt = t.grad(it);
                             for (std::size_t i = 0; i < ids.size(); ++i) {
                               gt.row(ids[i]) += g.row(static_cast<Index>(i));
                             }
                           });
}

/// [a | b] along columns.
template <class S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  const Matrix<S>& av = a.value();
  const Matrix<S>& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("ShapeMismatch", "concat_cols: row counts " + std::to_string(av.rows()) +
                                          " and " + std::to_string(bv.rows()));
  }
  Matrix<S> out(av.rows(), av.cols() + bv.cols());
  out.leftCols(av.cols()) = av;
  out.rightCols(bv.cols()) = bv;
  const auto ia = a.id(), ib = b.id();
  const Index ca = av.cols(), cb = bv.cols();
  return a.tape().push(std::move(out), a.needs_grad() || b.needs_grad(),
                       [ia, ib, ca, cb](Tape<S>& t, std::uint32_t self) {
                         const Matrix<S>& g = t.grad_view(self);
                         if (t.needs_grad(ia)) t.accumulate(ia, g.leftCols(ca));
                         if (t.needs_grad(ib)) t.accumulate(ib, g.rightCols(cb));
                       });
}

/// Row-major reinterpretation; the element order is unchanged.
template <class S>
Var<S> reshape(Var<S> a, Index rows, Index cols) {
  const Matrix<S>& av = a.value();
  if (rows * cols != av.size()) {
    throw ShapeError("ShapeMismatch", "reshape " + detail::shape_str(av.rows(), av.cols()) +
                                          " to " + detail::shape_str(rows, cols));
  }
  Matrix<S> out = Eigen::Map<const Matrix<S>>(av.data(), rows, cols);
  const auto ia = a.id();
  return a.tape().push(std::move(out), a.needs_grad(), [ia](Tape<S>& t, std::uint32_t self) {
    const Matrix<S>& g = t.grad_view(self);
    const Matrix<S>& av = t.value(ia);
    t.accumulate(ia, Eigen::Map<const Matrix<S>>(g.data(), av.rows(), av.cols()));
  });
}

/// Sum of |pred - target| over entries where `mask` is nonzero. The
/// subgradient at pred == target is 0.
template <class S>
Var<S> masked_l1_sum(Var<S> pred, Matrix<S> target, Matrix<unsigned char> mask) {
  const Matrix<S>& pv = pred.value();
  detail::require_same_shape(pv, target, "masked_l1_sum");
  if (mask.rows() != pv.rows() || mask.cols() != pv.cols()) {
    throw ShapeError("ShapeMismatch", "masked_l1_sum: mask shape");
  }
  S acc = 0;
  for (Index i = 0; i < pv.size(); ++i) {
    if (mask.data()[i]) acc += std::abs(pv.data()[i] - target.data()[i]);
  }
  Matrix<S> out(1, 1);
  out(0, 0) = acc;
  const auto ip = pred.id();
  return pred.tape().push(
      std::move(out), pred.needs_grad(),
      [ip, target = std::move(target), mask = std::move(mask)](Tape<S>& t, std::uint32_t self) {
        const S g = t.grad_view(self)(0, 0);
        const Matrix<S>& pv = t.value(ip);
        Matrix<S>& gp = t.grad(ip);
        for (Index i = 0; i < pv.size(); ++i) {
          if (!mask.data()[i]) continue;
          const S d = pv.data()[i] - target.data()[i];
          gp.data()[i] += d > 0 ? g : (d < 0 ? -g : S(0));
        }
      });
}

/// Sum over rows of binary cross-entropy between sigmoid(logits) and
/// 0/1 `labels`, evaluated in the overflow-free form
/// max(x,0) - x*y + log(1 + exp(-|x|)).
template <class S>
Var<S> bce_logits_sum(Var<S> logits, std::vector<unsigned char> labels) {
  const Matrix<S>& lv = logits.value();
  if (lv.cols() != 1 || lv.rows() != static_cast<Index>(labels.size())) {
    throw ShapeError("ShapeMismatch", "bce_logits_sum: logits " +
                                          detail::shape_str(lv.rows(), lv.cols()) + ", labels " +
                                          std::to_string(labels.size()));
  }
  S acc = 0;
  for (Index i = 0; i < lv.rows(); ++i) {
    const S x = lv(i, 0);
    const S y = labels[static_cast<std::size_t>(i)] ? S(1) : S(0);
    acc += std::max(x, S(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Matrix<S> out(1, 1);
  out(0, 0) = acc;
  const auto il = logits.id();
  return logits.tape().push(std::move(out), logits.needs_grad(),
                            [il, labels = std::move(labels)](Tape<S>& t, std::uint32_t self) {
                              const S g = t.grad_view(self)(0, 0);
                              const Matrix<S>& lv = t.value(il);
                              Matrix<S>& gl = t.grad(il);
                              for (Index i = 0; i < lv.rows(); ++i) {
                                const S x = lv(i, 0);
                                const S p = S(1) / (S(1) + std::exp(-x));
                                const S y = labels[static_cast<std::size_t>(i)] ? S(1) : S(0);
                                gl(i, 0) += g * (p - y);
                              }
                            });
}

}  // namespace fate::nn
