#pragma once

// Parameterized building blocks: linear maps, layer norm, multi-head
// attention and the Set Transformer blocks (MAB, SAB, ISAB).
//
// Blocks own their Parameters. `forward` binds them to the tape of its input,
// so a block may be applied several times within one tape. `visit` walks the
// parameters with hierarchical names ("isab.0.induce.mha.w_q").

#include <cmath>
#include <random>
#include <span>
#include <string>

#include "fate/nn/attention.hpp"
#include "fate/nn/ops.hpp"
#include "fate/nn/tape.hpp"

namespace fate::nn {

using Rng = std::mt19937_64;

template <class S>
Matrix<S> uniform_matrix(Index rows, Index cols, S bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                              static_cast<double>(bound));
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

template <class S>
Matrix<S> normal_matrix(Index rows, Index cols, S stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

/// y = x W + b. Weight and bias start uniform in +-1/sqrt(fan_in).
template <class S>
struct Linear {
  Parameter<S> weight;  // in x out
  Parameter<S> bias;    // 1 x out

  Linear() = default;
  Linear(Index in, Index out, Rng& rng) {
    const S bound = S(1) / std::sqrt(static_cast<S>(in));
    weight = Parameter<S>(uniform_matrix<S>(in, out, bound, rng));
    bias = Parameter<S>(uniform_matrix<S>(1, out, bound, rng));
  }

  Index in_features() const { return weight.value.rows(); }
  Index out_features() const { return weight.value.cols(); }

  Var<S> forward(Var<S> x) {
    Tape<S>& t = x.tape();
    return linear(x, t.param(weight), t.param(bias));
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

template <class S>
struct LayerNorm {
  static constexpr double kDefaultEps = 1e-5;

  Parameter<S> scale;   // 1 x d, starts at 1
  Parameter<S> offset;  // 1 x d, starts at 0
  S eps = static_cast<S>(kDefaultEps);

  LayerNorm() = default;
  explicit LayerNorm(Index d)
      : scale(Matrix<S>::Ones(1, d)), offset(Matrix<S>::Zero(1, d)) {}

  Var<S> forward(Var<S> x) {
    Tape<S>& t = x.tape();
    return layer_norm(x, t.param(scale), t.param(offset), eps);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "scale", scale);
    f(prefix + "offset", offset);
  }
};

/// Projections W_q, W_k, W_v, W_o (d x d, with biases) around attention_core.
template <class S>
struct MultiheadAttention {
  Linear<S> w_q, w_k, w_v, w_o;
  int heads = 1;

  MultiheadAttention() = default;
  MultiheadAttention(Index d, int num_heads, Rng& rng)
      : w_q(d, d, rng), w_k(d, d, rng), w_v(d, d, rng), w_o(d, d, rng), heads(num_heads) {
    if (num_heads < 1 || d % num_heads != 0) {
      throw ShapeError("ShapeMismatch", "head count " + std::to_string(num_heads) +
                                            " does not divide width " + std::to_string(d));
    }
  }

  Index width() const { return w_q.in_features(); }

  Var<S> forward(Var<S> queries, Var<S> keys, Var<S> values, const AttentionLayout& layout,
                 std::span<const unsigned char> key_mask = {}) {
    Var<S> q = w_q.forward(queries);
    Var<S> k = w_k.forward(keys);
    Var<S> v = w_v.forward(values);
    return w_o.forward(attention_core(q, k, v, heads, layout, key_mask));
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    w_q.visit(f, prefix + "w_q.");
    w_k.visit(f, prefix + "w_k.");
    w_v.visit(f, prefix + "w_v.");
    w_o.visit(f, prefix + "w_o.");
  }
};

/// Multihead attention block, post-norm:
///   H   = LayerNorm(X + MHA(X, Y, Y))
///   out = LayerNorm(H + rFF(H)),  rFF = linear, GELU, linear (row-wise).
template <class S>
struct Mab {
  MultiheadAttention<S> mha;
  LayerNorm<S> norm_attn;
  LayerNorm<S> norm_ff;
  Linear<S> ff_in, ff_out;

  Mab() = default;
  Mab(Index d, int heads, Rng& rng)
      : mha(d, heads, rng), norm_attn(d), norm_ff(d), ff_in(d, d, rng), ff_out(d, d, rng) {}

  Var<S> forward(Var<S> x, Var<S> y, const AttentionLayout& layout,
                 std::span<const unsigned char> key_mask = {}) {
    Var<S> attended = mha.forward(x, y, y, layout, key_mask);
    Var<S> h = layout.shared_queries ? add_tiled(attended, x) : add(x, attended);
    h = norm_attn.forward(h);
    Var<S> ff = ff_out.forward(gelu(ff_in.forward(h)));
    return norm_ff.forward(add(h, ff));
  }

  /// Self-attention block (SAB): MAB(X, X) with groups of `per_group` rows.
  Var<S> self_attend(Var<S> x, Index per_group, std::span<const unsigned char> key_mask = {}) {
    const Index groups = per_group > 0 ? x.rows() / per_group : 0;
    if (per_group <= 0 || groups * per_group != x.rows()) {
      throw ShapeError("ShapeMismatch", "self_attend: " + std::to_string(x.rows()) +
                                            " rows not divisible into groups of " +
                                            std::to_string(per_group));
    }
    return forward(x, x, AttentionLayout{groups, per_group, per_group, false}, key_mask);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    mha.visit(f, prefix + "mha.");
    norm_attn.visit(f, prefix + "norm_attn.");
    norm_ff.visit(f, prefix + "norm_ff.");
    ff_in.visit(f, prefix + "ff_in.");
    ff_out.visit(f, prefix + "ff_out.");
  }
};

/// Induced set attention block with m trainable induced points:
///   H   = MAB(I, X)   (m x d per group; masked rows of X are not keys)
///   out = MAB(X, H)   (n x d per group)
template <class S>
struct Isab {
  Parameter<S> inducing;  // m x d
  Mab<S> induce;
  Mab<S> expand;

  Isab() = default;
  Isab(Index d, Index m, int heads, Rng& rng)
      : inducing(normal_matrix<S>(m, d, S(1) / std::sqrt(static_cast<S>(d)), rng)),
        induce(d, heads, rng),
        expand(d, heads, rng) {
    if (m < 1) throw ShapeError("ShapeMismatch", "ISAB needs at least one induced point");
  }

  Index induced_points() const { return inducing.value.rows(); }

  /// `x` stacks `groups` sets of equal size; `event_mask` (optional) flags
  /// valid rows.
  Var<S> forward(Var<S> x, Index groups = 1, std::span<const unsigned char> event_mask = {}) {
    const Index rows = x.rows();
    if (groups < 1 || rows < groups || rows % groups != 0) {
      throw ShapeError("ShapeMismatch", "isab: " + std::to_string(rows) +
                                            " rows in " + std::to_string(groups) + " groups");
    }
    if (x.cols() != inducing.value.cols()) {
      throw ShapeError("ShapeMismatch", "isab: width " + std::to_string(x.cols()) +
                                            " != " + std::to_string(inducing.value.cols()));
    }
    const Index n = rows / groups;
    const Index m = induced_points();
    Var<S> points = x.tape().param(inducing);
    Var<S> h = induce.forward(points, x, AttentionLayout{groups, m, n, true}, event_mask);
    return expand.forward(x, h, AttentionLayout{groups, n, m, false});
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "inducing", inducing);
    induce.visit(f, prefix + "induce.");
    expand.visit(f, prefix + "expand.");
  }
};

/// Free-function spellings of the block operations.
template <class S>
Var<S> multihead_attention(Var<S> q, Var<S> k, Var<S> v, MultiheadAttention<S>& params,
                           std::span<const unsigned char> key_mask = {}) {
  return params.forward(q, k, v, single_group(q.rows(), k.rows()), key_mask);
}

template <class S>
Var<S> mab(Var<S> x, Var<S> y, Mab<S>& params) {
  return params.forward(x, y, single_group(x.rows(), y.rows()));
}

template <class S>
Var<S> isab(Var<S> x, Isab<S>& params, std::span<const unsigned char> event_mask = {}) {
  return params.forward(x, 1, event_mask);
}

}  // namespace fate::nn
