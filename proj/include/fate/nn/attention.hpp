#pragma once

// Scaled dot-product attention over grouped rows.
//
// Every attention in the model is "many small independent attentions": one
// per event over its feature tokens, one per sample over its events. A
// layout describes how rows of Q and K/V are partitioned into groups; a
// query in group g only attends to keys of group g.

#include <cmath>
#include <limits>
#include <algorithm>
#include <memory>
#include <new>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "fate/nn/tape.hpp"

namespace fate::nn {

struct AttentionLayout {
  Index groups = 1;
  Index queries_per_group = 0;
  Index keys_per_group = 0;
  /// Q holds `queries_per_group` rows reused by every group (learned
  /// queries, induced points, decoder feature queries).
  bool shared_queries = false;

  Index output_rows() const { return groups * queries_per_group; }
};

/// Layout for plain (ungrouped) attention between `nq` queries and `nk` keys.
inline AttentionLayout single_group(Index nq, Index nk) { return {1, nq, nk, false}; }

namespace detail {

// Head-width specializations let the per-head dot products unroll; width 0
// is the generic runtime-width path.
template <class F>
void dispatch_head_width(Index dh, F&& f) {
  switch (dh) {
    case 4: f(std::integral_constant<int, 4>{}); break;
    case 8: f(std::integral_constant<int, 8>{}); break;
    case 16: f(std::integral_constant<int, 16>{}); break;
    default: f(std::integral_constant<int, 0>{}); break;
  }
}

// Each (group, head) probability block starts on a 64-byte boundary so the
// vectorized exp sees the same packet split regardless of heap addresses.
template <class S>
Index prob_block_stride(Index n) {
  constexpr Index lanes = 64 / sizeof(S);
  return (n + lanes - 1) / lanes * lanes;
}

template <class S>
std::shared_ptr<S[]> aligned_buffer(Index n) {
  void* raw = ::operator new[](static_cast<std::size_t>(std::max<Index>(n, 1)) * sizeof(S),
                               std::align_val_t(64));
  return std::shared_ptr<S[]>(static_cast<S*>(raw), [](S* ptr) {
    ::operator delete[](ptr, std::align_val_t(64));
  });
}

template <class S, int DH>
void attention_forward(const Matrix<S>& qv, const Matrix<S>& kv, const Matrix<S>& vv,
                       const AttentionLayout& layout, int heads, Index dh_runtime, S scale,
                       const std::vector<unsigned char>& mask, S* probs, Index stride,
                       Matrix<S>& out) {
  const Index dh = DH > 0 ? DH : dh_runtime;
  const Index d = qv.cols();
  const Index nq = layout.queries_per_group;
  const Index nk = layout.keys_per_group;
  const bool masked = !mask.empty();
  const S* qd = qv.data();
  const S* kd = kv.data();
  const S* vd = vv.data();
  S* od = out.data();
  for (Index g = 0; g < layout.groups; ++g) {
    const Index kbase = g * nk;
    const Index qbase = layout.shared_queries ? 0 : g * nq;
    const unsigned char* gm = masked ? mask.data() + kbase : nullptr;
    for (Index h = 0; h < heads; ++h) {
      const Index off = h * dh;
      S* block = probs + (g * heads + h) * stride;
      for (Index i = 0; i < nq; ++i) {
        const S* qr = qd + (qbase + i) * d + off;
        S* p = block + i * nk;
        S mx = -std::numeric_limits<S>::infinity();
        for (Index j = 0; j < nk; ++j) {
          const S* kr = kd + (kbase + j) * d + off;
          S s = 0;
          for (Index c = 0; c < dh; ++c) s += qr[c] * kr[c];
          s *= scale;
          p[j] = s;
          if (!gm || gm[j]) mx = std::max(mx, s);
        }
        for (Index j = 0; j < nk; ++j) p[j] -= mx;
      }
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>, Eigen::Aligned64> flat(block, nq * nk);
      flat = flat.exp();
      for (Index i = 0; i < nq; ++i) {
        S* p = block + i * nk;
        S total = 0;
        for (Index j = 0; j < nk; ++j) {
          if (gm && !gm[j]) p[j] = 0;
          total += p[j];
        }
        const S inv = S(1) / total;
        S acc[DH > 0 ? DH : 1];
        S* orow = od + (g * nq + i) * d + off;
        if constexpr (DH > 0) {
          for (int c = 0; c < DH; ++c) acc[c] = 0;
        } else {
          for (Index c = 0; c < dh; ++c) orow[c] = 0;
        }
        for (Index j = 0; j < nk; ++j) {
          p[j] *= inv;
          const S pj = p[j];
          const S* vr = vd + (kbase + j) * d + off;
          if constexpr (DH > 0) {
            for (int c = 0; c < DH; ++c) acc[c] += pj * vr[c];
          } else {
            for (Index c = 0; c < dh; ++c) orow[c] += pj * vr[c];
          }
        }
        if constexpr (DH > 0) {
          for (int c = 0; c < DH; ++c) orow[c] = acc[c];
        }
      }
    }
  }
}

// Null gradient pointers mark inputs that need no gradient.
template <class S, int DH>
void attention_backward(const Matrix<S>& qv, const Matrix<S>& kv, const Matrix<S>& vv,
                        const Matrix<S>& go, const AttentionLayout& layout, int heads,
                        Index dh_runtime, S scale, const S* probs, Index stride, S* gq,
                        S* gk, S* gv) {
  const Index dh = DH > 0 ? DH : dh_runtime;
  const Index d = qv.cols();
  const Index nq = layout.queries_per_group;
  const Index nk = layout.keys_per_group;
  std::vector<S> da(static_cast<std::size_t>(nk));
  for (Index g = 0; g < layout.groups; ++g) {
    const Index kbase = g * nk;
    const Index qbase = layout.shared_queries ? 0 : g * nq;
    for (Index h = 0; h < heads; ++h) {
      const Index off = h * dh;
      for (Index i = 0; i < nq; ++i) {
        const S* p = probs + (g * heads + h) * stride + i * nk;
        const S* gor = go.data() + (g * nq + i) * d + off;
        const S* qr = qv.data() + (qbase + i) * d + off;
        S weighted = 0;
        for (Index j = 0; j < nk; ++j) {
          const S* vr = vv.data() + (kbase + j) * d + off;
          S s = 0;
          for (Index c = 0; c < dh; ++c) s += gor[c] * vr[c];
          da[static_cast<std::size_t>(j)] = s;
          weighted += p[j] * s;
        }
        S acc[DH > 0 ? DH : 1];
        if constexpr (DH > 0) {
          for (int c = 0; c < DH; ++c) acc[c] = 0;
        }
        S* gqr = gq ? gq + (qbase + i) * d + off : nullptr;
        for (Index j = 0; j < nk; ++j) {
          // Masked keys carry probability exactly 0 and contribute nothing.
          if (p[j] == S(0)) continue;
          const S ds = p[j] * (da[static_cast<std::size_t>(j)] - weighted) * scale;
          const S pj = p[j];
          const Index row = (kbase + j) * d + off;
          if (gqr) {
            const S* kr = kv.data() + row;
            if constexpr (DH > 0) {
              for (int c = 0; c < DH; ++c) acc[c] += ds * kr[c];
            } else {
              for (Index c = 0; c < dh; ++c) gqr[c] += ds * kr[c];
            }
          }
          if (gk) {
            S* gkr = gk + row;
            for (Index c = 0; c < dh; ++c) gkr[c] += ds * qr[c];
          }
          if (gv) {
            S* gvr = gv + row;
            for (Index c = 0; c < dh; ++c) gvr[c] += pj * gor[c];
          }
        }
        if constexpr (DH > 0) {
          if (gqr) {
            for (int c = 0; c < DH; ++c) gqr[c] += acc[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Multi-head attention on already-projected Q, K, V. Heads split the
/// columns evenly; output heads are concatenated in column order. Keys whose
/// `key_mask` entry is zero get exactly zero weight. An empty mask means all
/// keys are valid.
template <class S>
Var<S> attention_core(Var<S> q, Var<S> k, Var<S> v, int heads, const AttentionLayout& layout,
                      std::span<const unsigned char> key_mask = {}) {
  const Matrix<S>& qv = q.value();
  const Matrix<S>& kv = k.value();
  const Matrix<S>& vv = v.value();
  const Index d = qv.cols();
  const Index groups = layout.groups;
  const Index nq = layout.queries_per_group;
  const Index nk = layout.keys_per_group;
  const Index q_rows = layout.shared_queries ? nq : groups * nq;

  if (heads < 1 || d % heads != 0) {
    throw ShapeError("ShapeMismatch", "attention: head count " + std::to_string(heads) +
                                          " does not divide width " + std::to_string(d));
  }
  if (qv.rows() != q_rows || kv.rows() != groups * nk || vv.rows() != kv.rows() ||
      kv.cols() != d || vv.cols() != d) {
    throw ShapeError("ShapeMismatch", "attention: Q " + std::to_string(qv.rows()) + "x" +
                                          std::to_string(qv.cols()) + ", K " +
                                          std::to_string(kv.rows()) + "x" +
                                          std::to_string(kv.cols()) + ", V " +
                                          std::to_string(vv.rows()) + "x" +
                                          std::to_string(vv.cols()) + " for layout " +
                                          std::to_string(groups) + "x(" + std::to_string(nq) +
                                          "," + std::to_string(nk) + ")");
  }
  if (!key_mask.empty() && static_cast<Index>(key_mask.size()) != kv.rows()) {
    throw ShapeError("ShapeMismatch", "attention: key mask length " +
                                          std::to_string(key_mask.size()) + " != " +
                                          std::to_string(kv.rows()));
  }

  const Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const Index stride = detail::prob_block_stride<S>(nq * nk);
  auto probs = detail::aligned_buffer<S>(groups * heads * stride);
  std::vector<unsigned char> mask(key_mask.begin(), key_mask.end());

  for (Index g = 0; g < groups; ++g) {
    if (!mask.empty()) {
      bool any = false;
      for (Index j = 0; j < nk; ++j) any = any || mask[static_cast<std::size_t>(g * nk + j)];
      if (!any) {
        throw ShapeError("AllKeysMasked", "every key of group " + std::to_string(g) + " is masked");
      }
    }
  }

  Matrix<S> out(groups * nq, d);
  detail::dispatch_head_width(dh, [&](auto width) {
    detail::attention_forward<S, decltype(width)::value>(qv, kv, vv, layout, heads, dh, scale,
                                                        mask, probs.get(), stride, out);
  });

  const auto iq = q.id(), ik = k.id(), iv = v.id();
  const bool ng = q.needs_grad() || k.needs_grad() || v.needs_grad();
  return q.tape().push(
      std::move(out), ng,
      [iq, ik, iv, heads, layout, probs, stride, dh, scale](Tape<S>& t, std::uint32_t self) {
        const Matrix<S>& go = t.grad_view(self);
        const Matrix<S>& qv = t.value(iq);
        const Matrix<S>& kv = t.value(ik);
        const Matrix<S>& vv = t.value(iv);
        const bool wq = t.needs_grad(iq), wk = t.needs_grad(ik), wv = t.needs_grad(iv);
        Matrix<S> gq, gk, gv;
        if (wq) gq.setZero(qv.rows(), qv.cols());
        if (wk) gk.setZero(kv.rows(), kv.cols());
        if (wv) gv.setZero(vv.rows(), vv.cols());
        detail::dispatch_head_width(dh, [&](auto width) {
          detail::attention_backward<S, decltype(width)::value>(
              qv, kv, vv, go, layout, heads, dh, scale, probs.get(), stride, wq ? gq.data() : nullptr,
              wk ? gk.data() : nullptr, wv ? gv.data() : nullptr);
        });
        if (wq) t.accumulate(iq, std::move(gq));
        if (wk) t.accumulate(ik, std::move(gk));
        if (wv) t.accumulate(iv, std::move(gv));
      });
}

}  // namespace fate::nn
