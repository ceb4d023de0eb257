#pragma once

// Per-batch losses. Samples in a batch are evaluated independently on one
// tape and their losses pooled, so unequal event and feature counts need no
// padding.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fate/model/baseline.hpp"
#include "fate/model/fate_model.hpp"
#include "fate/training/masking.hpp"

namespace fate {

/// Uniform subsample of at most `cap` events, kept in original order.
/// `cap <= 0` keeps everything.
template <class Rng>
Sample subsample_events(const Sample& s, Index cap, Rng& rng) {
  const Index n = s.num_events();
  if (cap <= 0 || n <= cap) return s;
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  for (Index i = 0; i < cap; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(pick(rng))]);
  }
  rows.resize(static_cast<std::size_t>(cap));
  std::sort(rows.begin(), rows.end());
  return select_events(s, rows);
}

/// Mean |pred - target| over masked entries (plain-matrix form of the MAE
/// reconstruction loss).
template <class S>
double masked_l1_mean(const nn::Matrix<S>& pred, const nn::Matrix<double>& target,
                      const nn::Matrix<unsigned char>& mask) {
  double sum = 0.0;
  long count = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    if (!mask.data()[i]) continue;
    sum += std::abs(static_cast<double>(pred.data()[i]) - target.data()[i]);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Reconstruction of the full panel from the visible (unmasked) tokens.
template <class S>
nn::Var<S> mae_reconstruct(FateModel<S>& model, nn::Tape<S>& tape, const Sample& s,
                           const nn::Matrix<unsigned char>& mask) {
  const Index n = s.num_events();
  const Index f = s.num_features();
  if (mask.rows() != n || mask.cols() != f) {
    throw ShapeError("ShapeMismatch", "mask shape differs from sample");
  }
  Index visible = -1;
  for (Index e = 0; e < n; ++e) {
    Index v = 0;
    for (Index j = 0; j < f; ++j) v += mask(e, j) ? 0 : 1;
    if (visible >= 0 && v != visible) {
      throw ShapeError("ShapeMismatch", "every event must keep the same number of features");
    }
    visible = v;
  }
  if (visible < 1) throw DataError("TooFewFeatures", "mask hides every feature");
  nn::Matrix<double> values(n, visible);
  nn::Matrix<int> ids(n, visible);
  for (Index e = 0; e < n; ++e) {
    Index c = 0;
    for (Index j = 0; j < f; ++j) {
      if (mask(e, j)) continue;
      values(e, c) = s.events(e, j);
      ids(e, c) = s.panel.ids[static_cast<std::size_t>(j)];
      ++c;
    }
  }
  nn::Var<S> table = tape.param(model.encoding);
  TokenBatch<S> tokens = feature_tokenize(table, values, ids);
  nn::Var<S> z = set_encode(model.set_encoder, feature_encode(model.feature_encoder, tokens));
  return decode(model.decoder, z, s.panel, table);
}

struct BatchLoss {
  double value = 0.0;  // mean loss
  long count = 0;      // masked entries or events it averages over
};

/// Masked-autoencoder loss of a batch: mean L1 over every masked position.
/// Gradients land in the encoder, encoding table and decoder parameters.
template <class S, class Rng>
BatchLoss mae_step(FateModel<S>& model, const std::vector<const Sample*>& batch, double ratio,
                   Rng& rng) {
  if (batch.empty()) throw DataError("EmptyBatch", "mae_step needs at least one sample");
  nn::Tape<S> tape;
  nn::Var<S> total;
  long count = 0;
  for (const Sample* s : batch) {
    MaskPlan plan = make_mask_plan(s->num_events(), static_cast<int>(s->num_features()), ratio, rng);
    nn::Var<S> pred = mae_reconstruct(model, tape, *s, plan.mask);
    count += static_cast<long>(plan.mask.template cast<long>().sum());
    nn::Var<S> l = nn::masked_l1_sum(pred, s->events.template cast<S>().eval(), std::move(plan.mask));
    total = total.valid() ? nn::add(total, l) : l;
  }
  nn::Var<S> loss = nn::scale(total, S(1) / static_cast<S>(count));
  tape.backward(loss);
  return {static_cast<double>(loss.value()(0, 0)), count};
}

template <class S>
nn::Var<S> supervised_logits(FateModel<S>& model, nn::Tape<S>& tape, const Sample& s) {
  return sample_logits(model, tape, s);
}

template <class S>
nn::Var<S> supervised_logits(BaselineModel<S>& model, nn::Tape<S>& tape, const Sample& s) {
  return baseline_forward(model, tape, s);
}

/// Mean binary cross-entropy over every event of the batch.
template <class S, class Model>
BatchLoss supervised_step(Model& model, const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw DataError("EmptyBatch", "supervised_step needs at least one sample");
  nn::Tape<S> tape;
  nn::Var<S> total;
  long count = 0;
  for (const Sample* s : batch) {
    if (!s->labeled()) {
      throw DataError("MissingLabels", "sample '" + s->sample_id + "' has no labels");
    }
    nn::Var<S> l = nn::bce_logits_sum(supervised_logits(model, tape, *s), s->labels);
    total = total.valid() ? nn::add(total, l) : l;
    count += static_cast<long>(s->num_events());
  }
  nn::Var<S> loss = nn::scale(total, S(1) / static_cast<S>(count));
  tape.backward(loss);
  return {static_cast<double>(loss.value()(0, 0)), count};
}

}  // namespace fate
