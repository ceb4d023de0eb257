#pragma once

// The feature-agnostic encoder and its masked-autoencoder decoder.
//
//   feature_tokenize : (n x F values, panel)      -> n*F tokens [x ; E_id]
//   feature_encode   : tokens                     -> n x d   (SAB over each event's
//                                                             tokens, pooled by a learned
//                                                             query)
//   set_encode       : n x d                      -> n x F_c (ISAB stack + linear)
//   predict_head     : n x F_c                    -> n logits
//   decode           : n x F_c, target panel      -> n x |panel| reconstructed values
//
// Tokens of one event form one attention group, so every event is processed
// independently by the feature stages; only the ISAB stages mix events.

#include <cstdint>
#include <string>
#include <vector>

#include "fate/model/config.hpp"
#include "fate/model/sample.hpp"
#include "fate/nn/layers.hpp"

namespace fate {

using nn::Index;

/// Flattened n x F x (1 + D_E) token tensor: row e*F + j is token j of event e.
template <class S>
struct TokenBatch {
  nn::Var<S> tokens;
  Index events = 0;
  Index features = 0;
};

template <class S>
struct FeatureEncoder {
  nn::Linear<S> lift;  // (1 + D_E) -> d
  std::vector<nn::Mab<S>> self_blocks;
  nn::Parameter<S> query;  // 1 x d learned pooling query
  nn::Mab<S> pool;

  FeatureEncoder() = default;
  FeatureEncoder(const FateConfig& c, nn::Rng& rng)
      : lift(1 + c.encoding_dim, c.hidden_dim, rng) {
    for (int i = 0; i < c.feature_self_attention_depth; ++i) {
      self_blocks.emplace_back(c.hidden_dim, c.heads, rng);
    }
    query = nn::Parameter<S>(nn::normal_matrix<S>(
        1, c.hidden_dim, S(1) / std::sqrt(static_cast<S>(c.hidden_dim)), rng));
    pool = nn::Mab<S>(c.hidden_dim, c.heads, rng);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    lift.visit(f, prefix + "lift.");
    for (std::size_t i = 0; i < self_blocks.size(); ++i) {
      self_blocks[i].visit(f, prefix + "self." + std::to_string(i) + ".");
    }
    f(prefix + "query", query);
    pool.visit(f, prefix + "pool.");
  }
};

template <class S>
struct SetEncoder {
  std::vector<nn::Isab<S>> layers;
  nn::Linear<S> out;  // d -> F_c

  SetEncoder() = default;
  SetEncoder(const FateConfig& c, nn::Rng& rng) {
    for (int i = 0; i < c.encoder_isab_layers; ++i) {
      layers.emplace_back(c.hidden_dim, c.induced_points, c.heads, rng);
    }
    out = nn::Linear<S>(c.hidden_dim, c.embedding_dim, rng);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].visit(f, prefix + "isab." + std::to_string(i) + ".");
    }
    out.visit(f, prefix + "out.");
  }
};

/// Two-layer MLP: linear in -> hidden, GELU, linear hidden -> 1.
template <class S>
struct PredictionHead {
  nn::Linear<S> hidden;
  nn::Linear<S> out;

  PredictionHead() = default;
  PredictionHead(Index in, Index width, nn::Rng& rng) : hidden(in, width, rng), out(width, 1, rng) {}

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    hidden.visit(f, prefix + "hidden.");
    out.visit(f, prefix + "out.");
  }
};

template <class S>
struct FateDecoder {
  nn::Linear<S> lift;  // F_c -> d
  std::vector<nn::Isab<S>> layers;
  nn::Linear<S> query_lift;  // D_E -> d
  nn::Mab<S> cross;
  nn::Mab<S> self_block;
  nn::Linear<S> out;  // d -> 1

  FateDecoder() = default;
  FateDecoder(const FateConfig& c, nn::Rng& rng) : lift(c.embedding_dim, c.hidden_dim, rng) {
    for (int i = 0; i < c.decoder_isab_layers; ++i) {
      layers.emplace_back(c.hidden_dim, c.induced_points, c.heads, rng);
    }
    query_lift = nn::Linear<S>(c.encoding_dim, c.hidden_dim, rng);
    cross = nn::Mab<S>(c.hidden_dim, c.heads, rng);
    self_block = nn::Mab<S>(c.hidden_dim, c.heads, rng);
    out = nn::Linear<S>(c.hidden_dim, 1, rng);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    lift.visit(f, prefix + "lift.");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].visit(f, prefix + "isab." + std::to_string(i) + ".");
    }
    query_lift.visit(f, prefix + "query_lift.");
    cross.visit(f, prefix + "cross.");
    self_block.visit(f, prefix + "self.");
    out.visit(f, prefix + "out.");
  }
};

template <class S>
struct FateModel {
  FateConfig config;
  nn::Parameter<S> encoding;  // M x D_E feature-encoding table
  FeatureEncoder<S> feature_encoder;
  SetEncoder<S> set_encoder;
  PredictionHead<S> head;
  FateDecoder<S> decoder;

  FateModel() = default;
  FateModel(const FateConfig& c, Index num_features, std::uint64_t seed) : config(c) {
    c.validate();
    if (num_features < 1) throw ConfigError("ConfigInvalid", "model needs at least one feature");
    nn::Rng rng(seed);
    encoding = nn::Parameter<S>(nn::normal_matrix<S>(num_features, c.encoding_dim, S(1), rng));
    feature_encoder = FeatureEncoder<S>(c, rng);
    set_encoder = SetEncoder<S>(c, rng);
    head = PredictionHead<S>(c.embedding_dim, c.embedding_dim, rng);
    decoder = FateDecoder<S>(c, rng);
  }

  Index num_features() const { return encoding.value.rows(); }

  /// Appends encoding rows for newly registered features; existing rows are
  /// untouched.
  void grow_features(Index new_count, std::uint64_t seed) {
    const Index old = num_features();
    if (new_count <= old) return;
    nn::Rng rng(seed);
    nn::Matrix<S> grown(new_count, encoding.value.cols());
    grown.topRows(old) = encoding.value;
    grown.bottomRows(new_count - old) =
        nn::normal_matrix<S>(new_count - old, encoding.value.cols(), S(1), rng);
    encoding = nn::Parameter<S>(std::move(grown));
  }

  template <class F>
  void visit_encoder(F&& f) {
    f("encoding", encoding);
    feature_encoder.visit(f, "feature_encoder.");
    set_encoder.visit(f, "set_encoder.");
  }
  template <class F>
  void visit_head(F&& f) {
    head.visit(f, "head.");
  }
  template <class F>
  void visit_decoder(F&& f) {
    decoder.visit(f, "decoder.");
  }
  template <class F>
  void visit(F&& f) {
    visit_encoder(f);
    visit_head(f);
    visit_decoder(f);
  }
};

// ---------------------------------------------------------------------------
// Operations

/// Tokens for arbitrary per-event feature subsets: `values(e, j)` is measured
/// on feature `ids(e, j)`. All events carry the same number of tokens.
template <class S>
TokenBatch<S> feature_tokenize(nn::Var<S> table, const nn::Matrix<double>& values,
                               const nn::Matrix<int>& ids) {
  if (values.rows() != ids.rows() || values.cols() != ids.cols() || values.cols() < 1) {
    throw ShapeError("ShapeMismatch", "feature_tokenize: values and ids disagree");
  }
  const Index n = values.rows(), k = values.cols();
  const Index m = table.rows();
  nn::Matrix<S> column(n * k, 1);
  std::vector<Index> rows(static_cast<std::size_t>(n * k));
  for (Index e = 0; e < n; ++e) {
    for (Index j = 0; j < k; ++j) {
      const int id = ids(e, j);
      if (id < 0 || id >= m) {
        throw DataError("PanelOutOfRange", "feature id " + std::to_string(id) +
                                               " outside encoding table of " + std::to_string(m));
      }
      column(e * k + j, 0) = static_cast<S>(values(e, j));
      rows[static_cast<std::size_t>(e * k + j)] = id;
    }
  }
  nn::Tape<S>& t = table.tape();
  nn::Var<S> encoded = nn::gather_rows(table, std::move(rows));
  return {nn::concat_cols(t.constant(std::move(column)), encoded), n, k};
}

inline nn::Matrix<int> tile_panel(const FeaturePanel& panel, Index events) {
  nn::Matrix<int> ids(events, static_cast<Index>(panel.size()));
  for (Index e = 0; e < events; ++e) {
    for (Index j = 0; j < ids.cols(); ++j) ids(e, j) = panel.ids[static_cast<std::size_t>(j)];
  }
  return ids;
}

template <class S>
TokenBatch<S> feature_tokenize(nn::Var<S> table, const nn::Matrix<double>& values,
                               const FeaturePanel& panel) {
  if (static_cast<std::size_t>(values.cols()) != panel.size()) {
    throw ShapeError("ShapeMismatch", "feature_tokenize: value columns != panel length");
  }
  return feature_tokenize(table, values, tile_panel(panel, values.rows()));
}

template <class S>
nn::Var<S> feature_encode(FeatureEncoder<S>& enc, const TokenBatch<S>& batch) {
  nn::Var<S> x = enc.lift.forward(batch.tokens);
  for (auto& block : enc.self_blocks) x = block.self_attend(x, batch.features);
  nn::Var<S> q = x.tape().param(enc.query);
  return enc.pool.forward(q, x, nn::AttentionLayout{batch.events, 1, batch.features, true});
}

template <class S>
nn::Var<S> set_encode(SetEncoder<S>& enc, nn::Var<S> z,
                      std::span<const unsigned char> event_mask = {}) {
  for (auto& layer : enc.layers) z = layer.forward(z, 1, event_mask);
  return enc.out.forward(z);
}

template <class S>
nn::Var<S> predict_head(PredictionHead<S>& head, nn::Var<S> z) {
  return head.out.forward(nn::gelu(head.hidden.forward(z)));
}

/// Reconstructs the values of `target` features for every event.
template <class S>
nn::Var<S> decode(FateDecoder<S>& dec, nn::Var<S> z, const FeaturePanel& target,
                  nn::Var<S> table, std::span<const unsigned char> event_mask = {}) {
  if (target.size() == 0) throw ShapeError("ShapeMismatch", "decode: empty target panel");
  const Index n = z.rows();
  const Index p = static_cast<Index>(target.size());
  std::vector<Index> rows;
  rows.reserve(target.size());
  for (FeatureId id : target.ids) {
    if (id < 0 || id >= table.rows()) {
      throw DataError("PanelOutOfRange", "feature id " + std::to_string(id) +
                                             " outside encoding table of " +
                                             std::to_string(table.rows()));
    }
    rows.push_back(id);
  }
  nn::Var<S> h = dec.lift.forward(z);
  for (auto& layer : dec.layers) h = layer.forward(h, 1, event_mask);
  nn::Var<S> queries = dec.query_lift.forward(nn::gather_rows(table, std::move(rows)));
  nn::Var<S> per_feature = dec.cross.forward(queries, h, nn::AttentionLayout{n, p, 1, true});
  per_feature = dec.self_block.self_attend(per_feature, p);
  return nn::reshape(dec.out.forward(per_feature), n, p);
}

// ---------------------------------------------------------------------------
// Whole-model helpers

template <class S>
nn::Var<S> encode_sample(FateModel<S>& model, nn::Tape<S>& tape, const Sample& sample) {
  nn::Var<S> table = tape.param(model.encoding);
  TokenBatch<S> tokens = feature_tokenize(table, sample.events, sample.panel);
  return set_encode(model.set_encoder, feature_encode(model.feature_encoder, tokens));
}

template <class S>
nn::Var<S> sample_logits(FateModel<S>& model, nn::Tape<S>& tape, const Sample& sample) {
  return predict_head(model.head, encode_sample(model, tape, sample));
}

/// Inference-only embedding of a whole sample. The per-event feature stage
/// runs in chunks of `chunk` events to bound memory; the set stage sees all
/// events at once.
template <class S>
nn::Matrix<S> embed_events(FateModel<S>& model, const Sample& sample, Index chunk = 2048) {
  const Index n = sample.num_events();
  nn::Matrix<S> z(n, model.config.hidden_dim);
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    nn::Tape<S> tape(false);
    nn::Var<S> table = tape.param(model.encoding);
    nn::Matrix<double> block = sample.events.middleRows(start, len);
    TokenBatch<S> tokens = feature_tokenize(table, block, sample.panel);
    z.middleRows(start, len) = feature_encode(model.feature_encoder, tokens).value();
  }
  nn::Tape<S> tape(false);
  return set_encode(model.set_encoder, tape.constant(std::move(z))).value();
}

template <class S>
std::vector<double> predict_logits(FateModel<S>& model, const Sample& sample) {
  nn::Matrix<S> z = embed_events(model, sample);
  nn::Tape<S> tape(false);
  const nn::Matrix<S>& logits = predict_head(model.head, tape.constant(std::move(z))).value();
  std::vector<double> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = logits(i, 0);
  return out;
}

}  // namespace fate
