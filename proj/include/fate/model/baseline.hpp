#pragma once

// Fixed-panel Set Transformer baseline. Every sample is mapped onto one
// configured column order before a plain linear lift, so the model is tied
// to that panel.

#include <string>
#include <unordered_map>
#include <vector>

#include "fate/model/config.hpp"
#include "fate/model/fate_model.hpp"
#include "fate/model/sample.hpp"
#include "fate/nn/layers.hpp"

namespace fate {

/// n x |panel| input matrix. Intersection mode requires every configured
/// feature and drops extras; union mode fills absent features with 0.
inline nn::Matrix<double> baseline_input(const Sample& sample, const BaselineConfig& config) {
  std::unordered_map<FeatureId, Index> column;
  for (std::size_t j = 0; j < sample.panel.size(); ++j) {
    column.emplace(sample.panel.ids[j], static_cast<Index>(j));
  }
  const Index n = sample.num_events();
  nn::Matrix<double> out = nn::Matrix<double>::Zero(n, static_cast<Index>(config.panel.size()));
  for (std::size_t j = 0; j < config.panel.size(); ++j) {
    auto it = column.find(config.panel[j]);
    if (it == column.end()) {
      if (config.mode == PanelMode::intersection) {
        throw DataError("PanelMismatch", "sample '" + sample.sample_id + "' lacks feature id " +
                                             std::to_string(config.panel[j]));
      }
      continue;
    }
    out.col(static_cast<Index>(j)) = sample.events.col(it->second);
  }
  return out;
}

template <class S>
struct BaselineModel {
  BaselineConfig config;
  nn::Linear<S> lift;  // |panel| -> d
  std::vector<nn::Isab<S>> layers;
  PredictionHead<S> head;  // d -> d -> 1

  BaselineModel() = default;
  BaselineModel(const BaselineConfig& c, std::uint64_t seed) : config(c) {
    c.validate();
    nn::Rng rng(seed);
    lift = nn::Linear<S>(static_cast<Index>(c.panel.size()), c.hidden_dim, rng);
    for (int i = 0; i < c.isab_layers; ++i) {
      layers.emplace_back(c.hidden_dim, c.induced_points, c.heads, rng);
    }
    head = PredictionHead<S>(c.hidden_dim, c.hidden_dim, rng);
  }

  template <class F>
  void visit(F&& f) {
    lift.visit(f, "lift.");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].visit(f, "isab." + std::to_string(i) + ".");
    }
    head.visit(f, "head.");
  }
};

template <class S>
nn::Var<S> baseline_forward(BaselineModel<S>& model, nn::Tape<S>& tape, const Sample& sample) {
  const nn::Matrix<double> x = baseline_input(sample, model.config);
  nn::Var<S> h = model.lift.forward(tape.constant(x.cast<S>()));
  for (auto& layer : model.layers) h = layer.forward(h);
  return predict_head(model.head, h);
}

template <class S>
std::vector<double> predict_logits(BaselineModel<S>& model, const Sample& sample) {
  nn::Tape<S> tape(false);
  const nn::Matrix<S>& logits = baseline_forward(model, tape, sample).value();
  std::vector<double> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = logits(i, 0);
  return out;
}

}  // namespace fate
