#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fate/errors.hpp"
#include "fate/feature_registry.hpp"

namespace fate {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  if (!j.is_object()) throw ConfigError("ConfigInvalid", where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("ConfigInvalid", "unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("ConfigInvalid", std::string("bad value for '") + key + "' in " + where);
  }
}

}  // namespace detail

/// Architecture hyperparameters of the feature-agnostic model.
struct FateConfig {
  int encoding_dim = 10;      // D_E
  int hidden_dim = 32;        // d
  int embedding_dim = 8;      // F_c
  int encoder_isab_layers = 3;
  int decoder_isab_layers = 3;
  int induced_points = 16;
  int heads = 4;
  int feature_self_attention_depth = 1;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v < 1) throw ConfigError("ConfigInvalid", std::string(name) + " must be >= 1");
    };
    positive(encoding_dim, "encoding_dim");
    positive(hidden_dim, "hidden_dim");
    positive(embedding_dim, "embedding_dim");
    positive(encoder_isab_layers, "encoder_isab_layers");
    positive(decoder_isab_layers, "decoder_isab_layers");
    positive(induced_points, "induced_points");
    positive(heads, "heads");
    positive(feature_self_attention_depth, "feature_self_attention_depth");
    if (hidden_dim % heads != 0) {
      throw ConfigError("ConfigInvalid", "heads must divide hidden_dim");
    }
  }

  nlohmann::json to_json() const {
    return {{"encoding_dim", encoding_dim},
            {"hidden_dim", hidden_dim},
            {"embedding_dim", embedding_dim},
            {"encoder_isab_layers", encoder_isab_layers},
            {"decoder_isab_layers", decoder_isab_layers},
            {"induced_points", induced_points},
            {"heads", heads},
            {"feature_self_attention_depth", feature_self_attention_depth}};
  }

  static FateConfig from_json(const nlohmann::json& j) {
    const std::string where = "model";
    detail::reject_unknown_keys(j,
                                {"kind", "encoding_dim", "hidden_dim", "embedding_dim",
                                 "encoder_isab_layers", "decoder_isab_layers", "induced_points",
                                 "heads", "feature_self_attention_depth"},
                                where);
    FateConfig c;
    detail::read_optional(j, "encoding_dim", c.encoding_dim, where);
    detail::read_optional(j, "hidden_dim", c.hidden_dim, where);
    detail::read_optional(j, "embedding_dim", c.embedding_dim, where);
    detail::read_optional(j, "encoder_isab_layers", c.encoder_isab_layers, where);
    detail::read_optional(j, "decoder_isab_layers", c.decoder_isab_layers, where);
    detail::read_optional(j, "induced_points", c.induced_points, where);
    detail::read_optional(j, "heads", c.heads, where);
    detail::read_optional(j, "feature_self_attention_depth", c.feature_self_attention_depth,
                          where);
    c.validate();
    return c;
  }
};

/// How the fixed-panel baseline builds its input columns.
enum class PanelMode { intersection, union_zero_impute };

/// Fixed-panel Set Transformer baseline: linear lift, ISAB stack, MLP head.
struct BaselineConfig {
  PanelMode mode = PanelMode::intersection;
  std::vector<FeatureId> panel;  // input columns, by global feature ID
  std::vector<std::string> panel_names;  // as configured; resolved into `panel`
  int hidden_dim = 32;
  int isab_layers = 4;
  int induced_points = 16;
  int heads = 4;

  /// Fills `panel` from `panel_names`; an empty name list in union mode
  /// selects every registered feature.
  void resolve(const FeatureRegistry& registry) {
    panel.clear();
    if (panel_names.empty() && mode == PanelMode::union_zero_impute) {
      for (std::size_t i = 0; i < registry.size(); ++i) panel.push_back(static_cast<FeatureId>(i));
      return;
    }
    for (const auto& n : panel_names) {
      auto id = registry.lookup(n);
      if (!id) throw DataError("UnknownFeatureWhenFrozen", "baseline feature '" + n + "'");
      panel.push_back(*id);
    }
  }

  void validate() const {
    if (panel.empty()) throw ConfigError("ConfigInvalid", "baseline panel is empty");
    if (hidden_dim < 1 || isab_layers < 1 || induced_points < 1 || heads < 1 ||
        hidden_dim % heads != 0) {
      throw ConfigError("ConfigInvalid", "baseline dimensions");
    }
  }

  nlohmann::json to_json() const {
    return {{"mode", mode == PanelMode::intersection ? "intersection" : "union"},
            {"panel", panel},
            {"panel_names", panel_names},
            {"hidden_dim", hidden_dim},
            {"isab_layers", isab_layers},
            {"induced_points", induced_points},
            {"heads", heads}};
  }

  static BaselineConfig from_json(const nlohmann::json& j) {
    const std::string where = "baseline model";
    detail::reject_unknown_keys(
        j, {"kind", "mode", "panel", "panel_names", "hidden_dim", "isab_layers", "induced_points", "heads"}, where);
    BaselineConfig c;
    std::string mode = "intersection";
    detail::read_optional(j, "mode", mode, where);
    if (mode == "intersection") {
      c.mode = PanelMode::intersection;
    } else if (mode == "union") {
      c.mode = PanelMode::union_zero_impute;
    } else {
      throw ConfigError("ConfigInvalid", "baseline mode must be 'intersection' or 'union'");
    }
    detail::read_optional(j, "panel", c.panel, where);
    detail::read_optional(j, "panel_names", c.panel_names, where);
    detail::read_optional(j, "hidden_dim", c.hidden_dim, where);
    detail::read_optional(j, "isab_layers", c.isab_layers, where);
    detail::read_optional(j, "induced_points", c.induced_points, where);
    detail::read_optional(j, "heads", c.heads, where);
    return c;
  }
};

}  // namespace fate
