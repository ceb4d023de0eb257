#pragma once

// Per-channel value transforms applied after decoding. The default policy
// compresses fluorescence with asinh, rescales scatter and time linearly,
// and finally min-max normalizes every channel into [0, 1].

#include <cmath>
#include <map>
#include <string>

#include <json.hpp>

#include "fate/data/csv.hpp"
#include "fate/errors.hpp"

namespace fate {

struct Transform {
  enum class Kind { identity, asinh, minmax, zscore };
  Kind kind = Kind::identity;
  double cofactor = 150.0;  // asinh only

  static Transform identity() { return {}; }
  static Transform asinh(double cofactor) { return {Kind::asinh, cofactor}; }
  static Transform minmax() { return {Kind::minmax, 0.0}; }
  static Transform zscore() { return {Kind::zscore, 0.0}; }
};

struct TransformSpec {
  Transform fluorescence = Transform::asinh(150.0);
  Transform scatter = Transform::minmax();  // FSC*, SSC*, TIME
  std::map<std::string, Transform> channels;  // by channel name; overrides the class default
  bool final_minmax = true;

  static TransformSpec identity() {
    TransformSpec s;
    s.fluorescence = Transform::identity();
    s.scatter = Transform::identity();
    s.final_minmax = false;
    return s;
  }

  static TransformSpec from_json(const nlohmann::json& j);
};

inline bool is_scatter_channel(const std::string& name) {
  std::string up;
  for (char c : name) up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return up.rfind("FSC", 0) == 0 || up.rfind("SSC", 0) == 0 || up == "TIME";
}

namespace detail {

template <class Col>
void minmax_column(Col col) {
  const double lo = col.minCoeff(), hi = col.maxCoeff();
  if (!(hi > lo)) {
    col.setConstant(0.5);
  } else {
    col = (col.array() - lo) / (hi - lo);
  }
}

template <class Col>
void apply_one(Col col, const Transform& t) {
  if (col.size() == 0) return;
  switch (t.kind) {
    case Transform::Kind::identity:
      break;
    case Transform::Kind::asinh:
      col = (col.array() / t.cofactor).asinh();
      break;
    case Transform::Kind::minmax:
      minmax_column(col);
      break;
    case Transform::Kind::zscore: {
      const double mean = col.mean();
      const double var = (col.array() - mean).square().mean();
      if (var > 0.0) {
        col = (col.array() - mean) / std::sqrt(var);
      } else {
        col.setZero();
      }
      break;
    }
  }
}

inline Transform transform_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.is_string() ? j.get<std::string>() : j.at("kind").get<std::string>();
    if (kind == "identity") return Transform::identity();
    if (kind == "minmax") return Transform::minmax();
    if (kind == "zscore") return Transform::zscore();
    if (kind == "asinh") {
      const double c = j.is_object() ? j.value("cofactor", 150.0) : 150.0;
      if (!(c > 0.0)) throw ConfigError("ConfigInvalid", "asinh cofactor must be positive");
      return Transform::asinh(c);
    }
    throw ConfigError("ConfigInvalid", "unknown transform '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("ConfigInvalid", std::string("transform: ") + e.what());
  }
}

}  // namespace detail

/// Accepts "default", "identity", or an object
/// {fluorescence, scatter, channels: {name: transform}, final_minmax}.
inline TransformSpec TransformSpec::from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "default") return TransformSpec{};
    if (s == "identity" || s == "none") return TransformSpec::identity();
    throw ConfigError("ConfigInvalid", "unknown transform policy '" + s + "'");
  }
  if (!j.is_object()) throw ConfigError("ConfigInvalid", "transform must be a string or object");
  TransformSpec spec;
  for (const auto& [key, value] : j.items()) {
    if (key == "fluorescence") {
      spec.fluorescence = detail::transform_from_json(value);
    } else if (key == "scatter") {
      spec.scatter = detail::transform_from_json(value);
    } else if (key == "channels") {
      for (const auto& [name, t] : value.items()) spec.channels[name] = detail::transform_from_json(t);
    } else if (key == "final_minmax") {
      spec.final_minmax = value.get<bool>();
    } else {
      throw ConfigError("ConfigInvalid", "unknown transform key '" + key + "'");
    }
  }
  return spec;
}

inline RawEventMatrix apply_transforms(RawEventMatrix m, const TransformSpec& spec) {
  for (std::size_t j = 0; j < m.channels.size(); ++j) {
    const std::string& name = m.channels[j].name;
    Transform t = is_scatter_channel(name) ? spec.scatter : spec.fluorescence;
    if (auto it = spec.channels.find(name); it != spec.channels.end()) {
      t = it->second;
    } else if (auto st = spec.channels.find(m.channels[j].feature_name()); st != spec.channels.end()) {
      t = st->second;
    }
    auto col = m.values.col(static_cast<nn::Index>(j));
    detail::apply_one(col, t);
    if (spec.final_minmax && m.values.rows() > 0) detail::minmax_column(col);
  }
  return m;
}

}  // namespace fate
