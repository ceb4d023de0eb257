#pragma once

// Corpus-wide mapping between canonical feature names and the dense integer
// IDs that index rows of the learned feature-encoding table.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "fate/errors.hpp"

namespace fate {

using FeatureId = int;

/// Ordered feature IDs measured for one sample.
struct FeaturePanel {
  std::vector<FeatureId> ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const FeaturePanel&) const = default;
};

/// Trim + uppercase. Aliases are looked up after folding, keyed by the folded
/// raw name.
inline std::string fold_name(std::string_view raw) {
  auto begin = raw.begin();
  auto end = raw.end();
  while (begin != end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
  while (end != begin && std::isspace(static_cast<unsigned char>(*(end - 1)))) --end;
  std::string out(begin, end);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

class FeatureRegistry {
 public:
  FeatureRegistry() = default;

  std::string canonicalize(std::string_view raw_name) const {
    std::string folded = fold_name(raw_name);
    if (folded.empty()) throw DataError("EmptyName", "feature name is empty");
    if (auto it = aliases_.find(folded); it != aliases_.end()) return it->second;
    return folded;
  }

  void add_alias(std::string_view raw, std::string_view canonical) {
    std::string from = fold_name(raw);
    std::string to = fold_name(canonical);
    if (from.empty() || to.empty()) throw DataError("EmptyName", "alias with empty name");
    aliases_[from] = to;
  }

  /// Maps raw names to a panel, appending unseen names while unfrozen.
  FeaturePanel register_names(std::span<const std::string> names) {
    if (names.empty()) throw DataError("EmptyPanel", "a panel needs at least one feature");
    FeaturePanel panel;
    std::unordered_set<FeatureId> seen;
    for (const auto& raw : names) {
      const std::string name = canonicalize(raw);
      FeatureId id;
      if (auto found = find(name)) {
        id = *found;
      } else if (frozen_) {
        throw DataError("UnknownFeatureWhenFrozen",
                        "feature '" + name + "' is not in the frozen registry");
      } else {
        id = append(name);
      }
      if (!seen.insert(id).second) {
        throw DataError("DuplicateFeature", "feature '" + name + "' appears twice in a panel");
      }
      panel.ids.push_back(id);
    }
    return panel;
  }

  FeaturePanel register_names(std::initializer_list<std::string> names) {
    std::vector<std::string> v(names);
    return register_names(std::span<const std::string>(v));
  }

  /// Appends a canonical name regardless of the frozen flag. Used when a
  /// downstream corpus legitimately grows the encoding table.
  FeatureId append(const std::string& canonical) {
    if (find(canonical)) throw DataError("DuplicateFeature", "'" + canonical + "' already registered");
    const FeatureId id = static_cast<FeatureId>(names_.size());
    names_.push_back(canonical);
    index_.emplace(canonical, id);
    return id;
  }

  std::optional<FeatureId> find(const std::string& canonical) const {
    if (auto it = index_.find(canonical); it != index_.end()) return it->second;
    return std::nullopt;
  }

  std::optional<FeatureId> lookup(std::string_view raw_name) const {
    return find(canonicalize(raw_name));
  }

  const std::string& name(FeatureId id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }
  const std::map<std::string, std::string>& aliases() const { return aliases_; }
  std::size_t size() const { return names_.size(); }

  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }
  bool frozen() const { return frozen_; }

  nlohmann::json to_json() const {
    return nlohmann::json{{"names", names_}, {"aliases", aliases_}, {"frozen", frozen_}};
  }

  static FeatureRegistry from_json(const nlohmann::json& j) {
    FeatureRegistry r;
    try {
      for (const auto& [key, _] : j.items()) {
        if (key != "names" && key != "aliases" && key != "frozen") {
          throw DataError("RegistryInvalid", "unknown registry key '" + key + "'");
        }
      }
      for (const auto& n : j.at("names")) r.append(n.get<std::string>());
      if (j.contains("aliases")) {
        for (const auto& [from, to] : j.at("aliases").items()) r.add_alias(from, to.get<std::string>());
      }
      r.frozen_ = j.value("frozen", false);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("RegistryInvalid", e.what());
    }
    return r;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, FeatureId> index_;
  std::map<std::string, std::string> aliases_;
  bool frozen_ = false;
};

}  // namespace fate
