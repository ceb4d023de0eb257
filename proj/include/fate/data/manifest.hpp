#pragma once

// Sample manifests: a JSON document listing one entry per sample,
//
//   {"transform": <optional transform spec>,
//    "samples": [{"sample_id": "A-01", "patient_id": "A", "path": "A-01.csv",
//                 "format": "csv" | "fcs", "labels": "A-01.labels"}, ...]}
//
// Relative paths resolve against the manifest's directory. Label files hold
// one 0/1 value per line, one line per event.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fate/data/csv.hpp"
#include "fate/data/fcs.hpp"
#include "fate/data/transform.hpp"
#include "fate/feature_registry.hpp"
#include "fate/model/sample.hpp"

namespace fate {

struct ManifestEntry {
  std::string sample_id;
  std::string patient_id;
  std::string path;
  std::string format = "csv";
  std::optional<std::string> labels;
};

struct Manifest {
  std::filesystem::path base;  // directory relative paths resolve against
  std::optional<nlohmann::json> transform;
  std::vector<ManifestEntry> samples;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  }
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("IoError", "cannot read '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("IoError", "cannot write '" + path.string() + "'");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw DataError("IoError", "failed writing '" + path.string() + "'");
}

inline Manifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base) {
  Manifest m;
  m.base = std::move(base);
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "samples" && key != "transform") {
        throw DataError("ManifestInvalid", "unknown manifest key '" + key + "'");
      }
    }
    if (j.contains("transform")) m.transform = j.at("transform");
    for (const auto& e : j.at("samples")) {
      ManifestEntry entry;
      entry.sample_id = e.at("sample_id").get<std::string>();
      entry.patient_id = e.at("patient_id").get<std::string>();
      entry.path = e.at("path").get<std::string>();
      entry.format = e.value("format", std::string("csv"));
      if (e.contains("labels") && !e.at("labels").is_null()) {
        entry.labels = e.at("labels").get<std::string>();
      }
      if (entry.format != "csv" && entry.format != "fcs") {
        throw DataError("ManifestInvalid", "sample '" + entry.sample_id + "' has format '" +
                                               entry.format + "'");
      }
      m.samples.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("ManifestInvalid", e.what());
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("ManifestInvalid", path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.samples) {
    nlohmann::json j = {{"sample_id", e.sample_id},
                        {"patient_id", e.patient_id},
                        {"path", e.path},
                        {"format", e.format}};
    if (e.labels) j["labels"] = *e.labels;
    samples.push_back(std::move(j));
  }
  nlohmann::json out = {{"samples", std::move(samples)}};
  if (m.transform) out["transform"] = *m.transform;
  return out;
}

inline std::vector<unsigned char> parse_labels(const std::string& text, const std::string& where) {
  std::vector<unsigned char> labels;
  std::istringstream in(text);
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    ++row;
    if (t == "0") {
      labels.push_back(0);
    } else if (t == "1") {
      labels.push_back(1);
    } else {
      throw CellError("NonNumericCell", row, 1, where + ": label '" + std::string(t) + "' is not 0/1");
    }
  }
  return labels;
}

/// Reads the raw event matrix of one entry. CSV entries are used as stored
/// unless the manifest names a transform; FCS entries default to the
/// standard transform policy.
inline RawEventMatrix read_entry(const Manifest& m, const ManifestEntry& e) {
  const auto path = m.resolve(e.path);
  if (e.format == "fcs") {
    FcsFile f = parse_fcs(read_file(path));
    const TransformSpec spec = m.transform ? TransformSpec::from_json(*m.transform) : TransformSpec{};
    return apply_transforms(std::move(f.data), spec);
  }
  std::ifstream in(path);
  if (!in) throw DataError("IoError", "cannot read '" + path.string() + "'");
  RawEventMatrix raw = load_csv_sample(in);
  if (m.transform) raw = apply_transforms(std::move(raw), TransformSpec::from_json(*m.transform));
  return raw;
}

/// Channel names of one entry (reads the whole file; used for registry
/// scans).
inline std::vector<std::string> entry_feature_names(const RawEventMatrix& raw) {
  std::vector<std::string> names;
  for (const auto& c : raw.channels) names.push_back(c.feature_name());
  return names;
}

/// Loads every entry, mapping channel names through `registry` (which grows
/// unless frozen).
inline std::vector<Sample> load_samples(const Manifest& m, FeatureRegistry& registry) {
  std::vector<Sample> out;
  for (const auto& e : m.samples) {
    RawEventMatrix raw = read_entry(m, e);
    Sample s;
    s.sample_id = e.sample_id;
    s.patient_id = e.patient_id;
    const auto names = entry_feature_names(raw);
    s.panel = registry.register_names(std::span<const std::string>(names));
    s.events = std::move(raw.values);
    if (e.labels) s.labels = parse_labels(read_file(m.resolve(*e.labels)), e.sample_id);
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace fate
