#pragma once

// Event matrices as produced by the file readers, plus the comma-separated
// fallback format: a header row of feature names followed by one numeric
// row per event.

#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fate/errors.hpp"
#include "fate/nn/tape.hpp"

namespace fate {

struct ChannelName {
  std::string name;                  // $PnN, or the CSV header
  std::optional<std::string> stain;  // $PnS when present

  /// Stain names identify markers across labs better than detector names.
  const std::string& feature_name() const { return stain && !stain->empty() ? *stain : name; }
};

struct RawEventMatrix {
  nn::Matrix<double> values;  // events x channels
  std::vector<ChannelName> channels;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::optional<double> parse_number(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses CSV text. A non-empty `schema` maps header names to feature names
/// and must cover every column.
inline RawEventMatrix load_csv_sample(std::istream& in,
                                      const std::map<std::string, std::string>& schema = {}) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) {
    throw DataError("SchemaMismatch", "CSV has no header row");
  }
  RawEventMatrix out;
  for (auto cell : detail::split_commas(line)) {
    std::string name(cell);
    if (name.empty()) throw DataError("SchemaMismatch", "CSV header has an empty column name");
    if (!schema.empty()) {
      auto it = schema.find(name);
      if (it == schema.end()) {
        throw DataError("SchemaMismatch", "CSV column '" + name + "' is not in the schema");
      }
      name = it->second;
    }
    out.channels.push_back({name, std::nullopt});
  }
  const std::size_t k = out.channels.size();

  std::vector<double> values;
  long row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_commas(line);
    if (cells.size() != k) {
      throw DataError("SchemaMismatch", "row " + std::to_string(row) + " has " +
                                            std::to_string(cells.size()) + " cells, header has " +
                                            std::to_string(k));
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto v = detail::parse_number(cells[c]);
      if (!v) {
        throw CellError("NonNumericCell", row, static_cast<long>(c + 1),
                        "'" + std::string(cells[c]) + "' is not a number");
      }
      if (!std::isfinite(*v)) {
        throw CellError("NonFiniteValue", row, static_cast<long>(c + 1), "value is not finite");
      }
      values.push_back(*v);
    }
  }
  out.values.resize(row, static_cast<nn::Index>(k));
  for (std::size_t i = 0; i < values.size(); ++i) out.values.data()[i] = values[i];
  return out;
}

inline RawEventMatrix load_csv_sample(const std::string& text,
                                      const std::map<std::string, std::string>& schema = {}) {
  std::istringstream in(text);
  return load_csv_sample(in, schema);
}

/// CSV text with full round-trip precision.
inline std::string to_csv(const nn::Matrix<double>& values, const std::vector<std::string>& header) {
  std::string out;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j) out += ',';
    out += header[j];
  }
  out += '\n';
  char buf[32];
  for (nn::Index r = 0; r < values.rows(); ++r) {
    for (nn::Index c = 0; c < values.cols(); ++c) {
      if (c) out += ',';
      const auto res = std::to_chars(buf, buf + sizeof buf, values(r, c));
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

}  // namespace fate
