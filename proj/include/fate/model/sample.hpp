#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fate/errors.hpp"
#include "fate/feature_registry.hpp"
#include "fate/nn/tape.hpp"

namespace fate {

/// One sample: a set of events measured over a feature panel.
struct Sample {
  std::string sample_id;
  std::string patient_id;
  FeaturePanel panel;
  nn::Matrix<double> events;          // n x F, column j measures panel.ids[j]
  std::vector<unsigned char> labels;  // per event, 1 = blast; empty if unlabeled

  nn::Index num_events() const { return events.rows(); }
  nn::Index num_features() const { return events.cols(); }
  bool labeled() const { return !labels.empty(); }

  void validate() const {
    if (events.rows() < 1) throw DataError("EmptySample", "sample '" + sample_id + "' has no events");
    if (static_cast<std::size_t>(events.cols()) != panel.size()) {
      throw DataError("SchemaMismatch", "sample '" + sample_id + "' has " +
                                            std::to_string(events.cols()) + " columns for a panel of " +
                                            std::to_string(panel.size()));
    }
    if (!events.allFinite()) throw DataError("NonFiniteValue", "sample '" + sample_id + "'");
    if (labeled() && labels.size() != static_cast<std::size_t>(events.rows())) {
      throw DataError("LabelCountMismatch", "sample '" + sample_id + "' has " +
                                                std::to_string(labels.size()) + " labels for " +
                                                std::to_string(events.rows()) + " events");
    }
  }

  /// Fraction of events labeled positive (0 when unlabeled).
  double blast_fraction() const {
    if (!labeled()) return 0.0;
    std::size_t pos = 0;
    for (auto l : labels) pos += l ? 1 : 0;
    return static_cast<double>(pos) / static_cast<double>(labels.size());
  }
};

/// Copy of `s` restricted to the given event rows (in that order).
inline Sample select_events(const Sample& s, const std::vector<nn::Index>& rows) {
  Sample out;
  out.sample_id = s.sample_id;
  out.patient_id = s.patient_id;
  out.panel = s.panel;
  out.events.resize(static_cast<nn::Index>(rows.size()), s.events.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.events.row(static_cast<nn::Index>(i)) = s.events.row(rows[i]);
  }
  if (s.labeled()) {
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(s.labels[static_cast<std::size_t>(r)]);
  }
  return out;
}

}  // namespace fate
