#pragma once

// Leave-one-patient-out cross-validation. Each patient is the test set of
// one split; the remaining patients are divided between train and
// validation, whole patients at a time.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fate/errors.hpp"

namespace fate {

struct CvSplit {
  std::string held_out_patient;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct SampleRef {
  std::string sample_id;
  std::string patient_id;
};

/// Splits in order of first patient appearance. The validation patients are
/// chosen greedily from a shuffled order so their sample count lands as
/// close as possible to `val_ratio` of the remaining samples; at least one
/// patient stays in train, and validation is non-empty whenever two or more
/// patients remain.
template <class Rng>
std::vector<CvSplit> patient_cv(const std::vector<SampleRef>& samples, double val_ratio,
                                Rng& rng) {
  std::vector<std::string> patients;
  std::map<std::string, std::vector<std::string>> by_patient;
  for (const auto& s : samples) {
    auto [it, inserted] = by_patient.try_emplace(s.patient_id);
    if (inserted) patients.push_back(s.patient_id);
    it->second.push_back(s.sample_id);
  }
  if (patients.size() < 2) {
    throw DataError("TooFewPatients", "patient cross-validation needs at least 2 patients, got " +
                                          std::to_string(patients.size()));
  }
  if (!(val_ratio >= 0.0 && val_ratio < 1.0)) {
    throw ConfigError("ConfigInvalid", "val_ratio must lie in [0, 1)");
  }

  std::vector<CvSplit> splits;
  for (const auto& held : patients) {
    CvSplit split;
    split.held_out_patient = held;
    split.test = by_patient[held];

    std::vector<std::string> rest;
    std::size_t rest_samples = 0;
    for (const auto& p : patients) {
      if (p == held) continue;
      rest.push_back(p);
      rest_samples += by_patient[p].size();
    }
    std::shuffle(rest.begin(), rest.end(), rng);

    const double target = val_ratio * static_cast<double>(rest_samples);
    std::vector<bool> in_val(rest.size(), false);
    double val_count = 0.0;
    std::size_t val_patients = 0;
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (val_patients + 1 >= rest.size()) break;
      const double c = static_cast<double>(by_patient[rest[i]].size());
      const bool first = val_patients == 0 && val_ratio > 0.0;
      if (first || std::abs(val_count + c - target) < std::abs(val_count - target)) {
        in_val[i] = true;
        val_count += c;
        ++val_patients;
      }
    }
    for (std::size_t i = 0; i < rest.size(); ++i) {
      auto& dst = in_val[i] ? split.val : split.train;
      for (const auto& id : by_patient[rest[i]]) dst.push_back(id);
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

}  // namespace fate
