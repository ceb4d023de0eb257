#pragma once

// Per-sample precision / recall / F1 with blasts as the positive class.

#include <cmath>
#include <string>
#include <vector>

#include "fate/errors.hpp"

namespace fate {

struct SampleMetrics {
  std::string sample_id;
  long tp = 0, fp = 0, fn = 0;
  double p = 0.0, r = 0.0, f1 = 0.0;
};

/// Fills p, r, f1 from the counts. A sample without positives that gets no
/// positive predictions scores 1 everywhere.
inline void finalize(SampleMetrics& m) {
  const long pred_pos = m.tp + m.fp;
  const long true_pos = m.tp + m.fn;
  m.p = pred_pos == 0 ? (true_pos == 0 ? 1.0 : 0.0) : static_cast<double>(m.tp) / pred_pos;
  m.r = true_pos == 0 ? (pred_pos == 0 ? 1.0 : 0.0) : static_cast<double>(m.tp) / true_pos;
  m.f1 = m.p + m.r == 0.0 ? 0.0 : 2.0 * m.p * m.r / (m.p + m.r);
}

inline SampleMetrics metrics_from_counts(long tp, long fp, long fn) {
  SampleMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  finalize(m);
  return m;
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// An event is positive iff sigmoid(logit) > threshold.
inline SampleMetrics score_sample(const std::vector<double>& logits,
                                  const std::vector<unsigned char>& labels, double threshold,
                                  std::string sample_id = {}) {
  if (labels.empty() && !logits.empty()) {
    throw DataError("MissingLabels", "sample '" + sample_id + "' has no labels");
  }
  if (labels.size() != logits.size()) {
    throw DataError("LabelCountMismatch", "sample '" + sample_id + "': " +
                                              std::to_string(logits.size()) + " logits, " +
                                              std::to_string(labels.size()) + " labels");
  }
  SampleMetrics m;
  m.sample_id = std::move(sample_id);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool pred = sigmoid(logits[i]) > threshold;
    const bool truth = labels[i] != 0;
    m.tp += pred && truth;
    m.fp += pred && !truth;
    m.fn += !pred && truth;
  }
  finalize(m);
  return m;
}

/// Unweighted means over samples.
struct CorpusMetrics {
  std::vector<SampleMetrics> samples;
  double mean_p = 0.0, mean_r = 0.0, mean_f1 = 0.0;
};

inline CorpusMetrics aggregate(std::vector<SampleMetrics> samples) {
  CorpusMetrics c;
  c.samples = std::move(samples);
  if (c.samples.empty()) return c;
  for (const auto& s : c.samples) {
    c.mean_p += s.p;
    c.mean_r += s.r;
    c.mean_f1 += s.f1;
  }
  const double n = static_cast<double>(c.samples.size());
  c.mean_p /= n;
  c.mean_r /= n;
  c.mean_f1 /= n;
  return c;
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

}  // namespace fate
