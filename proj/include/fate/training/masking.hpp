#pragma once

// Per-event feature masking for masked-autoencoder pre-training.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fate/errors.hpp"
#include "fate/nn/tape.hpp"

namespace fate {

/// Number of masked features for a panel of `panel_len` under ratio `r`:
/// round-half-up of r * F, clamped so at least one feature is masked and one
/// stays visible.
inline int masked_count(int panel_len, double ratio) {
  if (panel_len < 2) {
    throw DataError("TooFewFeatures", "masking needs at least 2 features, got " +
                                          std::to_string(panel_len));
  }
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("ConfigInvalid", "masking ratio must lie in (0, 1)");
  }
  const int k = static_cast<int>(std::floor(ratio * panel_len + 0.5));
  return std::clamp(k, 1, panel_len - 1);
}

/// One event's mask row (1 = masked), positions drawn uniformly without
/// replacement.
template <class Rng>
std::vector<unsigned char> make_mask(int panel_len, double ratio, Rng& rng) {
  const int k = masked_count(panel_len, ratio);
  std::vector<int> order(static_cast<std::size_t>(panel_len));
  std::iota(order.begin(), order.end(), 0);
  std::vector<unsigned char> row(static_cast<std::size_t>(panel_len), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, panel_len - 1);
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(pick(rng))]);
    row[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  }
  return row;
}

/// Masks for every event of a sample.
struct MaskPlan {
  nn::Matrix<unsigned char> mask;  // events x F, 1 = masked
  double ratio = 0.5;
  int masked_per_event = 0;
};

template <class Rng>
MaskPlan make_mask_plan(nn::Index events, int panel_len, double ratio, Rng& rng) {
  MaskPlan plan;
  plan.ratio = ratio;
  plan.masked_per_event = masked_count(panel_len, ratio);
  plan.mask.resize(events, panel_len);
  for (nn::Index e = 0; e < events; ++e) {
    const auto row = make_mask(panel_len, ratio, rng);
    for (int j = 0; j < panel_len; ++j) plan.mask(e, j) = row[static_cast<std::size_t>(j)];
  }
  return plan;
}

}  // namespace fate
