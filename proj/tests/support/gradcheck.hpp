#pragma once

// Central finite-difference oracle for tape gradients (64-bit).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fate/nn/tape.hpp"

namespace fate::testing {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t entries = 0;
};

using NamedParams = std::vector<std::pair<std::string, nn::Parameter<double>*>>;
using LossBuilder = std::function<nn::Var<double>(nn::Tape<double>&)>;

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
/// whose true gradient is ~0 from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckReport gradcheck(const NamedParams& params, const LossBuilder& build,
                                 double eps = 1e-5) {
  for (auto& [name, p] : params) p->zero_grad();
  {
    nn::Tape<double> tape;
    tape.backward(build(tape));
  }
  GradCheckReport report;
  for (auto& [name, p] : params) {
    for (nn::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double orig = x;
      x = orig + eps;
      double up;
      {
        nn::Tape<double> tape(false);
        up = build(tape).value()(0, 0);
      }
      x = orig - eps;
      double down;
      {
        nn::Tape<double> tape(false);
        down = build(tape).value()(0, 0);
      }
      x = orig;
      const double numeric = (up - down) / (2 * eps);
      const double err = relative_error(p->grad.data()[i], numeric);
      ++report.entries;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_entry = name + "[" + std::to_string(i) + "] analytic=" +
                             std::to_string(p->grad.data()[i]) +
                             " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace fate::testing
