#pragma once

#include <string>

#include <json.hpp>

#include "fate/errors.hpp"
#include "fate/model/config.hpp"

namespace fate {

enum class Phase { mae_pretrain, sup_pretrain, finetune, scratch };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::mae_pretrain: return "mae_pretrain";
    case Phase::sup_pretrain: return "sup_pretrain";
    case Phase::finetune: return "finetune";
    case Phase::scratch: return "scratch";
  }
  return "?";
}

inline Phase parse_phase(const std::string& s) {
  if (s == "mae_pretrain") return Phase::mae_pretrain;
  if (s == "sup_pretrain") return Phase::sup_pretrain;
  if (s == "finetune") return Phase::finetune;
  if (s == "scratch") return Phase::scratch;
  throw ConfigError("ConfigInvalid", "unknown phase '" + s + "'");
}

/// Phases on the target corpus run once per cross-validation split.
inline bool is_target_phase(Phase p) { return p == Phase::finetune || p == Phase::scratch; }

struct TrainConfig {
  Phase phase = Phase::scratch;
  int epochs = 400;
  int patience = 300;  // epochs without validation improvement; 0 disables
  int batch_size = 8;
  double lr_start = 1e-3;
  double lr_min = 2e-4;
  int t_max = 10;
  double mask_ratio = 0.5;
  int event_cap = 10000;      // per-sample events per training epoch; 0 keeps all
  int eval_event_cap = 0;     // per-sample events for validation; 0 keeps all
  double weight_decay = 0.01;
  double grad_clip = 0.0;     // max global gradient norm; 0 disables

  /// Defaults per phase. Fine-tuning after masked-autoencoder pre-training
  /// runs longer than after supervised pre-training alone.
  static TrainConfig defaults(Phase p, bool after_mae = true) {
    TrainConfig c;
    c.phase = p;
    switch (p) {
      case Phase::scratch:
        break;
      case Phase::finetune:
        c.epochs = after_mae ? 300 : 100;
        c.patience = after_mae ? 200 : 0;
        break;
      case Phase::sup_pretrain:
        c.epochs = 1500;
        c.patience = 0;
        c.batch_size = 32;
        c.lr_min = 2e-5;
        c.t_max = 100;
        break;
      case Phase::mae_pretrain:
        c.epochs = 2000;
        c.patience = 0;
        c.batch_size = 32;
        c.lr_min = 2e-5;
        c.t_max = 100;
        break;
    }
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("ConfigInvalid", m); };
    if (epochs < 0) fail("epochs must be >= 0");
    if (patience < 0) fail("patience must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(lr_start > 0) || !(lr_min >= 0) || lr_min > lr_start) fail("need 0 <= lr_min <= lr_start");
    if (t_max < 1) fail("t_max must be >= 1");
    if (!(mask_ratio > 0 && mask_ratio < 1)) fail("mask_ratio must lie in (0, 1)");
    if (event_cap < 0 || eval_event_cap < 0) fail("event caps must be >= 0");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (grad_clip < 0) fail("grad_clip must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"phase", phase_name(phase)},   {"epochs", epochs},
            {"patience", patience},         {"batch_size", batch_size},
            {"lr_start", lr_start},         {"lr_min", lr_min},
            {"t_max", t_max},               {"mask_ratio", mask_ratio},
            {"event_cap", event_cap},       {"eval_event_cap", eval_event_cap},
            {"weight_decay", weight_decay}, {"grad_clip", grad_clip}};
  }

  static TrainConfig from_json(const nlohmann::json& j, bool after_mae = true) {
    const std::string where = "train phase";
    detail::reject_unknown_keys(j,
                                {"phase", "epochs", "patience", "batch_size", "lr_start", "lr_min",
                                 "t_max", "mask_ratio", "event_cap", "eval_event_cap",
                                 "weight_decay", "grad_clip"},
                                where);
    std::string phase;
    if (!j.contains("phase")) throw ConfigError("ConfigInvalid", "train phase needs a 'phase'");
    detail::read_optional(j, "phase", phase, where);
    TrainConfig c = defaults(parse_phase(phase), after_mae);
    detail::read_optional(j, "epochs", c.epochs, where);
    detail::read_optional(j, "patience", c.patience, where);
    detail::read_optional(j, "batch_size", c.batch_size, where);
    detail::read_optional(j, "lr_start", c.lr_start, where);
    detail::read_optional(j, "lr_min", c.lr_min, where);
    detail::read_optional(j, "t_max", c.t_max, where);
    detail::read_optional(j, "mask_ratio", c.mask_ratio, where);
    detail::read_optional(j, "event_cap", c.event_cap, where);
    detail::read_optional(j, "eval_event_cap", c.eval_event_cap, where);
    detail::read_optional(j, "weight_decay", c.weight_decay, where);
    detail::read_optional(j, "grad_clip", c.grad_clip, where);
    c.validate();
    return c;
  }
};

}  // namespace fate
