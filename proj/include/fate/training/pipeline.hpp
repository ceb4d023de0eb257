#pragma once

// Phase pipeline: optional pre-training phases on the pre-training corpora,
// then one target phase (fine-tune or from-scratch) per patient
// cross-validation split with early stopping on validation F1. Everything
// repeats per seed; test metrics are reported per split and aggregated as
// mean and sample standard deviation over seeds.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fate/feature_registry.hpp"
#include "fate/model/baseline.hpp"
#include "fate/model/fate_model.hpp"
#include "fate/training/checkpoint.hpp"
#include "fate/training/cv.hpp"
#include "fate/training/metrics.hpp"
#include "fate/training/optim.hpp"
#include "fate/training/steps.hpp"
#include "fate/training/train_config.hpp"

namespace fate {

enum class ModelKind { fate, baseline };

struct RunConfig {
  ModelKind kind = ModelKind::fate;
  FateConfig model;
  BaselineConfig baseline;
  std::vector<TrainConfig> phases = {TrainConfig::defaults(Phase::scratch)};
  std::uint64_t seed = 1;
  int num_seeds = 1;
  double val_ratio = 0.2;
  std::uint64_t split_seed = 0;  // fixes the CV assignment across seeds
  double threshold = 0.5;
  // Data locations (used by the command-line front end).
  std::string target_manifest;
  std::vector<std::string> pretrain_manifests;
  std::map<std::string, std::string> aliases;

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < num_seeds; ++i) s.push_back(seed + static_cast<std::uint64_t>(i));
    return s;
  }

  bool has_pretraining() const {
    for (const auto& p : phases) {
      if (!is_target_phase(p.phase)) return true;
    }
    return false;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("ConfigInvalid", m); };
    if (phases.empty()) fail("train needs at least one phase");
    if (num_seeds < 1) fail("num_seeds must be >= 1");
    if (!(val_ratio >= 0 && val_ratio < 1)) fail("val_ratio must lie in [0, 1)");
    if (!(threshold > 0 && threshold < 1)) fail("threshold must lie in (0, 1)");
    for (std::size_t i = 0; i < phases.size(); ++i) {
      const Phase p = phases[i].phase;
      phases[i].validate();
      if (is_target_phase(p) && i + 1 != phases.size()) {
        fail(std::string(phase_name(p)) + " must be the last phase");
      }
      if (p == Phase::scratch && i != 0) fail("scratch cannot follow other phases");
      if (p == Phase::mae_pretrain && kind == ModelKind::baseline) {
        fail("the baseline model has no decoder for mae_pretrain");
      }
    }
    if (kind == ModelKind::fate) {
      model.validate();
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json train = nlohmann::json::array();
    for (const auto& p : phases) train.push_back(p.to_json());
    nlohmann::json m = kind == ModelKind::fate ? model.to_json() : baseline.to_json();
    m["kind"] = kind == ModelKind::fate ? "fate" : "baseline";
    return {{"seed", seed},
            {"num_seeds", num_seeds},
            {"data",
             {{"target", target_manifest},
              {"pretrain", pretrain_manifests},
              {"val_ratio", val_ratio},
              {"split_seed", split_seed}}},
            {"registry", {{"aliases", aliases}}},
            {"model", m},
            {"train", train},
            {"eval", {{"threshold", threshold}}}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::reject_unknown_keys(j, {"seed", "num_seeds", "data", "registry", "model", "train", "eval"},
                                "run config");
    detail::read_optional(j, "seed", c.seed, "run config");
    detail::read_optional(j, "num_seeds", c.num_seeds, "run config");
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::reject_unknown_keys(d, {"target", "pretrain", "val_ratio", "split_seed"}, "data");
      detail::read_optional(d, "target", c.target_manifest, "data");
      detail::read_optional(d, "pretrain", c.pretrain_manifests, "data");
      detail::read_optional(d, "val_ratio", c.val_ratio, "data");
      detail::read_optional(d, "split_seed", c.split_seed, "data");
    }
    if (j.contains("registry")) {
      const auto& r = j.at("registry");
      detail::reject_unknown_keys(r, {"aliases"}, "registry");
      detail::read_optional(r, "aliases", c.aliases, "registry");
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      std::string kind = "fate";
      if (m.is_object()) detail::read_optional(m, "kind", kind, "model");
      if (kind == "fate") {
        c.kind = ModelKind::fate;
        c.model = FateConfig::from_json(m);
      } else if (kind == "baseline") {
        c.kind = ModelKind::baseline;
        c.baseline = BaselineConfig::from_json(m);
      } else {
        throw ConfigError("ConfigInvalid", "model kind must be 'fate' or 'baseline'");
      }
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (!t.is_array()) throw ConfigError("ConfigInvalid", "train must be a list of phases");
      c.phases.clear();
      bool after_mae = false;
      for (const auto& p : t) {
        c.phases.push_back(TrainConfig::from_json(p, after_mae));
        after_mae = after_mae || c.phases.back().phase == Phase::mae_pretrain;
      }
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      detail::reject_unknown_keys(e, {"threshold"}, "eval");
      detail::read_optional(e, "threshold", c.threshold, "eval");
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Model plumbing shared by both architectures

using TrainScalar = float;

template <class Model>
std::vector<nn::Parameter<TrainScalar>*> trainable_parameters(Model& model, Phase phase) {
  std::vector<nn::Parameter<TrainScalar>*> out;
  auto add = [&](const std::string&, nn::Parameter<TrainScalar>& p) { out.push_back(&p); };
  if constexpr (std::is_same_v<Model, FateModel<TrainScalar>>) {
    model.visit_encoder(add);
    if (phase == Phase::mae_pretrain) {
      model.visit_decoder(add);
    } else {
      model.visit_head(add);
    }
  } else {
    (void)phase;
    model.visit(add);
  }
  return out;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ull + stream;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t string_seed(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// The fixed event subsample used whenever `s` is evaluated with an event
/// cap; it depends only on the sample ID, so replays see the same events.
inline Sample eval_subsample(const Sample& s, int cap) {
  std::mt19937_64 rng(string_seed(s.sample_id));
  return subsample_events(s, cap, rng);
}

template <class Model>
CorpusMetrics evaluate(Model& model, const std::vector<const Sample*>& samples, double threshold) {
  std::vector<SampleMetrics> per;
  for (const Sample* s : samples) {
    per.push_back(score_sample(predict_logits(model, *s), s->labels, threshold, s->sample_id));
  }
  return aggregate(std::move(per));
}

template <class Model>
CorpusMetrics evaluate(Model& model, const std::vector<Sample>& samples, double threshold) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return evaluate(model, ptrs, threshold);
}

// ---------------------------------------------------------------------------
// Results

struct EpochRecord {
  std::uint64_t seed = 0;
  std::string split;  // held-out patient; empty for pre-training phases
  Phase phase = Phase::scratch;
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_f1;
  double lr = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"epoch", epoch},
                        {"phase", phase_name(phase)},
                        {"train_loss", train_loss},
                        {"val_f1", val_f1 ? nlohmann::json(*val_f1) : nlohmann::json(nullptr)},
                        {"lr", lr},
                        {"seed", seed}};
    if (!split.empty()) j["split"] = split;
    return j;
  }
};

struct SplitResult {
  CvSplit split;
  double best_val_f1 = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = -1;
  int epochs_run = 0;
  CorpusMetrics test;
  Checkpoint checkpoint;
  std::vector<EpochRecord> log;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<SplitResult> splits;
  std::optional<Checkpoint> pretrain_checkpoint;
  // Pooled over every test sample of every split (each target sample is
  // tested exactly once), and the plain mean of per-split means.
  double test_p = 0.0, test_r = 0.0, test_f1 = 0.0;
  double split_mean_f1 = 0.0;
};

struct PipelineResult {
  std::vector<SeedResult> seeds;
  std::vector<EpochRecord> log;
  MeanStd f1, p, r;

  nlohmann::json report(const RunConfig& config) const {
    nlohmann::json seeds_json = nlohmann::json::array();
    for (const auto& s : seeds) {
      nlohmann::json splits = nlohmann::json::array();
      for (const auto& sp : s.splits) {
        nlohmann::json samples = nlohmann::json::array();
        for (const auto& m : sp.test.samples) {
          samples.push_back({{"sample_id", m.sample_id},
                             {"tp", m.tp},
                             {"fp", m.fp},
                             {"fn", m.fn},
                             {"p", m.p},
                             {"r", m.r},
                             {"f1", m.f1}});
        }
        splits.push_back({{"held_out_patient", sp.split.held_out_patient},
                          {"train", sp.split.train},
                          {"val", sp.split.val},
                          {"test", sp.split.test},
                          {"best_val_f1", std::isnan(sp.best_val_f1) ? nlohmann::json(nullptr)
                                                                     : nlohmann::json(sp.best_val_f1)},
                          {"best_epoch", sp.best_epoch},
                          {"epochs_run", sp.epochs_run},
                          {"test_mean", {{"p", sp.test.mean_p}, {"r", sp.test.mean_r}, {"f1", sp.test.mean_f1}}},
                          {"test_samples", samples}});
      }
      seeds_json.push_back({{"seed", s.seed},
                            {"test", {{"p", s.test_p}, {"r", s.test_r}, {"f1", s.test_f1}}},
                            {"split_mean_f1", s.split_mean_f1},
                            {"splits", splits}});
    }
    return {{"config", config.to_json()},
            {"seeds", seeds_json},
            {"aggregate",
             {{"f1", {{"mean", f1.mean}, {"std", f1.std}}},
              {"p", {{"mean", p.mean}, {"std", p.std}}},
              {"r", {{"mean", r.mean}, {"std", r.std}}},
              {"num_seeds", seeds.size()}}}};
  }
};

struct PipelineOptions {
  int jobs = 1;
  /// Called for every finished epoch (serialized).
  std::function<void(const EpochRecord&)> on_epoch;
};

// ---------------------------------------------------------------------------
// Training loops

namespace pipeline_detail {

inline void check_finite(double loss, Phase phase, int epoch) {
  if (!std::isfinite(loss)) {
    throw TrainingError("Divergence", std::string(phase_name(phase)) + " loss is not finite at epoch " +
                                          std::to_string(epoch));
  }
}

/// One epoch over `corpus` in shuffled batches; returns the mean batch loss.
template <class Model, class Rng>
double run_epoch(Model& model, AdamW<TrainScalar>& opt, const TrainConfig& tc,
                 const std::vector<const Sample*>& corpus, double lr, Rng& rng) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  double total = 0.0;
  int batches = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
    std::vector<Sample> views;
    views.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      views.push_back(subsample_events(*corpus[order[i]], tc.event_cap, rng));
    }
    std::vector<const Sample*> batch;
    for (const auto& v : views) batch.push_back(&v);
    opt.zero_grad();
    BatchLoss loss;
    if (tc.phase == Phase::mae_pretrain) {
      if constexpr (std::is_same_v<Model, FateModel<TrainScalar>>) {
        loss = mae_step(model, batch, tc.mask_ratio, rng);
      }
    } else {
      loss = supervised_step<TrainScalar>(model, batch);
    }
    check_finite(loss.value, tc.phase, 0);
    if (tc.grad_clip > 0) opt.clip_grad_norm(tc.grad_clip);
    opt.step(lr);
    total += loss.value;
    ++batches;
  }
  return batches ? total / batches : 0.0;
}

template <class Model>
void pretrain_phase(Model& model, const TrainConfig& tc, const std::vector<const Sample*>& corpus,
                    std::uint64_t seed, std::uint64_t stream, std::vector<EpochRecord>& log,
                    const std::function<void(const EpochRecord&)>& on_epoch) {
  if (corpus.empty()) {
    throw DataError("EmptyCorpus", std::string(phase_name(tc.phase)) + " needs pre-training samples");
  }
  std::mt19937_64 rng(derive_seed(seed, stream));
  AdamW<TrainScalar> opt(trainable_parameters(model, tc.phase), {0.9, 0.999, 1e-8, tc.weight_decay});
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tc.lr_start, tc.lr_min, tc.t_max);
    const double loss = run_epoch(model, opt, tc, corpus, lr, rng);
    check_finite(loss, tc.phase, epoch);
    EpochRecord rec{seed, "", tc.phase, epoch, loss, std::nullopt, lr};
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
}

}  // namespace pipeline_detail

/// Supervised training on one split with early stopping on mean validation
/// F1 (strict improvement). The returned model holds the best weights.
template <class Model>
SplitResult train_split(Model model, const TrainConfig& tc, const CvSplit& split,
                        const std::map<std::string, const Sample*>& by_id, double threshold,
                        std::uint64_t seed, std::uint64_t stream,
                        const std::function<void(const EpochRecord&)>& on_epoch, Model* best_out) {
  SplitResult res;
  res.split = split;
  auto lookup = [&](const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("UnknownSample", "sample '" + id + "' is not loaded");
    return it->second;
  };
  std::vector<const Sample*> train;
  for (const auto& id : split.train) train.push_back(lookup(id));
  std::vector<Sample> val;
  for (const auto& id : split.val) val.push_back(eval_subsample(*lookup(id), tc.eval_event_cap));
  if (train.empty()) throw DataError("EmptyCorpus", "split " + split.held_out_patient + " has no training samples");

  std::mt19937_64 rng(derive_seed(seed, stream));
  AdamW<TrainScalar> opt(trainable_parameters(model, tc.phase), {0.9, 0.999, 1e-8, tc.weight_decay});
  Model best = model;
  double best_f1 = -std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tc.lr_start, tc.lr_min, tc.t_max);
    const double loss = pipeline_detail::run_epoch(model, opt, tc, train, lr, rng);
    pipeline_detail::check_finite(loss, tc.phase, epoch);
    EpochRecord rec{seed, split.held_out_patient, tc.phase, epoch, loss, std::nullopt, lr};
    res.epochs_run = epoch + 1;
    if (!val.empty()) {
      const double f1 = evaluate(model, val, threshold).mean_f1;
      rec.val_f1 = f1;
      if (f1 > best_f1) {
        best_f1 = f1;
        best = model;
        res.best_epoch = epoch;
        stale = 0;
      } else {
        ++stale;
      }
    } else {
      best = model;
      res.best_epoch = epoch;
    }
    res.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (tc.patience > 0 && stale >= tc.patience) break;
  }
  if (!val.empty() && res.best_epoch >= 0) res.best_val_f1 = best_f1;
  std::vector<const Sample*> test;
  for (const auto& id : split.test) test.push_back(lookup(id));
  res.test = evaluate(best, test, threshold);
  if (best_out) *best_out = std::move(best);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint helpers

template <class Model>
void store_model(Checkpoint& c, Model& model) {
  store_parameters<TrainScalar>(c, [&](auto&& f) { model.visit(f); });
}

inline nlohmann::json checkpoint_meta(const RunConfig& config, const FeatureRegistry& registry,
                                      std::uint64_t seed, const std::vector<std::string>& phases_done) {
  nlohmann::json model = config.kind == ModelKind::fate ? config.model.to_json()
                                                        : config.baseline.to_json();
  model["kind"] = config.kind == ModelKind::fate ? "fate" : "baseline";
  nlohmann::json train = nlohmann::json::array();
  for (const auto& p : config.phases) train.push_back(p.to_json());
  return {{"model", model},
          {"train", train},
          {"registry", registry.to_json()},
          {"phases", phases_done},
          {"seed", seed},
          {"threshold", config.threshold}};
}

/// A model restored from a checkpoint together with its registry.
struct LoadedModel {
  ModelKind kind = ModelKind::fate;
  FateModel<TrainScalar> fate;
  BaselineModel<TrainScalar> baseline;
  FeatureRegistry registry;
  nlohmann::json meta;

  std::vector<double> predict(const Sample& s) {
    return kind == ModelKind::fate ? predict_logits(fate, s) : predict_logits(baseline, s);
  }
  nn::Matrix<TrainScalar> embed(const Sample& s) {
    if (kind != ModelKind::fate) throw ConfigError("ConfigInvalid", "embedding export needs a FATE model");
    return embed_events(fate, s);
  }
  int embedding_dim() const { return fate.config.embedding_dim; }
};

inline LoadedModel load_model(const Checkpoint& c) {
  LoadedModel m;
  m.meta = c.meta;
  try {
    m.registry = FeatureRegistry::from_json(c.meta.at("registry"));
    const auto& model = c.meta.at("model");
    const std::string kind = model.value("kind", std::string("fate"));
    if (kind == "fate") {
      m.kind = ModelKind::fate;
      m.fate = FateModel<TrainScalar>(FateConfig::from_json(model),
                                      static_cast<Index>(m.registry.size()), 0);
      restore_parameters<TrainScalar>(c, [&](auto&& f) { m.fate.visit(f); });
    } else if (kind == "baseline") {
      m.kind = ModelKind::baseline;
      BaselineConfig bc = BaselineConfig::from_json(model);
      m.baseline = BaselineModel<TrainScalar>(bc, 0);
      restore_parameters<TrainScalar>(c, [&](auto&& f) { m.baseline.visit(f); });
    } else {
      throw DataError("CheckpointInvalid", "unknown model kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("CheckpointInvalid", e.what());
  }
  m.registry.freeze();
  return m;
}

// ---------------------------------------------------------------------------
// Whole pipeline

namespace pipeline_detail {

template <class Model>
SeedResult run_seed(const RunConfig& config, Model model, const FeatureRegistry& registry,
                    const std::vector<const Sample*>& pretrain,
                    const std::map<std::string, const Sample*>& by_id,
                    const std::vector<CvSplit>& splits, std::uint64_t seed,
                    const PipelineOptions& opts, std::vector<EpochRecord>& log, std::mutex& mu) {
  SeedResult out;
  out.seed = seed;
  std::vector<std::string> done;
  auto serialized = [&](const EpochRecord& r) {
    std::lock_guard<std::mutex> lock(mu);
    if (opts.on_epoch) opts.on_epoch(r);
  };

  const TrainConfig* target = nullptr;
  for (std::size_t i = 0; i < config.phases.size(); ++i) {
    const TrainConfig& tc = config.phases[i];
    if (is_target_phase(tc.phase)) {
      target = &tc;
      break;
    }
    std::vector<const Sample*> corpus;
    if (tc.phase == Phase::sup_pretrain) {
      for (const Sample* s : pretrain) {
        if (!s->labeled()) throw DataError("MissingLabels", "sup_pretrain sample '" + s->sample_id + "'");
      }
    }
    corpus = pretrain;
    pretrain_phase(model, tc, corpus, seed, 100 + i, log, serialized);
    done.push_back(phase_name(tc.phase));
  }
  if (!done.empty()) {
    Checkpoint c;
    c.meta = checkpoint_meta(config, registry, seed, done);
    store_model(c, model);
    out.pretrain_checkpoint = std::move(c);
  }
  if (!target) return out;

  out.splits.resize(splits.size());
  std::vector<std::vector<EpochRecord>> split_logs(splits.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(splits.size());
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= splits.size()) return;
      try {
        Model best;
        SplitResult r = train_split(model, *target, splits[i], by_id, config.threshold, seed,
                                    1000 + i, serialized, &best);
        std::vector<std::string> phases = done;
        phases.push_back(phase_name(target->phase));
        r.checkpoint.meta = checkpoint_meta(config, registry, seed, phases);
        r.checkpoint.meta["split"] = {{"held_out_patient", splits[i].held_out_patient},
                                      {"train", splits[i].train},
                                      {"val", splits[i].val},
                                      {"test", splits[i].test}};
        r.checkpoint.meta["best_val_f1"] =
            std::isnan(r.best_val_f1) ? nlohmann::json(nullptr) : nlohmann::json(r.best_val_f1);
        r.checkpoint.meta["best_epoch"] = r.best_epoch;
        r.checkpoint.meta["eval_event_cap"] = target->eval_event_cap;
        store_model(r.checkpoint, best);
        out.splits[i] = std::move(r);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(splits.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<SampleMetrics> pooled;
  double split_sum = 0.0;
  for (auto& s : out.splits) {
    for (const auto& m : s.test.samples) pooled.push_back(m);
    split_sum += s.test.mean_f1;
    for (auto& rec : s.log) log.push_back(rec);
  }
  const CorpusMetrics all = aggregate(std::move(pooled));
  out.test_p = all.mean_p;
  out.test_r = all.mean_r;
  out.test_f1 = all.mean_f1;
  out.split_mean_f1 = out.splits.empty() ? 0.0 : split_sum / static_cast<double>(out.splits.size());
  return out;
}

}  // namespace pipeline_detail

/// Runs the configured phases for every seed. `pretrain` feeds the
/// pre-training phases; `target` is split by patient for the final phase.
/// The registry must already cover every panel.
inline PipelineResult run_pipeline(const RunConfig& config, const FeatureRegistry& registry,
                                   const std::vector<Sample>& pretrain,
                                   const std::vector<Sample>& target,
                                   const PipelineOptions& opts = {}) {
  config.validate();
  std::vector<const Sample*> pre;
  for (const auto& s : pretrain) pre.push_back(&s);
  std::map<std::string, const Sample*> by_id;
  std::vector<SampleRef> refs;
  for (const auto& s : target) {
    if (!by_id.emplace(s.sample_id, &s).second) {
      throw DataError("DuplicateSample", "sample id '" + s.sample_id + "' appears twice");
    }
    refs.push_back({s.sample_id, s.patient_id});
  }
  bool has_target = false;
  for (const auto& p : config.phases) has_target = has_target || is_target_phase(p.phase);
  std::vector<CvSplit> splits;
  if (has_target) {
    std::mt19937_64 split_rng(derive_seed(config.split_seed, 7));
    splits = patient_cv(refs, config.val_ratio, split_rng);
  }

  PipelineResult result;
  std::mutex mu;
  std::vector<double> f1s, ps, rs;
  for (std::uint64_t seed : config.seeds()) {
    SeedResult sr;
    const std::uint64_t init_seed = derive_seed(seed, 1);
    if (config.kind == ModelKind::fate) {
      FateModel<TrainScalar> model(config.model, static_cast<Index>(registry.size()), init_seed);
      sr = pipeline_detail::run_seed(config, std::move(model), registry, pre, by_id, splits, seed,
                                     opts, result.log, mu);
    } else {
      BaselineConfig bc = config.baseline;
      if (bc.panel.empty()) bc.resolve(registry);
      RunConfig resolved = config;
      resolved.baseline = bc;
      BaselineModel<TrainScalar> model(bc, init_seed);
      sr = pipeline_detail::run_seed(resolved, std::move(model), registry, pre, by_id, splits, seed,
                                     opts, result.log, mu);
    }
    if (has_target) {
      f1s.push_back(sr.test_f1);
      ps.push_back(sr.test_p);
      rs.push_back(sr.test_r);
    }
    result.seeds.push_back(std::move(sr));
  }
  result.f1 = mean_std(f1s);
  result.p = mean_std(ps);
  result.r = mean_std(rs);
  return result;
}

}  // namespace fate
