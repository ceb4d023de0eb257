// Command-line front end: parse-fcs, gen-synth, train, evaluate, embed.
//
// Exit codes: 0 success, 2 usage/config/data error, 3 training failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fate/data/fcs.hpp"
#include "fate/data/manifest.hpp"
#include "fate/data/synth.hpp"
#include "fate/data/transform.hpp"
#include "fate/errors.hpp"
#include "fate/training/checkpoint.hpp"
#include "fate/training/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitTraining = 3;

/// Collects the files a command writes under its --out directory and emits
/// them as outputs.json at the end.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  const fs::path& root() const { return root_; }

  void write(const std::string& rel, const std::string& content) {
    fate::write_file(root_ / rel, content);
    add(rel);
  }
  void add(const std::string& rel) {
    if (seen_.insert(rel).second) files_.push_back(rel);
  }

  void finish() {
    json j = {{"files", files_}};
    fate::write_file(root_ / "outputs.json", j.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
  std::set<std::string> seen_;
};

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("FATE_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw fate::ConfigError("ConfigInvalid", std::string("FATE_SEED is not an unsigned integer: '") + v + "'");
  }
}

json read_json(const fs::path& path, const char* kind) {
  try {
    return json::parse(fate::read_file(path));
  } catch (const json::exception& e) {
    throw fate::ConfigError(kind, path.string() + ": " + e.what());
  }
}

fate::TransformSpec transform_arg(const std::string& arg) {
  if (arg.empty() || arg == "default") return fate::TransformSpec{};
  if (arg == "identity") return fate::TransformSpec::identity();
  return fate::TransformSpec::from_json(read_json(arg, "TransformInvalid"));
}

std::string pad_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

// ---------------------------------------------------------------------------

int cmd_parse_fcs(const std::string& path, const std::string& out, const std::string& transform) {
  fate::FcsFile f = fate::parse_fcs(fate::read_file(path));
  const fate::TransformSpec spec = transform_arg(transform);
  json channels = json::array();
  for (const auto& c : f.data.channels) {
    channels.push_back({{"name", c.name},
                        {"stain", c.stain ? json(*c.stain) : json(nullptr)},
                        {"feature", c.feature_name()}});
  }
  json keywords = json::object();
  for (const auto& [k, v] : f.text.keywords) keywords[k] = v;
  const auto events = f.data.values.rows();
  fate::RawEventMatrix m = fate::apply_transforms(std::move(f.data), spec);

  std::vector<std::string> header;
  for (const auto& c : m.channels) header.push_back(c.feature_name());
  OutputDir dir(out);
  const std::string stem = fs::path(path).stem().string();
  dir.write(stem + ".csv", fate::to_csv(m.values, header));
  const json meta = {{"source", fs::path(path).filename().string()},
                     {"version", f.header.version},
                     {"events", events},
                     {"channels", channels},
                     {"transform", transform.empty() ? "default" : transform},
                     {"keywords", keywords},
                     {"warnings", f.warnings}};
  dir.write(stem + ".json", meta.dump(2) + "\n");
  dir.finish();
  for (const auto& w : f.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << events << " events x " << header.size() << " channels to "
            << (dir.root() / (stem + ".csv")).string() << "\n";
  return 0;
}

int cmd_gen_synth(const std::string& spec_path, const std::string& out) {
  fate::SynthSpec spec = spec_path.empty() ? fate::SynthSpec{}
                                           : fate::SynthSpec::from_json(read_json(spec_path, "SpecInvalid"));
  if (auto s = env_seed()) spec.seed = *s;
  spec.validate();
  const fate::SynthCorpus c = fate::gen_corpus(spec);
  OutputDir dir(out);
  for (const auto& f : fate::write_corpus(c.target, c.registry, dir.root() / "target")) dir.add("target/" + f);
  if (!c.pretrain.empty()) {
    for (const auto& f : fate::write_corpus(c.pretrain, c.registry, dir.root() / "pretrain")) {
      dir.add("pretrain/" + f);
    }
  }
  dir.write("registry.json", c.registry.to_json().dump(2) + "\n");
  dir.write("spec.json", spec.to_json().dump(2) + "\n");
  const json report = {{"target", fate::corpus_report(c.target, c.registry).to_json()},
                       {"pretrain", fate::corpus_report(c.pretrain, c.registry).to_json()}};
  dir.write("report.json", report.dump(2) + "\n");
  dir.finish();
  std::cout << "wrote " << c.target.size() << " target and " << c.pretrain.size()
            << " pre-training samples to " << dir.root().string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, int jobs) {
  const json raw = read_json(config_path, "ConfigInvalid");
  fate::RunConfig config = fate::RunConfig::from_json(raw);
  if (auto s = env_seed()) config.seed = *s;
  const fs::path base = fs::path(config_path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  fate::FeatureRegistry registry;
  for (const auto& [from, to] : config.aliases) registry.add_alias(from, to);
  std::vector<fate::Sample> pretrain;
  for (const auto& m : config.pretrain_manifests) {
    auto loaded = fate::load_samples(fate::load_manifest(resolve(m)), registry);
    for (auto& s : loaded) pretrain.push_back(std::move(s));
  }
  std::vector<fate::Sample> target;
  if (!config.target_manifest.empty()) {
    target = fate::load_samples(fate::load_manifest(resolve(config.target_manifest)), registry);
  }
  registry.freeze();

  OutputDir dir(out);
  dir.write("config.json", config.to_json().dump(2) + "\n");
  dir.write("registry.json", registry.to_json().dump(2) + "\n");
  std::ofstream log(dir.root() / "train_log.jsonl", std::ios::trunc);
  if (!log) throw fate::DataError("IoError", "cannot write train_log.jsonl");
  dir.add("train_log.jsonl");

  fate::PipelineOptions opts;
  opts.jobs = jobs;
  opts.on_epoch = [&](const fate::EpochRecord& r) { log << r.to_json().dump() << "\n" << std::flush; };
  const fate::PipelineResult result = fate::run_pipeline(config, registry, pretrain, target, opts);

  fs::create_directories(dir.root() / "checkpoints");
  for (const auto& s : result.seeds) {
    const std::string prefix = "checkpoints/seed" + std::to_string(s.seed);
    if (s.pretrain_checkpoint) {
      fate::save_checkpoint(*s.pretrain_checkpoint, (dir.root() / (prefix + "_pretrain.ckpt")).string());
      dir.add(prefix + "_pretrain.ckpt");
    }
    for (const auto& sp : s.splits) {
      const std::string rel = prefix + "_split_" + pad_name(sp.split.held_out_patient) + ".ckpt";
      fate::save_checkpoint(sp.checkpoint, (dir.root() / rel).string());
      dir.add(rel);
    }
  }
  dir.write("report.json", result.report(config).dump(2) + "\n");
  dir.finish();
  if (!target.empty() && !result.seeds.empty() && !result.seeds.front().splits.empty()) {
    std::cout << "test F1 " << result.f1.mean << " +/- " << result.f1.std << " over "
              << result.seeds.size() << " seed(s)\n";
  } else {
    std::cout << "pre-training finished\n";
  }
  return 0;
}

/// Loads the manifest's samples through the checkpoint's frozen registry and
/// keeps those named by `subset` ("all", or "train"/"val"/"test" of the
/// checkpoint's split).
std::vector<fate::Sample> load_for_checkpoint(fate::LoadedModel& model, const std::string& data,
                                              const std::string& subset) {
  fate::FeatureRegistry registry = model.registry;
  auto samples = fate::load_samples(fate::load_manifest(data), registry);
  if (subset == "all") return samples;
  if (!model.meta.contains("split")) {
    throw fate::ConfigError("ConfigInvalid", "--subset " + subset + " needs a per-split checkpoint");
  }
  const auto ids = model.meta.at("split").at(subset).get<std::vector<std::string>>();
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<fate::Sample> out;
  for (auto& s : samples) {
    if (wanted.count(s.sample_id)) out.push_back(std::move(s));
  }
  if (out.size() != wanted.size()) {
    throw fate::DataError("UnknownSample", "the manifest lacks samples of the checkpoint's " + subset + " set");
  }
  return out;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data, const std::string& out,
                 const std::string& subset, std::optional<double> threshold_arg,
                 std::optional<int> cap_arg) {
  fate::LoadedModel model = fate::load_model(fate::load_checkpoint(ckpt));
  const double threshold = threshold_arg.value_or(model.meta.value("threshold", 0.5));
  if (!(threshold > 0 && threshold < 1)) throw fate::ConfigError("ConfigInvalid", "threshold must lie in (0, 1)");
  // Validation F1 is computed on a fixed event subsample; replay it by default.
  const int cap = cap_arg.value_or(model.meta.value("eval_event_cap", 0));
  std::vector<fate::Sample> samples = load_for_checkpoint(model, data, subset);
  std::vector<fate::SampleMetrics> per;
  for (const auto& raw : samples) {
    if (!raw.labeled()) throw fate::DataError("MissingLabels", "sample '" + raw.sample_id + "' has no labels");
    const fate::Sample s = cap > 0 ? fate::eval_subsample(raw, cap) : raw;
    per.push_back(fate::score_sample(model.predict(s), s.labels, threshold, s.sample_id));
  }
  const fate::CorpusMetrics m = fate::aggregate(std::move(per));
  json samples_json = json::array();
  for (const auto& s : m.samples) {
    samples_json.push_back(
        {{"sample_id", s.sample_id}, {"tp", s.tp}, {"fp", s.fp}, {"fn", s.fn}, {"p", s.p}, {"r", s.r}, {"f1", s.f1}});
  }
  const json report = {{"checkpoint", ckpt},
                       {"subset", subset},
                       {"threshold", threshold},
                       {"event_cap", cap},
                       {"mean", {{"p", m.mean_p}, {"r", m.mean_r}, {"f1", m.mean_f1}}},
                       {"samples", samples_json}};
  if (!out.empty()) {
    OutputDir dir(out);
    dir.write("metrics.json", report.dump(2) + "\n");
    dir.finish();
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_embed(const std::string& ckpt, const std::string& data, const std::string& out) {
  fate::LoadedModel model = fate::load_model(fate::load_checkpoint(ckpt));
  std::vector<fate::Sample> samples = load_for_checkpoint(model, data, "all");
  OutputDir dir(out);
  const int dims = model.embedding_dim();
  for (const auto& s : samples) {
    const auto z = model.embed(s);
    std::string csv = "sample_id,event_index";
    if (s.labeled()) csv += ",label";
    for (int k = 1; k <= dims; ++k) csv += ",z_" + std::to_string(k);
    csv += '\n';
    char buf[32];
    for (fate::nn::Index e = 0; e < z.rows(); ++e) {
      csv += s.sample_id + ',' + std::to_string(e);
      if (s.labeled()) csv += s.labels[static_cast<std::size_t>(e)] ? ",1" : ",0";
      for (fate::nn::Index k = 0; k < z.cols(); ++k) {
        const auto r = std::to_chars(buf, buf + sizeof buf, z(e, k));
        csv += ',';
        csv.append(buf, r.ptr);
      }
      csv += '\n';
    }
    dir.write(pad_name(s.sample_id) + ".csv", csv);
  }
  dir.finish();
  std::cout << "wrote " << samples.size() << " embedding files with " << dims << " columns to "
            << dir.root().string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FATE: feature-agnostic set transformer for flow cytometry"};
  app.require_subcommand(1);

  std::string path, out, transform, spec, config, ckpt, data, subset = "all";
  int jobs = 1;
  std::optional<double> threshold;
  std::optional<int> cap;

  auto* parse = app.add_subcommand("parse-fcs", "Decode an FCS 3.0/3.1 file to CSV plus channel metadata");
  parse->add_option("path", path, "FCS file")->required();
  parse->add_option("--out", out, "Output directory")->required();
  parse->add_option("--transform", transform, "'default', 'identity', or a transform JSON file");

  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic corpus");
  gen->add_option("--spec", spec, "Generator spec JSON (defaults when omitted)");
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Run the configured training phases with patient cross-validation");
  train->add_option("--config", config, "Run config JSON")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--jobs", jobs, "Concurrent cross-validation splits")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a labeled manifest");
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data, "Manifest JSON")->required();
  eval->add_option("--out", out, "Directory for metrics.json");
  eval->add_option("--subset", subset, "all, or train/val/test of the checkpoint's split")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  eval->add_option("--threshold", threshold, "Probability threshold (default: the checkpoint's)");
  eval->add_option("--event-cap", cap, "Events per sample (default: the checkpoint's validation cap; 0 = all)")
      ->check(CLI::NonNegativeNumber);

  auto* embed = app.add_subcommand("embed", "Export per-event embeddings");
  embed->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  embed->add_option("--data", data, "Manifest JSON")->required();
  embed->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*parse) return cmd_parse_fcs(path, out, transform);
    if (*gen) return cmd_gen_synth(spec, out);
    if (*train) return cmd_train(config, out, jobs);
    if (*eval) return cmd_evaluate(ckpt, data, out, subset, threshold, cap);
    if (*embed) return cmd_embed(ckpt, data, out);
  } catch (const fate::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const fate::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: IoError: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
