#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "fate/data/csv.hpp"
#include "fate/data/fcs.hpp"
#include "fate/data/manifest.hpp"
#include "fate/data/synth.hpp"
#include "fate/training/pipeline.hpp"
#include "support/fcs_writer.hpp"

namespace {

namespace fs = std::filesystem;
namespace ft = fate::testing;
using nlohmann::json;

struct CliRun {
  int code = -1;
  std::string output;  // stdout and stderr
};

CliRun run_cli(const std::string& args, const std::string& env = "") {
  const fs::path log = fs::temp_directory_path() / "fate_cli_output.txt";
  const std::string cmd = env + " '" FATE_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = fate::read_file(log);
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("fate_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

json read_json(const fs::path& p) { return json::parse(fate::read_file(p)); }

ft::FcsCraft crafted() {
  ft::FcsCraft c;
  c.channels = {{"FSC-A", "", 32, 262144}, {"FL1-A", "CD45", 32, 262144}, {"FL2-A", "CD34", 32, 262144}};
  c.events = {{1000.5, 20.0, -3.0}, {50000.0, 400.0, 7.25}, {70.0, 0.0, 1e4}, {3.0, 2.0, 1.0}};
  return c;
}

std::string small_spec_json(std::uint64_t seed = 5) {
  return json{{"patients", 3},
              {"samples_per_patient", {2, 2, 3}},
              {"events_min", 150},
              {"events_max", 250},
              {"mrd_min", 0.05},
              {"mrd_max", 0.3},
              {"pretrain_control_samples", 2},
              {"pretrain_dia_samples", 2},
              {"seed", seed}}
      .dump();
}

/// Writes a small corpus through the CLI once and returns its directory.
const fs::path& corpus_dir() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("corpus");
    fate::write_file(d / "spec.json", small_spec_json());
    const CliRun r = run_cli("gen-synth --spec '" + (d / "spec.json").string() + "' --out '" + (d / "out").string() + "'");
    EXPECT_EQ(r.code, 0) << r.output;
    return d / "out";
  }();
  return dir;
}

json small_run_config(const std::vector<json>& phases, int num_seeds = 1) {
  return {{"seed", 3},
          {"num_seeds", num_seeds},
          {"data", {{"target", (corpus_dir() / "target" / "manifest.json").string()},
                    {"pretrain", {(corpus_dir() / "pretrain" / "manifest.json").string()}}}},
          {"model", {{"hidden_dim", 16}, {"heads", 2}, {"induced_points", 4},
                     {"encoder_isab_layers", 1}, {"decoder_isab_layers", 1}}},
          {"train", phases}};
}

json phase(const std::string& name, int epochs) {
  return {{"phase", name}, {"epochs", epochs}, {"batch_size", 4}, {"event_cap", 64}, {"eval_event_cap", 50}};
}

/// Runs `train` with `config` into a fresh directory named `name`.
fs::path train(const std::string& name, const json& config, const std::string& env = "",
               int expect_code = 0) {
  const fs::path d = fresh_dir(name);
  fate::write_file(d / "config.json", config.dump(2));
  const CliRun r = run_cli("train --config '" + (d / "config.json").string() + "' --out '" + (d / "out").string() + "'", env);
  EXPECT_EQ(r.code, expect_code) << r.output;
  return d / "out";
}

TEST(CliParseFcs, WritesEveryEventAndChannelMetadata) {
  const fs::path d = fresh_dir("parse");
  const auto bytes = ft::craft_fcs(crafted());
  fate::write_file(d / "s1.fcs", ft::as_string(bytes));
  const CliRun r = run_cli("parse-fcs '" + (d / "s1.fcs").string() + "' --out '" + (d / "out").string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream csv(d / "out" / "s1.csv");
  const fate::RawEventMatrix m = fate::load_csv_sample(csv);
  EXPECT_EQ(m.values.rows(), 4);  // $TOT
  EXPECT_EQ(m.values.cols(), 3);
  // Default policy ends with a per-channel min-max rescale.
  EXPECT_GE(m.values.minCoeff(), 0.0);
  EXPECT_LE(m.values.maxCoeff(), 1.0);
  const json meta = read_json(d / "out" / "s1.json");
  EXPECT_EQ(meta["events"], 4);
  EXPECT_EQ(meta["channels"][1]["stain"], "CD45");
  EXPECT_EQ(meta["channels"][0]["feature"], "FSC-A");
  EXPECT_EQ(meta["keywords"]["$TOT"], "4");
  const json files = read_json(d / "out" / "outputs.json")["files"];
  EXPECT_EQ(files, json({"s1.csv", "s1.json"}));
}

TEST(CliParseFcs, IdentityTransformKeepsDecodedValues) {
  const fs::path d = fresh_dir("parse_identity");
  const auto c = crafted();
  fate::write_file(d / "s.fcs", ft::as_string(ft::craft_fcs(c)));
  const CliRun r = run_cli("parse-fcs '" + (d / "s.fcs").string() + "' --transform identity --out '" + (d / "out").string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream csv(d / "out" / "s.csv");
  const fate::RawEventMatrix m = fate::load_csv_sample(csv);
  const fate::FcsFile f = fate::parse_fcs(fate::read_file(d / "s.fcs"));
  EXPECT_EQ(m.values, f.data.values);
  for (std::size_t e = 0; e < c.events.size(); ++e) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(m.values(static_cast<long>(e), static_cast<long>(j)), static_cast<float>(c.events[e][j]));
    }
  }
}

TEST(CliParseFcs, TruncatedFileExitsTwoNamingTheError) {
  const fs::path d = fresh_dir("parse_truncated");
  auto bytes = ft::craft_fcs(crafted());
  bytes.resize(bytes.size() - 4);
  fate::write_file(d / "t.fcs", ft::as_string(bytes));
  const CliRun r = run_cli("parse-fcs '" + (d / "t.fcs").string() + "' --out '" + (d / "out").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("TruncatedData"), std::string::npos) << r.output;
}

TEST(CliUsage, MissingSubcommandOrOptionExitsTwo) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("train").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("--help").code, 0);
}

TEST(CliGenSynth, DefaultSpecWritesTwelvePatients) {
  const fs::path d = fresh_dir("gen_default");
  const CliRun r = run_cli("gen-synth --out '" + d.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  const fate::Manifest m = fate::load_manifest(d / "target" / "manifest.json");
  std::set<std::string> patients;
  for (const auto& e : m.samples) patients.insert(e.patient_id);
  EXPECT_EQ(patients.size(), 12u);
  EXPECT_EQ(read_json(d / "registry.json")["names"].size(), 12u);
  const json files = read_json(d / "outputs.json")["files"];
  for (const auto& f : files) EXPECT_TRUE(fs::exists(d / f.get<std::string>())) << f;
  fs::remove_all(d);
}

TEST(CliGenSynth, SameSeedIsByteIdenticalAndBadSpecExitsTwo) {
  const fs::path d = fresh_dir("gen_twice");
  fate::write_file(d / "spec.json", small_spec_json());
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(run_cli("gen-synth --spec '" + (d / "spec.json").string() + "' --out '" + (d / out).string() + "'").code, 0);
  }
  const json files = read_json(d / "a" / "outputs.json")["files"];
  EXPECT_EQ(files, read_json(d / "b" / "outputs.json")["files"]);
  for (const auto& f : files) {
    EXPECT_EQ(fate::read_file(d / "a" / f.get<std::string>()), fate::read_file(d / "b" / f.get<std::string>())) << f;
  }
  // Rerunning into the same directory overwrites identically.
  ASSERT_EQ(run_cli("gen-synth --spec '" + (d / "spec.json").string() + "' --out '" + (d / "a").string() + "'").code, 0);
  EXPECT_EQ(fate::read_file(d / "a" / "target" / "manifest.json"), fate::read_file(d / "b" / "target" / "manifest.json"));
  // FATE_SEED overrides the spec seed.
  ASSERT_EQ(run_cli("gen-synth --spec '" + (d / "spec.json").string() + "' --out '" + (d / "c").string() + "'", "FATE_SEED=77").code, 0);
  EXPECT_EQ(read_json(d / "c" / "spec.json")["seed"], 77);
  EXPECT_NE(fate::read_file(d / "a" / "target" / "A-01.csv"), fate::read_file(d / "c" / "target" / "A-01.csv"));

  fate::write_file(d / "bad.json", json{{"patients", 0}}.dump());
  const CliRun bad = run_cli("gen-synth --spec '" + (d / "bad.json").string() + "' --out '" + (d / "bad").string() + "'");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("SpecInvalid"), std::string::npos) << bad.output;
}

TEST(CliTrain, ScratchThreeSeedsReportsMeanAndStd) {
  const fs::path out = train("train_scratch", small_run_config({phase("scratch", 2)}, 3));
  const json report = read_json(out / "report.json");
  ASSERT_TRUE(report["aggregate"]["f1"].contains("mean"));
  ASSERT_TRUE(report["aggregate"]["f1"].contains("std"));
  EXPECT_EQ(report["aggregate"]["num_seeds"], 3);
  EXPECT_EQ(report["seeds"].size(), 3u);
  EXPECT_EQ(report["seeds"][0]["splits"].size(), 3u);  // one per patient
  // One log line per epoch, split and seed.
  std::ifstream log(out / "train_log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line); ++lines) {
    const json j = json::parse(line);
    for (const char* k : {"epoch", "phase", "train_loss", "val_f1", "lr"}) EXPECT_TRUE(j.contains(k)) << line;
  }
  EXPECT_EQ(lines, 3 * 3 * 2);
  const json files = read_json(out / "outputs.json")["files"];
  int ckpts = 0;
  for (const auto& f : files) {
    EXPECT_TRUE(fs::exists(out / f.get<std::string>())) << f;
    ckpts += f.get<std::string>().ends_with(".ckpt");
  }
  EXPECT_EQ(ckpts, 9);
  EXPECT_EQ(read_json(out / "config.json"), fate::RunConfig::from_json(read_json(out / "config.json")).to_json());
}

TEST(CliTrain, SameInputsGiveIdenticalArtifactsAndFateSeedOverrides) {
  const json cfg = small_run_config({phase("mae_pretrain", 1), phase("finetune", 1)});
  const fs::path a = train("train_a", cfg);
  const fs::path b = train("train_b", cfg);
  for (const char* f : {"report.json", "train_log.jsonl", "checkpoints/seed3_pretrain.ckpt", "checkpoints/seed3_split_A.ckpt"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(fate::read_file(a / f), fate::read_file(b / f)) << f;
  }
  const fs::path c = train("train_c", cfg, "FATE_SEED=11");
  EXPECT_EQ(read_json(c / "config.json")["seed"], 11);
  EXPECT_TRUE(fs::exists(c / "checkpoints" / "seed11_pretrain.ckpt"));
  const CliRun bad = run_cli("train --config '" + (a / "config.json").string() + "' --out '" + (a.parent_path() / "x").string() + "'",
                          "FATE_SEED=abc");
  EXPECT_EQ(bad.code, 2);
}

TEST(CliTrain, ConfigAndDataErrorsExitTwoDivergenceExitsThree) {
  json cfg = small_run_config({phase("scratch", 1)});
  cfg["bogus"] = 1;
  train("train_bad_key", cfg, "", 2);
  cfg = small_run_config({phase("scratch", 1)});
  cfg["data"]["target"] = "/nonexistent/manifest.json";
  train("train_no_data", cfg, "", 2);
  cfg = small_run_config({phase("scratch", 2)});
  cfg["train"][0]["lr_start"] = 1e300;
  const fs::path d = fresh_dir("train_diverge");
  fate::write_file(d / "config.json", cfg.dump());
  const CliRun r = run_cli("train --config '" + (d / "config.json").string() + "' --out '" + (d / "out").string() + "'");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("Divergence"), std::string::npos) << r.output;
}

TEST(CliEvaluate, ValidationReplayMatchesTheLoggedBestF1) {
  const fs::path out = train("train_eval", small_run_config({phase("scratch", 4)}));
  const json report = read_json(out / "report.json");
  const fs::path data = corpus_dir() / "target" / "manifest.json";
  int checked = 0;
  for (const auto& sp : report["seeds"][0]["splits"]) {
    if (sp["best_val_f1"].is_null()) continue;
    const std::string ckpt = (out / "checkpoints" / ("seed3_split_" + sp["held_out_patient"].get<std::string>() + ".ckpt")).string();
    const fs::path mdir = out.parent_path() / ("metrics_" + sp["held_out_patient"].get<std::string>());
    const CliRun r = run_cli("evaluate --checkpoint '" + ckpt + "' --data '" + data.string() + "' --subset val --out '" + mdir.string() + "'");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NEAR(read_json(mdir / "metrics.json")["mean"]["f1"].get<double>(), sp["best_val_f1"].get<double>(), 1e-6);
    // The test subset on all events matches the report too.
    const CliRun t = run_cli("evaluate --checkpoint '" + ckpt + "' --data '" + data.string() + "' --subset test --event-cap 0");
    ASSERT_EQ(t.code, 0) << t.output;
    EXPECT_NEAR(json::parse(t.output)["mean"]["f1"].get<double>(), sp["test_mean"]["f1"].get<double>(), 1e-6);
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(CliEmbed, WritesEightEmbeddingColumnsPerEvent) {
  json cfg = small_run_config({phase("mae_pretrain", 1)});
  const fs::path out = train("train_embed", cfg);
  const fs::path e = out.parent_path() / "emb";
  const CliRun r = run_cli("embed --checkpoint '" + (out / "checkpoints" / "seed3_pretrain.ckpt").string() + "' --data '" +
                        (corpus_dir() / "target" / "manifest.json").string() + "' --out '" + e.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  const fate::Manifest m = fate::load_manifest(corpus_dir() / "target" / "manifest.json");
  const json files = read_json(e / "outputs.json")["files"];
  ASSERT_EQ(files.size(), m.samples.size());
  std::ifstream csv(e / files[0].get<std::string>());
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "sample_id,event_index,label,z_1,z_2,z_3,z_4,z_5,z_6,z_7,z_8");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line); ++rows) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10) << line;
  }
  std::ifstream src(fate::Manifest(m).resolve(m.samples[0].path));
  EXPECT_EQ(static_cast<long>(rows), fate::load_csv_sample(src).values.rows());
}

TEST(CliEmbed, PanelOutsideTheCheckpointRegistryExitsTwo) {
  const fs::path out = train("train_unknown", small_run_config({phase("mae_pretrain", 1)}));
  const fs::path d = fresh_dir("unknown_panel");
  fate::write_file(d / "s.csv", "CD45,NOVEL_MARKER\n0.1,0.2\n0.3,0.4\n");
  fate::write_file(d / "manifest.json",
                   json{{"samples", {{{"sample_id", "s"}, {"patient_id", "p"}, {"path", "s.csv"}}}}}.dump());
  const CliRun r = run_cli("embed --checkpoint '" + (out / "checkpoints" / "seed3_pretrain.ckpt").string() + "' --data '" +
                        (d / "manifest.json").string() + "' --out '" + (d / "emb").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("UnknownFeatureWhenFrozen"), std::string::npos) << r.output;
}

}  // namespace
