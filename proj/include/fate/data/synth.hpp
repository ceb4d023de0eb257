#pragma once

// Synthetic flow-cytometry-like corpora.
//
// Healthy cells come from K Gaussian populations whose centers are shared
// by all patients (with a small per-patient jitter). Each patient also has
// a blast population: a copy of the first healthy population shifted along
// a random subset of its panel markers. Values are clipped to [0, 1] and
// bypass the transform pipeline.
//
// The target corpus is labeled and follows a samples-per-patient roster.
// The companion pre-training corpus uses other patients and panels: blast-
// free samples and blast-dominant samples.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fate/data/csv.hpp"
#include "fate/data/manifest.hpp"
#include "fate/feature_registry.hpp"
#include "fate/model/config.hpp"
#include "fate/model/sample.hpp"

namespace fate {

inline const std::vector<int>& default_roster() {
  static const std::vector<int> roster = {1, 5, 10, 4, 5, 11, 18, 2, 2, 9, 2, 2};
  return roster;
}

inline const std::vector<std::string>& default_marker_names() {
  static const std::vector<std::string> names = {"FSC-A", "SSC-A", "CD45", "CD34",
                                                 "CD117", "CD33",  "CD13", "HLA-DR",
                                                 "CD38",  "CD7",   "CD56", "CD19"};
  return names;
}

struct SynthSpec {
  int markers = 12;
  int core_markers = 4;
  int panel_min = 8;
  int panel_max = 12;
  int patients = 12;
  std::vector<int> samples_per_patient;  // empty: cycle the default roster
  int events_min = 2000;
  int events_max = 10000;
  double mrd_min = 1e-4;
  double mrd_max = 0.2;
  int clusters = 5;
  double shift_min = 0.15;
  double shift_max = 0.4;
  double shift_markers_min = 0.3;  // fraction of the patient's panel
  double shift_markers_max = 0.6;
  double cluster_std_min = 0.03;
  double cluster_std_max = 0.07;
  double patient_jitter = 0.02;
  int pretrain_control_samples = 12;
  int pretrain_dia_samples = 12;
  double dia_blast_min = 0.5;
  double dia_blast_max = 0.9;
  std::uint64_t seed = 7;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("SpecInvalid", m); };
    if (markers < 1) fail("markers must be >= 1");
    if (core_markers < 0 || core_markers > panel_min || panel_min > panel_max ||
        panel_max > markers || panel_min < 1) {
      fail("need 0 <= core_markers <= panel_min <= panel_max <= markers");
    }
    if (patients < 1) fail("patients must be >= 1");
    for (int c : samples_per_patient) {
      if (c < 1) fail("samples_per_patient entries must be >= 1");
    }
    if (events_min < 1 || events_max < events_min) fail("need 1 <= events_min <= events_max");
    if (!(mrd_min > 0 && mrd_min <= mrd_max && mrd_max < 1)) fail("need 0 < mrd_min <= mrd_max < 1");
    if (!(dia_blast_min > 0 && dia_blast_min <= dia_blast_max && dia_blast_max < 1)) {
      fail("need 0 < dia_blast_min <= dia_blast_max < 1");
    }
    if (clusters < 1) fail("clusters must be >= 1");
    if (!(shift_min >= 0 && shift_min <= shift_max)) fail("need 0 <= shift_min <= shift_max");
    if (!(shift_markers_min > 0 && shift_markers_min <= shift_markers_max && shift_markers_max <= 1)) {
      fail("need 0 < shift_markers_min <= shift_markers_max <= 1");
    }
    if (!(cluster_std_min > 0 && cluster_std_min <= cluster_std_max)) {
      fail("need 0 < cluster_std_min <= cluster_std_max");
    }
    if (pretrain_control_samples < 0 || pretrain_dia_samples < 0) {
      fail("pre-training sample counts must be >= 0");
    }
  }

  int samples_for(int patient) const {
    const auto& roster = samples_per_patient.empty() ? default_roster() : samples_per_patient;
    return roster[static_cast<std::size_t>(patient) % roster.size()];
  }

  std::string marker_name(int i) const {
    const auto& names = default_marker_names();
    return i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)]
                                              : "M" + std::to_string(i + 1);
  }

  nlohmann::json to_json() const {
    return {{"markers", markers},
            {"core_markers", core_markers},
            {"panel_min", panel_min},
            {"panel_max", panel_max},
            {"patients", patients},
            {"samples_per_patient", samples_per_patient},
            {"events_min", events_min},
            {"events_max", events_max},
            {"mrd_min", mrd_min},
            {"mrd_max", mrd_max},
            {"clusters", clusters},
            {"shift_min", shift_min},
            {"shift_max", shift_max},
            {"shift_markers_min", shift_markers_min},
            {"shift_markers_max", shift_markers_max},
            {"cluster_std_min", cluster_std_min},
            {"cluster_std_max", cluster_std_max},
            {"patient_jitter", patient_jitter},
            {"pretrain_control_samples", pretrain_control_samples},
            {"pretrain_dia_samples", pretrain_dia_samples},
            {"dia_blast_min", dia_blast_min},
            {"dia_blast_max", dia_blast_max},
            {"seed", seed}};
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    const std::string where = "synthetic spec";
    try {
      detail::reject_unknown_keys(
          j, {"markers", "core_markers", "panel_min", "panel_max", "patients",
              "samples_per_patient", "events_min", "events_max", "mrd_min", "mrd_max", "clusters",
              "shift_min", "shift_max", "shift_markers_min", "shift_markers_max",
              "cluster_std_min", "cluster_std_max", "patient_jitter", "pretrain_control_samples",
              "pretrain_dia_samples", "dia_blast_min", "dia_blast_max", "seed"},
          where);
      detail::read_optional(j, "markers", s.markers, where);
      detail::read_optional(j, "core_markers", s.core_markers, where);
      detail::read_optional(j, "panel_min", s.panel_min, where);
      detail::read_optional(j, "panel_max", s.panel_max, where);
      detail::read_optional(j, "patients", s.patients, where);
      detail::read_optional(j, "samples_per_patient", s.samples_per_patient, where);
      detail::read_optional(j, "events_min", s.events_min, where);
      detail::read_optional(j, "events_max", s.events_max, where);
      detail::read_optional(j, "mrd_min", s.mrd_min, where);
      detail::read_optional(j, "mrd_max", s.mrd_max, where);
      detail::read_optional(j, "clusters", s.clusters, where);
      detail::read_optional(j, "shift_min", s.shift_min, where);
      detail::read_optional(j, "shift_max", s.shift_max, where);
      detail::read_optional(j, "shift_markers_min", s.shift_markers_min, where);
      detail::read_optional(j, "shift_markers_max", s.shift_markers_max, where);
      detail::read_optional(j, "cluster_std_min", s.cluster_std_min, where);
      detail::read_optional(j, "cluster_std_max", s.cluster_std_max, where);
      detail::read_optional(j, "patient_jitter", s.patient_jitter, where);
      detail::read_optional(j, "pretrain_control_samples", s.pretrain_control_samples, where);
      detail::read_optional(j, "pretrain_dia_samples", s.pretrain_dia_samples, where);
      detail::read_optional(j, "dia_blast_min", s.dia_blast_min, where);
      detail::read_optional(j, "dia_blast_max", s.dia_blast_max, where);
      detail::read_optional(j, "seed", s.seed, where);
    } catch (const ConfigError& e) {
      throw ConfigError("SpecInvalid", e.what());
    }
    s.validate();
    return s;
  }
};

struct SynthCorpus {
  FeatureRegistry registry;
  std::vector<Sample> target;    // labeled, patient roster
  std::vector<Sample> pretrain;  // blast-free and blast-dominant samples
};

namespace synth_detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ b);
}

using Rng = std::mt19937_64;

struct Population {
  std::vector<double> mean;  // per global marker
  std::vector<double> stddev;
};

struct Patient {
  std::vector<int> panel;  // global marker indices, in column order
  std::vector<double> weights;
  std::vector<Population> healthy;
  Population blast;
};

inline std::vector<Population> healthy_template(const SynthSpec& spec) {
  Rng rng(derive(spec.seed, 0xC1A55E5));
  std::uniform_real_distribution<double> center(0.15, 0.85);
  std::uniform_real_distribution<double> spread(spec.cluster_std_min, spec.cluster_std_max);
  std::vector<Population> pops(static_cast<std::size_t>(spec.clusters));
  for (auto& p : pops) {
    for (int m = 0; m < spec.markers; ++m) {
      p.mean.push_back(center(rng));
      p.stddev.push_back(spread(rng));
    }
  }
  return pops;
}

inline Patient make_patient(const SynthSpec& spec, const std::vector<Population>& base,
                            std::uint64_t seed) {
  Rng rng(seed);
  Patient pt;
  std::uniform_int_distribution<int> size(spec.panel_min, spec.panel_max);
  const int panel_size = size(rng);
  std::vector<int> extras;
  for (int m = spec.core_markers; m < spec.markers; ++m) extras.push_back(m);
  std::shuffle(extras.begin(), extras.end(), rng);
  for (int m = 0; m < spec.core_markers; ++m) pt.panel.push_back(m);
  for (int i = 0; i < panel_size - spec.core_markers; ++i) {
    pt.panel.push_back(extras[static_cast<std::size_t>(i)]);
  }
  std::shuffle(pt.panel.begin(), pt.panel.end(), rng);

  std::normal_distribution<double> jitter(0.0, spec.patient_jitter);
  pt.healthy = base;
  for (auto& p : pt.healthy) {
    for (auto& mu : p.mean) mu = std::clamp(mu + jitter(rng), 0.0, 1.0);
  }
  std::gamma_distribution<double> gamma(2.0, 1.0);
  double total = 0.0;
  for (int k = 0; k < spec.clusters; ++k) {
    pt.weights.push_back(gamma(rng));
    total += pt.weights.back();
  }
  for (auto& w : pt.weights) w /= total;

  // Blasts derive from population 0 (the progenitor analog). Each marker
  // has one aberrant direction shared by every patient, pointing away from
  // the nearer boundary of the template center; only the subset of shifted
  // markers and the magnitudes are patient-specific.
  pt.blast = pt.healthy[0];
  std::uniform_real_distribution<double> frac(spec.shift_markers_min, spec.shift_markers_max);
  const int shifted = std::max(
      1, static_cast<int>(std::lround(frac(rng) * static_cast<double>(pt.panel.size()))));
  std::vector<int> markers = pt.panel;
  std::shuffle(markers.begin(), markers.end(), rng);
  std::uniform_real_distribution<double> magnitude(spec.shift_min, spec.shift_max);
  for (int i = 0; i < shifted && i < static_cast<int>(markers.size()); ++i) {
    const auto m = static_cast<std::size_t>(markers[static_cast<std::size_t>(i)]);
    const double d = magnitude(rng);
    pt.blast.mean[m] = std::clamp(pt.blast.mean[m] + (base[0].mean[m] < 0.5 ? d : -d), 0.0, 1.0);
  }
  return pt;
}

inline Sample draw_sample(const SynthSpec& spec, const Patient& pt, const std::string& sample_id,
                          const std::string& patient_id, double blast_fraction,
                          const FeaturePanel& panel, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> count(spec.events_min, spec.events_max);
  const int n = count(rng);
  Sample s;
  s.sample_id = sample_id;
  s.patient_id = patient_id;
  s.panel = panel;
  s.events.resize(n, static_cast<nn::Index>(pt.panel.size()));
  s.labels.resize(static_cast<std::size_t>(n));
  std::bernoulli_distribution is_blast(blast_fraction);
  std::discrete_distribution<int> cluster(pt.weights.begin(), pt.weights.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int e = 0; e < n; ++e) {
    const bool blast = is_blast(rng);
    const Population& pop = blast ? pt.blast : pt.healthy[static_cast<std::size_t>(cluster(rng))];
    s.labels[static_cast<std::size_t>(e)] = blast ? 1 : 0;
    for (std::size_t j = 0; j < pt.panel.size(); ++j) {
      const auto m = static_cast<std::size_t>(pt.panel[j]);
      const double v = pop.mean[m] + pop.stddev[m] * noise(rng);
      s.events(e, static_cast<nn::Index>(j)) = std::clamp(v, 0.0, 1.0);
    }
  }
  return s;
}

inline std::string patient_name(int i, const char* prefix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03d", prefix, i + 1);
  return buf;
}

}  // namespace synth_detail

/// Generates the labeled target corpus and the pre-training corpus. Every
/// sample draws from its own derived seed, so corpora are reproducible
/// bit-for-bit from the spec.
inline SynthCorpus gen_corpus(const SynthSpec& spec) {
  using namespace synth_detail;
  spec.validate();
  SynthCorpus corpus;
  std::vector<std::string> names;
  for (int m = 0; m < spec.markers; ++m) names.push_back(spec.marker_name(m));
  corpus.registry.register_names(std::span<const std::string>(names));

  auto panel_of = [&](const Patient& pt) {
    FeaturePanel p;
    for (int m : pt.panel) p.ids.push_back(static_cast<FeatureId>(m));
    return p;
  };
  const auto base = healthy_template(spec);
  const double log_lo = std::log(spec.mrd_min), log_hi = std::log(spec.mrd_max);

  for (int p = 0; p < spec.patients; ++p) {
    const Patient pt = make_patient(spec, base, derive(spec.seed, 1, static_cast<std::uint64_t>(p)));
    const std::string pid = spec.patients <= 26 ? std::string(1, static_cast<char>('A' + p))
                                                : patient_name(p, "P");
    const FeaturePanel panel = panel_of(pt);
    for (int k = 0; k < spec.samples_for(p); ++k) {
      const std::uint64_t s_seed = derive(spec.seed, 2, (static_cast<std::uint64_t>(p) << 20) | k);
      Rng rng(derive(s_seed, 99));
      std::uniform_real_distribution<double> u(log_lo, log_hi);
      const double mrd = std::exp(u(rng));
      char sid[64];
      std::snprintf(sid, sizeof sid, "%s-%02d", pid.c_str(), k + 1);
      corpus.target.push_back(draw_sample(spec, pt, sid, pid, mrd, panel, s_seed));
    }
  }

  const int pre_total = spec.pretrain_control_samples + spec.pretrain_dia_samples;
  for (int i = 0; i < pre_total; ++i) {
    const bool control = i < spec.pretrain_control_samples;
    const Patient pt = make_patient(spec, base, derive(spec.seed, 3, static_cast<std::uint64_t>(i)));
    const std::string pid = patient_name(control ? i : i - spec.pretrain_control_samples,
                                         control ? "CTRL" : "DIA");
    double fraction = 0.0;
    const std::uint64_t s_seed = derive(spec.seed, 4, static_cast<std::uint64_t>(i));
    if (!control) {
      Rng rng(derive(s_seed, 99));
      std::uniform_real_distribution<double> u(spec.dia_blast_min, spec.dia_blast_max);
      fraction = u(rng);
    }
    corpus.pretrain.push_back(draw_sample(spec, pt, pid + "-01", pid, fraction, panel_of(pt), s_seed));
  }
  corpus.registry.freeze();
  return corpus;
}

struct CorpusReport {
  struct Row {
    std::string sample_id;
    std::string patient_id;
    nn::Index events = 0;
    std::size_t panel_size = 0;
    double blast_fraction = 0.0;
  };
  std::vector<Row> rows;
  std::map<std::string, int> feature_occurrence;  // samples measuring each feature

  nlohmann::json to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) {
      rs.push_back({{"sample_id", r.sample_id},
                    {"patient_id", r.patient_id},
                    {"events", r.events},
                    {"panel_size", r.panel_size},
                    {"blast_fraction", r.blast_fraction}});
    }
    return {{"samples", rs}, {"feature_occurrence", feature_occurrence}};
  }
};

inline CorpusReport corpus_report(const std::vector<Sample>& samples,
                                  const FeatureRegistry& registry) {
  CorpusReport rep;
  for (const auto& s : samples) {
    rep.rows.push_back({s.sample_id, s.patient_id, s.num_events(), s.panel.size(), s.blast_fraction()});
    for (FeatureId id : s.panel.ids) ++rep.feature_occurrence[registry.name(id)];
  }
  return rep;
}

/// Writes one CSV + label file per sample and a manifest into `dir`.
/// Returns the paths written, relative to `dir`.
inline std::vector<std::string> write_corpus(const std::vector<Sample>& samples,
                                             const FeatureRegistry& registry,
                                             const std::filesystem::path& dir) {
  std::vector<std::string> written;
  Manifest manifest;
  for (const auto& s : samples) {
    std::vector<std::string> header;
    for (FeatureId id : s.panel.ids) header.push_back(registry.name(id));
    const std::string csv = s.sample_id + ".csv";
    write_file(dir / csv, to_csv(s.events, header));
    written.push_back(csv);
    ManifestEntry e{s.sample_id, s.patient_id, csv, "csv", std::nullopt};
    if (s.labeled()) {
      std::string lab;
      lab.reserve(s.labels.size() * 2);
      for (auto l : s.labels) {
        lab += l ? '1' : '0';
        lab += '\n';
      }
      const std::string lp = s.sample_id + ".labels";
      write_file(dir / lp, lab);
      written.push_back(lp);
      e.labels = lp;
    }
    manifest.samples.push_back(std::move(e));
  }
  write_file(dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
  written.push_back("manifest.json");
  return written;
}

}  // namespace fate
