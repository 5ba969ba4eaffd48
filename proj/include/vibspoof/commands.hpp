// vibspoof/commands.hpp

// Copyright 2026  The vibspoof Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// The command implementations behind tools/vibspoof.  Each takes a plain
// options struct, writes its primary output to the named path and a short
// human summary to `log`, and reports failure by throwing vibspoof::Error.

#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vibspoof/common.hpp"
#include "vibspoof/frontend.hpp"
#include "vibspoof/metrics.hpp"
#include "vibspoof/protocol.hpp"
#include "vibspoof/training.hpp"

namespace vibspoof::cmd {

namespace fs = std::filesystem;

// Settings shared by commands that build a frontend/model from a config.
struct ModelOptions {
  std::string config_path;  // empty: defaults
  std::optional<std::uint64_t> seed;
  std::string head;      // "", "vib", "baseline"
  std::string frontend;  // "", "toy", "pretrained"
};

inline RunConfig LoadConfig(const ModelOptions& o) {
  std::vector<std::pair<std::string, std::string>> overrides;
  if (o.seed) overrides.emplace_back("seed", std::to_string(*o.seed));
  if (!o.head.empty()) overrides.emplace_back("head", o.head);
  if (!o.frontend.empty()) overrides.emplace_back("frontend", o.frontend);
  const std::string text = o.config_path.empty() ? std::string() : ReadFileToString(o.config_path);
  try {
    return ParseRunConfig(text, {}, overrides);
  } catch (const ConfigError& e) {
    std::vector<std::string> p;
    for (const auto& s : e.problems()) p.push_back((o.config_path.empty() ? "" : o.config_path + ": ") + s);
    throw ConfigError(p);
  }
}

// Fails fast, before any output exists, when the pretrained model location
// is not configured.
inline void CheckPretrainedEnv(const RunConfig& cfg) {
  if (cfg.frontend.kind != FrontendKind::kPretrained) return;
  const char* env = std::getenv(kPretrainedDirEnv);
  if (env == nullptr || *env == '\0') {
    throw ConfigError(std::string("--frontend pretrained needs ") + kPretrainedDirEnv +
                      " to name the pretrained model directory");
  }
}

// ---------------------------------------------------------------------------

struct PrepareOptions {
  std::string corpus;
  std::string subset = "train";
  std::string protocol;
  std::string audio_root;
  std::string out;
  bool check_audio = false;
};

inline std::string FormatCounts(const DatasetManifest& m) {
  const auto c = CountManifest(m);
  std::string s = "corpus " + std::string(CorpusName(m.corpus)) + "\nsubset " +
                  std::string(SubsetName(m.subset)) + "\nutterances " +
                  std::to_string(m.entries.size()) + "\nbonafide " + std::to_string(c.bonafide) +
                  "\nspoof " + std::to_string(c.spoof) + '\n';
  for (const auto& [attack, n] : c.per_attack) s += "attack " + attack + ' ' + std::to_string(n) + '\n';
  return s;
}

inline DatasetManifest Prepare(const PrepareOptions& o, std::ostream& log) {
  const auto corpus = CorpusFromName(o.corpus);
  if (!corpus) {
    throw ArgumentError("unknown corpus '" + o.corpus +
                        "' (expected asvspoof2015, asvspoof2019_la or asvspoof2021_la)");
  }
  const auto subset = SubsetFromName(o.subset);
  if (!subset) throw ArgumentError("unknown subset '" + o.subset + "' (expected train, dev or eval)");
  std::ifstream in(o.protocol, std::ios::binary);
  if (!in) throw IoError("cannot open protocol '" + o.protocol + "'");
  DatasetManifest m;
  try {
    m = ParseProtocol(in, *corpus, *subset, o.audio_root);
  } catch (const ParseError& e) {
    throw ParseError(o.protocol + ": " + e.what());
  }
  if (o.check_audio) {
    const auto missing = FindMissingAudio(m);
    if (!missing.empty()) {
      throw ValidationError("no audio under '" + o.audio_root + "' for " +
                            std::to_string(missing.size()) +
                            " utterance(s): " + internal::ListIds(missing));
    }
  }
  WriteStringToFile(o.out, WriteManifestCache(m));
  log << FormatCounts(m);
  return m;
}

// ---------------------------------------------------------------------------

struct SubsampleOptions {
  std::string manifest;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

inline DatasetManifest Subsample(const SubsampleOptions& o, std::ostream& log) {
  const DatasetManifest parent = ReadManifestCacheFile(o.manifest);
  DatasetManifest m = StratifiedSubsample(parent, {o.fraction, o.seed});
  m.provenance.emplace_back("parent_hash", ManifestHash(parent));
  m.provenance.emplace_back("fraction", FormatDouble(o.fraction));
  m.provenance.emplace_back("seed", std::to_string(o.seed));
  WriteStringToFile(o.out, WriteManifestCache(m));
  log << "kept " << m.entries.size() << " of " << parent.entries.size() << " utterances\n";
  return m;
}

// ---------------------------------------------------------------------------

struct EmbedOptions {
  ModelOptions model;
  std::string manifest;
  std::string out;
};

// Frozen-frontend embedding cache for later runs.
inline void EmbedCommand(const EmbedOptions& o, std::ostream& log) {
  const RunConfig cfg = LoadConfig(o.model);
  const auto frontend = MakeFrontend(cfg);
  const DatasetManifest m = ReadManifestCacheFile(o.manifest);
  EmbeddingCache cache{frontend->kind(), frontend->output_dim(), frontend->VersionHash(),
                       EmbedManifest(*frontend, m, static_cast<std::size_t>(cfg.train.batch_size))};
  WriteStringToFile(o.out, WriteEmbeddingCache(cache));
  log << "embedded " << cache.rows.size() << " utterances (dim " << cache.dim << ")\n";
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  ModelOptions model;
  std::string train_manifest;
  std::string dev_manifest;
  std::string train_embeddings;  // optional caches, frozen frontend only
  std::string dev_embeddings;
  std::string out;
  bool resume = false;
};

inline LabeledInputs InputsFor(const DatasetManifest& m, const std::string& cache_path,
                               const Frontend& frontend, const Model& model, const RunConfig& cfg) {
  if (cache_path.empty()) return LoadInputs(m, frontend, model, cfg.train);
  if (model.has_projection()) {
    throw ArgumentError("embedding caches hold projected embeddings; they cannot feed a trainable "
                        "frontend (set frontend_trainable = false)");
  }
  const auto rows = CacheForManifest(ReadEmbeddingCacheFile(cache_path), frontend, m);
  return ModelInputs(rows, m, frontend, model, true);
}

inline FitResult Train(const TrainOptions& o, std::ostream& log) {
  const fs::path out(o.out);
  RunConfig cfg;
  std::optional<RunDirectory> run;
  std::optional<Checkpoint> last, prior_best;
  if (o.resume) {
    last = ReadCheckpointFile(out / "last.ckpt");
    cfg = last->config;
    if (!o.model.config_path.empty() || o.model.seed || !o.model.head.empty() ||
        !o.model.frontend.empty()) {
      const auto diffs = ConfigDifferences(last->config, LoadConfig(o.model), {"max_epochs"});
      if (!diffs.empty()) {
        std::vector<std::string> p{"config differs from the run being resumed"};
        p.insert(p.end(), diffs.begin(), diffs.end());
        throw ConfigError(p);
      }
      cfg.train.max_epochs = LoadConfig(o.model).train.max_epochs;
    }
    if (last->best_epoch >= 0) prior_best = ReadCheckpointFile(RunDirectory::BestCheckpoint(out));
    run = RunDirectory::Open(out);
  } else {
    cfg = LoadConfig(o.model);
    CheckPretrainedEnv(cfg);
    run = RunDirectory::Create(out, cfg, "train", o.model.config_path);
  }
  const auto frontend = MakeFrontend(cfg);
  TrainingState st = last ? Restore(*last, *frontend) : InitialState(cfg, *frontend);
  const DatasetManifest train_m = ReadManifestCacheFile(o.train_manifest);
  const DatasetManifest dev_m = ReadManifestCacheFile(o.dev_manifest);
  const LabeledInputs train = InputsFor(train_m, o.train_embeddings, *frontend, st.model, cfg);
  const LabeledInputs dev = InputsFor(dev_m, o.dev_embeddings, *frontend, st.model, cfg);
  log << "head " << HeadKindName(cfg.head) << ", frontend " << FrontendKindName(cfg.frontend.kind)
      << (st.model.has_projection() ? " (trainable)" : " (frozen)") << ", "
      << st.model.ParamCount() << " parameters, " << train.size() << " train / " << dev.size()
      << " dev utterances\n";
  return Fit(st, train, dev, cfg, frontend->VersionHash(), &*run,
             [&](const EpochReport& r) { log << FormatReport(r) << '\n'; }, prior_best);
}

// ---------------------------------------------------------------------------

// Accepts a checkpoint file or a run directory (its best checkpoint).
inline Checkpoint LoadCheckpointArg(const std::string& path) {
  const fs::path p(path);
  std::error_code ec;
  if (fs::is_directory(p, ec)) return ReadCheckpointFile(RunDirectory::BestCheckpoint(p));
  return ReadCheckpointFile(p);
}

struct ScoreOptions {
  std::string checkpoint;
  std::string config_path;  // optional; must agree with the checkpoint
  std::string manifest;
  std::string out;
  bool with_keys = false;
};

// Model state and frontend for inference from a checkpoint.
struct LoadedModel {
  RunConfig cfg;
  std::unique_ptr<Frontend> frontend;
  std::optional<TrainingState> state;
};

inline LoadedModel LoadForInference(const std::string& checkpoint, const std::string& config_path) {
  const Checkpoint c = LoadCheckpointArg(checkpoint);
  if (!config_path.empty()) {
    const auto diffs =
        ConfigDifferences(c.config, LoadConfig({config_path, {}, {}, {}}), OptimisationKeys());
    if (!diffs.empty()) {
      std::vector<std::string> p{"checkpoint does not match " + config_path};
      p.insert(p.end(), diffs.begin(), diffs.end());
      throw ConfigError(p);
    }
  }
  LoadedModel m{c.config, MakeFrontend(c.config), std::nullopt};
  m.state.emplace(Restore(c, *m.frontend));
  return m;
}

inline std::vector<ScoreRecord> Score(const ScoreOptions& o, std::ostream& log) {
  LoadedModel m = LoadForInference(o.checkpoint, o.config_path);
  const DatasetManifest manifest = ReadManifestCacheFile(o.manifest);
  const LabeledInputs data = LoadInputs(manifest, *m.frontend, m.state->model, m.cfg.train);
  const auto records = ScoreRecords(m.state->model, data);
  WriteStringToFile(o.out, WriteScores(records, o.with_keys));
  log << "scored " << records.size() << " utterances from " << CorpusName(manifest.corpus) << ' '
      << SubsetName(manifest.subset) << '\n';
  return records;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string scores;
  std::string manifest;      // optional when the score file carries keys
  std::string cost_model;    // "", "default" or a key = value file
  std::string asv_rates;     // "p_fa,p_miss,p_miss_spoof"
  std::string asv_scores;    // organiser ASV score file
  std::string eer_mode = "midpoint";
  std::string out;           // empty: only `log`
};

inline TDCFCostModel ParseCostModel(const std::string& text, const std::string& what,
                                    bool* has_asv) {
  TDCFCostModel c;
  std::map<std::string, double*> fields{
      {"p_tar", &c.p_tar},         {"p_non", &c.p_non},
      {"p_spoof", &c.p_spoof},     {"c_miss_asv", &c.c_miss_asv},
      {"c_fa_asv", &c.c_fa_asv},   {"c_miss_cm", &c.c_miss_cm},
      {"c_fa_cm", &c.c_fa_cm},     {"asv_p_fa", &c.asv.p_fa},
      {"asv_p_miss", &c.asv.p_miss}, {"asv_p_miss_spoof", &c.asv.p_miss_spoof}};
  std::vector<std::string> problems;
  int asv_fields = 0;
  std::istringstream in(text);
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    std::string_view v(line);
    if (const auto h = v.find('#'); h != std::string_view::npos) v = v.substr(0, h);
    v = Trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    const std::string where = what + " line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) {
      problems.push_back(where + "expected 'key = value'");
      continue;
    }
    const std::string key(Trim(v.substr(0, eq)));
    const auto it = fields.find(key);
    if (it == fields.end()) {
      problems.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    if (!ParseDouble(Trim(v.substr(eq + 1)), it->second)) {
      problems.push_back(where + "bad number for " + key);
    }
    asv_fields += key.rfind("asv_", 0) == 0;
  }
  if (asv_fields != 0 && asv_fields != 3) {
    problems.push_back(what + ": give all three asv_* rates or none");
  }
  if (!problems.empty()) throw ConfigError(problems);
  *has_asv = asv_fields == 3;
  return c;
}

inline AsvOperatingPoint ParseAsvRates(const std::string& s) {
  std::vector<double> v;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    double d;
    if (!ParseDouble(Trim(std::string_view(s).substr(start, comma - start)), &d)) {
      throw ArgumentError("--asv-rates expects p_fa,p_miss,p_miss_spoof, got '" + s + "'");
    }
    v.push_back(d);
    start = comma + 1;
  }
  if (v.size() != 3) throw ArgumentError("--asv-rates expects exactly three numbers");
  return {v[0], v[1], v[2]};
}

inline std::string Eval(const EvalOptions& o, std::ostream& log) {
  std::ifstream in(o.scores, std::ios::binary);
  if (!in) throw IoError("cannot open score file '" + o.scores + "'");
  std::vector<ScoreRecord> records;
  try {
    records = ParseScores(in);
  } catch (const ParseError& e) {
    throw ParseError(o.scores + ": " + e.what());
  }
  if (!o.manifest.empty()) records = JoinScoresWithKeys(std::move(records), ReadManifestCacheFile(o.manifest));

  EerMode mode;
  if (o.eer_mode == "midpoint") mode = EerMode::kMidpoint;
  else if (o.eer_mode == "interpolate") mode = EerMode::kInterpolate;
  else throw ArgumentError("unknown EER mode '" + o.eer_mode + "' (midpoint or interpolate)");

  std::optional<TDCFCostModel> cost;
  TDCFCostModel base;
  bool has_asv = false;
  if (!o.cost_model.empty() && o.cost_model != "default") {
    base = ParseCostModel(ReadFileToString(o.cost_model), o.cost_model, &has_asv);
  }
  const int sources = has_asv + !o.asv_rates.empty() + !o.asv_scores.empty();
  if (sources > 1) {
    throw ArgumentError("give the ASV operating point once: cost-model asv_* keys, --asv-rates "
                        "or --asv-scores");
  }
  if (!o.asv_rates.empty()) {
    base.asv = ParseAsvRates(o.asv_rates);
    has_asv = true;
  } else if (!o.asv_scores.empty()) {
    std::ifstream asv(o.asv_scores, std::ios::binary);
    if (!asv) throw IoError("cannot open ASV score file '" + o.asv_scores + "'");
    AsvScores s;
    try {
      s = ParseAsvScores(asv);
    } catch (const ParseError& e) {
      throw ParseError(o.asv_scores + ": " + e.what());
    }
    base.asv = AsvRatesAt(s, AsvEerThreshold(s));
    has_asv = true;
  }
  if (has_asv) cost = base;
  const std::string report = FormatEvalReport(Evaluate(records, cost, mode), cost);
  if (!o.out.empty()) WriteStringToFile(o.out, report);
  log << report;
  return report;
}

// ---------------------------------------------------------------------------

struct ExportOptions {
  std::string checkpoint;
  std::string manifest;
  std::string layer;  // speech_embedding | latent_mean
  std::string out;
};

inline std::string ExportEmbeddings(const ExportOptions& o, std::ostream& log) {
  if (o.layer != "speech_embedding" && o.layer != "latent_mean") {
    throw ArgumentError("unknown layer '" + o.layer + "' (speech_embedding or latent_mean)");
  }
  LoadedModel m = LoadForInference(o.checkpoint, "");
  Model& model = m.state->model;
  if (o.layer == "latent_mean" && model.kind() != HeadKind::kVib) {
    throw ArgumentError("latent_mean needs a VIB checkpoint; this one has a baseline head");
  }
  const DatasetManifest manifest = ReadManifestCacheFile(o.manifest);
  const LabeledInputs data = LoadInputs(manifest, *m.frontend, model, m.cfg.train);
  const int dim = o.layer == "latent_mean" ? model.config().latent_dim : model.config().input_dim;
  std::string text = "# vibspoof-embeddings-table layer=" + o.layer + " dim=" + std::to_string(dim) +
                     " count=" + std::to_string(data.size()) + '\n';
  if (data.size() > 0) {
    const Eigen::MatrixXd v =
        o.layer == "latent_mean" ? model.Posterior(data.x).first : model.Embedding(data.x);
    for (std::size_t i = 0; i < data.size(); ++i) {
      text += data.ids[i] + ' ' + std::string(KeyName(data.keys[i]));
      for (Eigen::Index d = 0; d < v.rows(); ++d) {
        text += ' ' + FormatDouble(v(d, static_cast<Eigen::Index>(i)));
      }
      text += '\n';
    }
  }
  WriteStringToFile(o.out, text);
  log << "exported " << data.size() << " x " << dim << " (" << o.layer << ")\n";
  return text;
}

// ---------------------------------------------------------------------------

// Mean and sample standard deviation of numeric fields across eval reports
// (e.g. the three seeds of a low-resource setting).
inline std::string Aggregate(const std::vector<std::string>& reports, const std::string& out,
                             std::ostream& log) {
  if (reports.empty()) throw ArgumentError("aggregate needs at least one report");
  std::map<std::string, std::vector<double>> values;
  for (const auto& path : reports) {
    std::istringstream in(ReadFileToString(path));
    std::string line;
    while (std::getline(in, line)) {
      const auto cols = SplitWhitespace(line);
      if (cols.size() != 2 || cols[0].front() == '#') continue;
      const std::string key(cols[0]);
      if (key != "eer_percent" && key != "min_tdcf") continue;
      double v;
      if (!ParseDouble(cols[1], &v)) continue;  // "skipped"
      values[key].push_back(v);
    }
  }
  std::string text = "runs " + std::to_string(reports.size()) + '\n';
  for (const auto& [key, v] : values) {
    if (v.size() != reports.size()) {
      throw ValidationError(key + " present in " + std::to_string(v.size()) + " of " +
                            std::to_string(reports.size()) + " reports");
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    const int digits = key == "eer_percent" ? 4 : 6;
    text += key + "_mean " + FormatFixed(mean, digits) + '\n';
    text += key + "_std " + FormatFixed(sd, digits) + '\n';
  }
  if (!out.empty()) WriteStringToFile(out, text);
  log << text;
  return text;
}

}  // namespace vibspoof::cmd
