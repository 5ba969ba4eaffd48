// vibspoof/training.hpp

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

// Fine-tuning: run configuration, AdamW, the dev-EER plateau schedule, the
// epoch loop, checkpoints and the run directory.
//
// The frozen part of the frontend is computed once per utterance; when the
// toy frontend is trainable its affine map lives inside the Model as
// "frontend.proj" and is updated with the head.

#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "vibspoof/common.hpp"
#include "vibspoof/frontend.hpp"
#include "vibspoof/metrics.hpp"
#include "vibspoof/protocol.hpp"
#include "vibspoof/vib.hpp"
#include "vibspoof/wav2vec2.hpp"

namespace vibspoof {

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 1e-6;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double plateau_factor = 0.1;
  int plateau_patience = 8;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  BetaSchedule beta_schedule = BetaSchedule::kEpoch;
  std::optional<double> beta_fixed;  // overrides the schedule
  std::size_t max_length = 0;        // samples; 0 keeps full length

  std::vector<std::string> Problems() const {
    std::vector<std::string> p;
    if (batch_size < 1) p.push_back("batch_size must be >= 1");
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
      p.push_back("learning_rate must be finite and >= 0");
    }
    if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) {
      p.push_back("weight_decay must be finite and >= 0");
    }
    if (!(adam_beta1 >= 0 && adam_beta1 < 1)) p.push_back("adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0 && adam_beta2 < 1)) p.push_back("adam_beta2 must be in [0, 1)");
    if (!(adam_eps > 0)) p.push_back("adam_eps must be > 0");
    if (!(plateau_factor > 0 && plateau_factor < 1)) p.push_back("plateau_factor must be in (0, 1)");
    if (plateau_patience < 1) p.push_back("plateau_patience must be >= 1");
    if (max_epochs < 0) p.push_back("max_epochs must be >= 0");
    if (!(grad_clip >= 0) || !std::isfinite(grad_clip)) p.push_back("grad_clip must be >= 0");
    if (beta_fixed && (!(*beta_fixed >= 0) || !std::isfinite(*beta_fixed))) {
      p.push_back("beta_fixed must be finite and >= 0");
    }
    return p;
  }
};

// Everything a run depends on.  The frontend output width is vib.input_dim.
struct RunConfig {
  HeadKind head = HeadKind::kVib;
  FrontendSpec frontend;
  std::optional<bool> frontend_trainable;  // unset: trainable iff toy
  VIBConfig vib;
  TrainConfig train;

  FrontendSpec ResolvedFrontend() const {
    FrontendSpec f = frontend;
    f.output_dim = vib.input_dim;
    f.trainable = frontend_trainable.value_or(frontend.kind == FrontendKind::kToy);
    return f;
  }

  std::vector<std::string> Problems() const {
    std::vector<std::string> p = vib.Problems();
    for (auto& s : train.Problems()) p.push_back(std::move(s));
    try {
      ResolvedFrontend().Validate();
    } catch (const ConfigError& e) {
      for (const auto& s : e.problems()) p.push_back(s);
    }
    return p;
  }

  void Validate() const {
    auto p = Problems();
    if (!p.empty()) throw ConfigError(p);
  }
};

// ---------------------------------------------------------------------------
// Flat "key = value" config text.

namespace internal {

inline std::optional<bool> ParseBool(std::string_view v) {
  const std::string s = ToLower(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  return std::nullopt;
}

inline std::string JoinInts(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct ConfigKey {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  // Returns an error message, empty on success.
  std::function<std::string(RunConfig&, std::string_view)> set;
};

template <typename T>
ConfigKey IntKey(const char* name, T RunConfig::*group, auto member) {
  return {name, [=](const RunConfig& c) { return std::to_string((c.*group).*member); },
          [=](RunConfig& c, std::string_view v) -> std::string {
            if (!ParseInt(v, &((c.*group).*member))) return "expected an integer";
            return {};
          }};
}

template <typename T>
ConfigKey RealKey(const char* name, T RunConfig::*group, double T::*member) {
  return {name, [=](const RunConfig& c) { return FormatDouble((c.*group).*member); },
          [=](RunConfig& c, std::string_view v) -> std::string {
            double d;
            if (!ParseDouble(v, &d) || std::isnan(d)) return "expected a number";
            (c.*group).*member = d;
            return {};
          }};
}

inline const std::vector<ConfigKey>& ConfigKeys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back({"head", [](const RunConfig& c) { return std::string(HeadKindName(c.head)); },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   if (v == "vib") c.head = HeadKind::kVib;
                   else if (v == "baseline") c.head = HeadKind::kBaseline;
                   else return "expected vib or baseline";
                   return {};
                 }});
    k.push_back({"frontend",
                 [](const RunConfig& c) { return std::string(FrontendKindName(c.frontend.kind)); },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   if (v == "toy") c.frontend.kind = FrontendKind::kToy;
                   else if (v == "pretrained") c.frontend.kind = FrontendKind::kPretrained;
                   else return "expected toy or pretrained";
                   return {};
                 }});
    k.push_back({"frontend_trainable",
                 [](const RunConfig& c) -> std::string {
                   if (!c.frontend_trainable) return "auto";
                   return *c.frontend_trainable ? "true" : "false";
                 },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   if (v == "auto") {
                     c.frontend_trainable.reset();
                     return {};
                   }
                   auto b = ParseBool(v);
                   if (!b) return "expected true, false or auto";
                   c.frontend_trainable = *b;
                   return {};
                 }});
    k.push_back(IntKey("sample_rate", &RunConfig::frontend, &FrontendSpec::sample_rate));
    k.push_back(IntKey("toy_seed", &RunConfig::frontend, &FrontendSpec::toy_seed));
    k.push_back(IntKey("input_dim", &RunConfig::vib, &VIBConfig::input_dim));
    k.push_back({"mlp_dims", [](const RunConfig& c) { return JoinInts(c.vib.mlp_dims); },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   std::vector<int> dims;
                   std::size_t start = 0;
                   while (start <= v.size()) {
                     const std::size_t comma = std::min(v.find(',', start), v.size());
                     int d;
                     if (!ParseInt(Trim(v.substr(start, comma - start)), &d)) {
                       return "expected comma-separated integers";
                     }
                     dims.push_back(d);
                     start = comma + 1;
                   }
                   c.vib.mlp_dims = dims;
                   return {};
                 }});
    k.push_back(IntKey("latent_dim", &RunConfig::vib, &VIBConfig::latent_dim));
    k.push_back(IntKey("classifier_hidden", &RunConfig::vib, &VIBConfig::classifier_hidden));
    k.push_back(IntKey("baseline_hidden", &RunConfig::vib, &VIBConfig::baseline_hidden));
    k.push_back(IntKey("train_samples", &RunConfig::vib, &VIBConfig::train_samples));
    k.push_back({"sample_averaging",
                 [](const RunConfig& c) { return std::string(SampleAveragingName(c.vib.averaging)); },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   for (auto a : {SampleAveraging::kLogits, SampleAveraging::kLatent,
                                  SampleAveraging::kLoss}) {
                     if (v == SampleAveragingName(a)) {
                       c.vib.averaging = a;
                       return {};
                     }
                   }
                   return "expected logits, latent or loss";
                 }});
    k.push_back(RealKey("beta_cap", &RunConfig::vib, &VIBConfig::beta_cap));
    k.push_back(RealKey("beta_rate", &RunConfig::vib, &VIBConfig::beta_rate));
    k.push_back({"beta_schedule",
                 [](const RunConfig& c) -> std::string {
                   return c.train.beta_schedule == BetaSchedule::kEpoch ? "epoch" : "step";
                 },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   if (v == "epoch") c.train.beta_schedule = BetaSchedule::kEpoch;
                   else if (v == "step") c.train.beta_schedule = BetaSchedule::kStep;
                   else return "expected epoch or step";
                   return {};
                 }});
    k.push_back({"beta_fixed",
                 [](const RunConfig& c) -> std::string {
                   return c.train.beta_fixed ? FormatDouble(*c.train.beta_fixed) : "none";
                 },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   if (v == "none") {
                     c.train.beta_fixed.reset();
                     return {};
                   }
                   double d;
                   if (!ParseDouble(v, &d) || std::isnan(d)) return "expected a number or none";
                   c.train.beta_fixed = d;
                   return {};
                 }});
    k.push_back({"class_weight_bonafide",
                 [](const RunConfig& c) { return FormatDouble(c.vib.class_weights.bonafide); },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   if (!ParseDouble(v, &c.vib.class_weights.bonafide)) return "expected a number";
                   return {};
                 }});
    k.push_back({"class_weight_spoof",
                 [](const RunConfig& c) { return FormatDouble(c.vib.class_weights.spoof); },
                 [](RunConfig& c, std::string_view v) -> std::string {
                   if (!ParseDouble(v, &c.vib.class_weights.spoof)) return "expected a number";
                   return {};
                 }});
    k.push_back(RealKey("logvar_min", &RunConfig::vib, &VIBConfig::logvar_min));
    k.push_back(RealKey("logvar_max", &RunConfig::vib, &VIBConfig::logvar_max));
    k.push_back(IntKey("batch_size", &RunConfig::train, &TrainConfig::batch_size));
    k.push_back(RealKey("learning_rate", &RunConfig::train, &TrainConfig::learning_rate));
    k.push_back(RealKey("weight_decay", &RunConfig::train, &TrainConfig::weight_decay));
    k.push_back(RealKey("adam_beta1", &RunConfig::train, &TrainConfig::adam_beta1));
    k.push_back(RealKey("adam_beta2", &RunConfig::train, &TrainConfig::adam_beta2));
    k.push_back(RealKey("adam_eps", &RunConfig::train, &TrainConfig::adam_eps));
    k.push_back(RealKey("plateau_factor", &RunConfig::train, &TrainConfig::plateau_factor));
    k.push_back(IntKey("plateau_patience", &RunConfig::train, &TrainConfig::plateau_patience));
    k.push_back(IntKey("max_epochs", &RunConfig::train, &TrainConfig::max_epochs));
    k.push_back(IntKey("seed", &RunConfig::train, &TrainConfig::seed));
    k.push_back(RealKey("grad_clip", &RunConfig::train, &TrainConfig::grad_clip));
    k.push_back(IntKey("max_length", &RunConfig::train, &TrainConfig::max_length));
    return k;
  }();
  return keys;
}

inline const ConfigKey* FindConfigKey(std::string_view name) {
  for (const auto& k : ConfigKeys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

}  // namespace internal

// Sets one key; returns a problem description, empty on success.
inline std::string SetConfigValue(RunConfig* cfg, std::string_view key, std::string_view value) {
  const auto* k = internal::FindConfigKey(key);
  if (k == nullptr) return "unknown key '" + std::string(key) + "'";
  const std::string err = k->set(*cfg, Trim(value));
  if (!err.empty()) return "bad value '" + std::string(value) + "' for " + std::string(key) + ": " + err;
  return {};
}

// Parses config text over `base`.  Unknown keys, malformed lines, bad values
// and constraint violations are all collected into one ConfigError.
inline RunConfig ParseRunConfig(std::string_view text, RunConfig base = {},
                                const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  std::vector<std::string> problems;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) {
      problems.push_back(where + "expected 'key = value'");
      continue;
    }
    const std::string key(Trim(line.substr(0, eq)));
    if (!seen.insert(key).second) {
      problems.push_back(where + "duplicate key '" + key + "'");
      continue;
    }
    const std::string err = SetConfigValue(&base, key, line.substr(eq + 1));
    if (!err.empty()) problems.push_back(where + err);
  }
  for (const auto& [k, v] : overrides) {
    const std::string err = SetConfigValue(&base, k, v);
    if (!err.empty()) problems.push_back("override: " + err);
  }
  if (problems.empty()) problems = base.Problems();
  if (!problems.empty()) throw ConfigError(problems);
  return base;
}

inline std::string WriteRunConfig(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : internal::ConfigKeys()) out += std::string(k.name) + " = " + k.get(cfg) + '\n';
  return out;
}

// Keys whose values differ.  `ignore` names keys allowed to differ.
inline std::vector<std::string> ConfigDifferences(const RunConfig& a, const RunConfig& b,
                                                  const std::vector<std::string>& ignore = {}) {
  std::vector<std::string> out;
  for (const auto& k : internal::ConfigKeys()) {
    if (std::find(ignore.begin(), ignore.end(), k.name) != ignore.end()) continue;
    const auto va = k.get(a), vb = k.get(b);
    if (va != vb) out.push_back(std::string(k.name) + ": " + va + " vs " + vb);
  }
  return out;
}

// Keys that only steer optimisation; a checkpoint stays usable for scoring
// when these differ.
inline const std::vector<std::string>& OptimisationKeys() {
  static const std::vector<std::string> keys{
      "train_samples", "sample_averaging", "beta_cap",   "beta_rate",      "beta_schedule",
      "beta_fixed",    "class_weight_bonafide", "class_weight_spoof", "batch_size",
      "learning_rate", "weight_decay", "adam_beta1", "adam_beta2", "adam_eps",
      "plateau_factor", "plateau_patience", "max_epochs", "seed", "grad_clip", "max_length"};
  return keys;
}

// ---------------------------------------------------------------------------
// Seeds and schedules.

inline std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class SeedStream : std::uint64_t { kInit = 1, kShuffle = 2, kNoise = 3 };

// Independent stream per (seed, purpose, epoch) so a resumed run draws the
// same numbers as an uninterrupted one.
inline std::uint64_t DeriveSeed(std::uint64_t seed, SeedStream stream, std::int64_t epoch = 0) {
  return SplitMix64(SplitMix64(SplitMix64(seed) ^ static_cast<std::uint64_t>(stream)) ^
                    static_cast<std::uint64_t>(epoch));
}

inline double BetaForBatch(const RunConfig& cfg, std::int64_t epoch, std::int64_t global_step) {
  if (cfg.train.beta_fixed) return *cfg.train.beta_fixed;
  return cfg.train.beta_schedule == BetaSchedule::kEpoch ? BetaAt(epoch, cfg.vib)
                                                         : BetaAt(global_step, cfg.vib);
}

struct PlateauState {
  double lr = 0.0;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  int reductions = 0;

  bool operator==(const PlateauState&) const = default;
};

// One scheduler update after an epoch.  Only a strict improvement of the
// best-so-far resets the counter; after `patience` bad epochs in a row the
// rate is multiplied by `factor` and the counter starts over.
inline PlateauState PlateauStep(PlateauState s, double dev_eer, double factor, int patience) {
  if (dev_eer < s.best) {
    s.best = dev_eer;
    s.bad_epochs = 0;
    return s;
  }
  if (++s.bad_epochs >= patience) {
    s.lr *= factor;
    s.bad_epochs = 0;
    ++s.reductions;
  }
  return s;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay.

struct AdamWState {
  std::int64_t step = 0;
  std::vector<double> m, v;
};

inline double GradNorm(const std::vector<ParamRef>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.size(); ++i) s += p.grad[i] * p.grad[i];
  }
  return std::sqrt(s);
}

inline void AdamWStep(const std::vector<ParamRef>& params, AdamWState& st, const TrainConfig& cfg,
                      double lr) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  if (st.m.empty()) {
    st.m.assign(total, 0.0);
    st.v.assign(total, 0.0);
  }
  if (st.m.size() != total || st.v.size() != total) {
    throw ArgumentError("optimizer state does not match the parameter count");
  }
  double clip = 1.0;
  if (cfg.grad_clip > 0) {
    const double norm = GradNorm(params);
    if (norm > cfg.grad_clip) clip = cfg.grad_clip / norm;
  }
  ++st.step;
  const double bc1 = 1 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
  const double bc2 = 1 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
  std::size_t k = 0;
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.size(); ++i, ++k) {
      const double g = p.grad[i] * clip;
      st.m[k] = cfg.adam_beta1 * st.m[k] + (1 - cfg.adam_beta1) * g;
      st.v[k] = cfg.adam_beta2 * st.v[k] + (1 - cfg.adam_beta2) * g * g;
      const double mhat = st.m[k] / bc1, vhat = st.v[k] / bc2;
      p.value[i] -= lr * cfg.weight_decay * p.value[i];
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Data.

// One column per utterance, in manifest order.
struct LabeledInputs {
  Eigen::MatrixXd x;
  std::vector<TrialKey> keys;
  std::vector<std::string> ids;

  std::size_t size() const { return ids.size(); }
};

inline std::unique_ptr<Frontend> MakeFrontend(const RunConfig& cfg,
                                              const std::filesystem::path& pretrained_dir = {}) {
  const FrontendSpec spec = cfg.ResolvedFrontend();
  spec.Validate();
  if (spec.kind == FrontendKind::kToy) return std::make_unique<ToyFrontend>(spec);
  return PretrainedFrontend::Load(spec, pretrained_dir);
}

inline Model MakeModel(const RunConfig& cfg, const Frontend& frontend) {
  cfg.Validate();
  const FrontendSpec spec = cfg.ResolvedFrontend();
  if (frontend.output_dim() != cfg.vib.input_dim) {
    throw ConfigError("frontend emits " + std::to_string(frontend.output_dim()) +
                      " values but input_dim is " + std::to_string(cfg.vib.input_dim));
  }
  std::optional<Linear> proj;
  if (spec.trainable && frontend.has_projection()) {
    proj = Linear(frontend.output_dim(), frontend.encoded_dim());
    proj->w = *frontend.projection_weight();
    proj->b = *frontend.projection_bias();
  }
  return Model(cfg.head, cfg.vib, DeriveSeed(cfg.train.seed, SeedStream::kInit),
               proj ? &*proj : nullptr);
}

// Frozen-stage features for the model input: raw encodings when the model
// owns the projection, projected embeddings otherwise.  `projected` marks
// input that is already projected (an embedding cache).
inline LabeledInputs ModelInputs(const std::vector<Eigen::VectorXd>& encoded,
                                 const DatasetManifest& manifest, const Frontend& frontend,
                                 const Model& model, bool projected = false) {
  LabeledInputs out;
  const Eigen::Index rows = model.input_rows();
  out.x.resize(rows, static_cast<Eigen::Index>(encoded.size()));
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    const Eigen::VectorXd v = model.has_projection() || projected ? encoded[i]
                                                                  : frontend.Project(encoded[i]);
    if (v.size() != rows) {
      throw ValidationError("feature for '" + manifest.entries[i].utterance_id + "' has " +
                            std::to_string(v.size()) + " values, the model expects " +
                            std::to_string(rows));
    }
    out.x.col(static_cast<Eigen::Index>(i)) = v;
  }
  for (const auto& e : manifest.entries) {
    out.keys.push_back(e.key);
    out.ids.push_back(e.utterance_id);
  }
  return out;
}

inline LabeledInputs LoadInputs(const DatasetManifest& manifest, const Frontend& frontend,
                                const Model& model, const TrainConfig& train) {
  const auto encoded = EncodeManifest(frontend, manifest,
                                      static_cast<std::size_t>(train.batch_size), train.max_length);
  return ModelInputs(encoded, manifest, frontend, model);
}

// Eval-mode scores (z = mu), computed in chunks of `chunk` columns.
inline std::vector<double> ScoreInputs(Model& model, const Eigen::MatrixXd& x,
                                       Eigen::Index chunk = 64) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, x.cols() - start);
    const std::vector<TrialKey> keys(static_cast<std::size_t>(n), TrialKey::kBonafide);
    const BatchResult r = model.Loss(x.middleCols(start, n), keys, 0.0, Mode::kEval, nullptr);
    const Eigen::VectorXd s = r.Scores();
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(s[i]);
  }
  return out;
}

inline std::vector<ScoreRecord> ScoreRecords(Model& model, const LabeledInputs& data) {
  const auto scores = ScoreInputs(model, data.x);
  std::vector<ScoreRecord> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.push_back({data.ids[i], scores[i], i < data.keys.size() ? data.keys[i] : TrialKey::kUnknown});
  }
  return out;
}

inline double DevEer(Model& model, const LabeledInputs& dev) {
  return ComputeEer(ScoreRecords(model, dev)).eer;
}

// ---------------------------------------------------------------------------
// Training state and the epoch loop.

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;
  double train_kl = 0.0;
  double train_ce = 0.0;
  double dev_eer = 0.0;
  double lr = 0.0;
  double beta = 0.0;

  bool operator==(const EpochReport&) const = default;
};

inline std::string FormatReport(const EpochReport& r) {
  return "epoch=" + std::to_string(r.epoch) + " train_loss=" + FormatDouble(r.train_loss) +
         " train_kl=" + FormatDouble(r.train_kl) + " train_ce=" + FormatDouble(r.train_ce) +
         " dev_eer=" + FormatDouble(r.dev_eer) + " lr=" + FormatDouble(r.lr) +
         " beta=" + FormatDouble(r.beta);
}

struct TrainingState {
  Model model;
  AdamWState opt;
  PlateauState sched;
  int next_epoch = 0;
  std::int64_t global_step = 0;
  int best_epoch = -1;
  double best_eer = std::numeric_limits<double>::infinity();
  std::vector<EpochReport> reports;
};

inline TrainingState InitialState(const RunConfig& cfg, const Frontend& frontend) {
  TrainingState s{MakeModel(cfg, frontend), {}, {}, 0, 0, -1,
                  std::numeric_limits<double>::infinity(), {}};
  s.sched.lr = cfg.train.learning_rate;
  return s;
}

// One shuffled pass with per-batch updates.  Fills every report field except
// dev_eer.  Losses are weighted means over the whole epoch.
inline EpochReport TrainEpoch(TrainingState& st, const LabeledInputs& data, const RunConfig& cfg) {
  const int epoch = st.next_epoch;
  const std::size_t n = data.size();
  if (n == 0) throw ValidationError("training set is empty");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng(DeriveSeed(cfg.train.seed, SeedStream::kShuffle, epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  Rng noise_rng(DeriveSeed(cfg.train.seed, SeedStream::kNoise, epoch));

  EpochReport rep;
  rep.epoch = epoch;
  rep.lr = st.sched.lr;
  rep.beta = BetaForBatch(cfg, epoch, st.global_step);
  double ce_num = 0.0, weight_sum = 0.0, kl_sum = 0.0, beta_kl_sum = 0.0;
  const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);
  const Eigen::Index rows = data.x.rows();
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t m = std::min(bs, n - start);
    Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(m));
    std::vector<TrialKey> keys(m);
    for (std::size_t j = 0; j < m; ++j) {
      x.col(static_cast<Eigen::Index>(j)) = data.x.col(static_cast<Eigen::Index>(order[start + j]));
      keys[j] = data.keys[order[start + j]];
      if (keys[j] == TrialKey::kUnknown) {
        throw ValidationError("training utterance '" + data.ids[order[start + j]] + "' has no key");
      }
    }
    const double beta = BetaForBatch(cfg, epoch, st.global_step);
    st.model.ZeroGrad();
    BatchResult r;
    try {
      r = st.model.Loss(x, keys, beta, Mode::kTrain, &noise_rng, true);
    } catch (const NumericalError& e) {
      std::vector<std::string> ids;
      for (std::size_t j = 0; j < m; ++j) ids.push_back(data.ids[order[start + j]]);
      throw NumericalError("epoch " + std::to_string(epoch) + ", batch starting at item " +
                           std::to_string(start) + ": " + e.what() +
                           "; batch ids: " + internal::ListIds(ids));
    }
    AdamWStep(st.model.Params(), st.opt, cfg.train, st.sched.lr);
    ++st.global_step;
    for (std::size_t j = 0; j < m; ++j) {
      const double w = cfg.vib.class_weights[keys[j]];
      ce_num += w * r.nll[static_cast<Eigen::Index>(j)];
      weight_sum += w;
      kl_sum += r.kl[static_cast<Eigen::Index>(j)];
      beta_kl_sum += beta * r.kl[static_cast<Eigen::Index>(j)];
    }
  }
  rep.train_ce = ce_num / weight_sum;
  rep.train_kl = kl_sum / static_cast<double>(n);
  rep.train_loss = beta_kl_sum / static_cast<double>(n) + rep.train_ce;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints: "VIBSPOOFCKPT 1\n", a decimal header length and newline, a
// JSON header, then little-endian float64 tensors (parameters in canonical
// order, then the AdamW first and second moments when present).

inline constexpr std::string_view kCheckpointMagic = "VIBSPOOFCKPT 1";

struct Checkpoint {
  RunConfig config;
  std::string frontend_version;
  int next_epoch = 0;
  std::int64_t global_step = 0;
  PlateauState sched;
  int best_epoch = -1;
  double best_eer = std::numeric_limits<double>::infinity();
  std::vector<EpochReport> reports;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> params;
  AdamWState opt;
};

inline Checkpoint Capture(TrainingState& st, const RunConfig& cfg, const std::string& frontend_version) {
  Checkpoint c{cfg, frontend_version, st.next_epoch, st.global_step, st.sched,
               st.best_epoch, st.best_eer, st.reports, {}, st.opt};
  for (const auto& p : st.model.Params()) {
    c.params.emplace_back(p.name, Eigen::Map<const Eigen::MatrixXd>(p.value, p.rows, p.cols));
  }
  return c;
}

namespace internal {

inline nlohmann::json ReportJson(const EpochReport& r) {
  return {{"epoch", r.epoch},
          {"train_loss", FormatDouble(r.train_loss)},
          {"train_kl", FormatDouble(r.train_kl)},
          {"train_ce", FormatDouble(r.train_ce)},
          {"dev_eer", FormatDouble(r.dev_eer)},
          {"lr", FormatDouble(r.lr)},
          {"beta", FormatDouble(r.beta)}};
}

inline double JsonReal(const nlohmann::json& j, const char* key) {
  double d;
  if (!j.contains(key) || !j[key].is_string() || !ParseDouble(j[key].get<std::string>(), &d)) {
    throw ParseError(std::string("checkpoint header: bad field '") + key + "'");
  }
  return d;
}

}  // namespace internal

inline std::string WriteCheckpoint(const Checkpoint& c) {
  nlohmann::json h;
  h["config"] = WriteRunConfig(c.config);
  h["frontend_version"] = c.frontend_version;
  h["next_epoch"] = c.next_epoch;
  h["global_step"] = c.global_step;
  h["sched"] = {{"lr", FormatDouble(c.sched.lr)},
                {"best", FormatDouble(c.sched.best)},
                {"bad_epochs", c.sched.bad_epochs},
                {"reductions", c.sched.reductions}};
  h["best_epoch"] = c.best_epoch;
  h["best_eer"] = FormatDouble(c.best_eer);
  h["reports"] = nlohmann::json::array();
  for (const auto& r : c.reports) h["reports"].push_back(internal::ReportJson(r));
  h["tensors"] = nlohmann::json::array();
  std::size_t total = 0;
  for (const auto& [name, m] : c.params) {
    h["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    total += static_cast<std::size_t>(m.size());
  }
  const bool has_opt = !c.opt.m.empty();
  if (has_opt && (c.opt.m.size() != total || c.opt.v.size() != total)) {
    throw ArgumentError("optimizer state does not match the parameters");
  }
  h["optimizer"] = {{"present", has_opt}, {"step", c.opt.step}};

  std::string payload;
  auto put = [&](const double* d, std::size_t n) {
    payload.append(reinterpret_cast<const char*>(d), n * sizeof(double));
  };
  for (const auto& [name, m] : c.params) put(m.data(), static_cast<std::size_t>(m.size()));
  if (has_opt) {
    put(c.opt.m.data(), total);
    put(c.opt.v.data(), total);
  }
  Fnv1a64 hash;
  hash.Update(payload);
  h["payload_bytes"] = payload.size();
  h["payload_fnv1a64"] = hash.hex();
  const std::string header = h.dump(1);
  return std::string(kCheckpointMagic) + '\n' + std::to_string(header.size()) + '\n' + header +
         payload;
}

inline Checkpoint ReadCheckpoint(const std::string& bytes, const std::string& what = "checkpoint") {
  static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");
  const std::string magic = std::string(kCheckpointMagic) + '\n';
  if (bytes.compare(0, magic.size(), magic) != 0) {
    throw ParseError(what + ": not a vibspoof checkpoint (bad magic)");
  }
  std::size_t pos = magic.size();
  const std::size_t nl = bytes.find('\n', pos);
  std::size_t header_len = 0;
  if (nl == std::string::npos || !ParseInt(std::string_view(bytes).substr(pos, nl - pos), &header_len) ||
      nl + 1 + header_len > bytes.size()) {
    throw ParseError(what + ": corrupt header length");
  }
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(nl + 1, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": corrupt header: " + e.what());
  }
  const std::string payload = bytes.substr(nl + 1 + header_len);
  try {
    Checkpoint c;
    c.config = ParseRunConfig(h.at("config").get<std::string>());
    c.frontend_version = h.at("frontend_version").get<std::string>();
    c.next_epoch = h.at("next_epoch").get<int>();
    c.global_step = h.at("global_step").get<std::int64_t>();
    const auto& s = h.at("sched");
    c.sched = {internal::JsonReal(s, "lr"), internal::JsonReal(s, "best"),
               s.at("bad_epochs").get<int>(), s.at("reductions").get<int>()};
    c.best_epoch = h.at("best_epoch").get<int>();
    c.best_eer = internal::JsonReal(h, "best_eer");
    for (const auto& r : h.at("reports")) {
      c.reports.push_back({r.at("epoch").get<int>(), internal::JsonReal(r, "train_loss"),
                           internal::JsonReal(r, "train_kl"), internal::JsonReal(r, "train_ce"),
                           internal::JsonReal(r, "dev_eer"), internal::JsonReal(r, "lr"),
                           internal::JsonReal(r, "beta")});
    }
    if (h.at("payload_bytes").get<std::size_t>() != payload.size()) {
      throw ParseError(what + ": truncated payload");
    }
    Fnv1a64 hash;
    hash.Update(payload);
    if (h.at("payload_fnv1a64").get<std::string>() != hash.hex()) {
      throw ParseError(what + ": payload checksum mismatch");
    }
    std::size_t off = 0;
    auto take = [&](double* dst, std::size_t n) {
      if (off + n * sizeof(double) > payload.size()) throw ParseError(what + ": payload too short");
      std::memcpy(dst, payload.data() + off, n * sizeof(double));
      off += n * sizeof(double);
    };
    std::size_t total = 0;
    for (const auto& t : h.at("tensors")) {
      Eigen::MatrixXd m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
      take(m.data(), static_cast<std::size_t>(m.size()));
      total += static_cast<std::size_t>(m.size());
      c.params.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
    c.opt.step = h.at("optimizer").at("step").get<std::int64_t>();
    if (h.at("optimizer").at("present").get<bool>()) {
      c.opt.m.resize(total);
      c.opt.v.resize(total);
      take(c.opt.m.data(), total);
      take(c.opt.v.data(), total);
    }
    if (off != payload.size()) throw ParseError(what + ": trailing payload bytes");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": bad header field: " + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(what + ": stored config is invalid: " + e.what());
  }
}

inline Checkpoint ReadCheckpointFile(const std::filesystem::path& path) {
  return ReadCheckpoint(ReadFileToString(path.string()), path.string());
}

// Rebuilds the training state.  The frontend must be the one the checkpoint
// was trained with; tensor names and shapes must match the configured model.
inline TrainingState Restore(const Checkpoint& c, const Frontend& frontend) {
  if (frontend.VersionHash() != c.frontend_version) {
    throw ConfigError("checkpoint was trained with frontend version " + c.frontend_version +
                      " but the configured frontend is " + frontend.VersionHash());
  }
  TrainingState st = InitialState(c.config, frontend);
  auto params = st.model.Params();
  std::vector<std::string> problems;
  if (params.size() != c.params.size()) {
    problems.push_back("checkpoint holds " + std::to_string(c.params.size()) +
                       " tensors, the model has " + std::to_string(params.size()));
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, m] = c.params[i];
      if (name != params[i].name || m.rows() != params[i].rows || m.cols() != params[i].cols) {
        problems.push_back("tensor " + std::to_string(i) + ": checkpoint has " + name + " [" +
                           std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                           "], model expects " + params[i].name + " [" +
                           std::to_string(params[i].rows) + "x" + std::to_string(params[i].cols) + "]");
      }
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(c.params[i].second.data(), c.params[i].second.data() + params[i].size(),
              params[i].value);
  }
  st.opt = c.opt;
  st.sched = c.sched;
  st.next_epoch = c.next_epoch;
  st.global_step = c.global_step;
  st.best_epoch = c.best_epoch;
  st.best_eer = c.best_eer;
  st.reports = c.reports;
  return st;
}

// ---------------------------------------------------------------------------
// Run directory:
//   config.txt      resolved config, written before any work
//   run.json        command, seed, paths, head, timestamps, best checkpoint
//   reports.log     one "key=value ..." line per finished epoch
//   last.ckpt       state after the latest epoch (for resuming)
//   epoch-NNN_deer-X.XXXX.ckpt   best checkpoint so far by dev EER

class RunDirectory {
 public:
  // Creates `dir`; it must not exist yet.
  static RunDirectory Create(const std::filesystem::path& dir, const RunConfig& cfg,
                             const std::string& command, const std::string& config_path) {
    std::error_code ec;
    if (std::filesystem::exists(dir, ec)) {
      throw ArgumentError("output directory '" + dir.string() +
                          "' already exists; use a fresh directory or --resume");
    }
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    RunDirectory r(dir);
    WriteStringToFile((dir / "config.txt").string(), WriteRunConfig(cfg));
    r.meta_ = {{"command", command},
               {"config_path", config_path},
               {"seed", cfg.train.seed},
               {"output_dir", dir.string()},
               {"head", std::string(HeadKindName(cfg.head))},
               {"frontend", std::string(FrontendKindName(cfg.frontend.kind))},
               {"started", Timestamp()},
               {"resumed", nlohmann::json::array()},
               {"finished", nullptr},
               {"best_checkpoint", nullptr}};
    r.WriteMeta();
    return r;
  }

  static RunDirectory Open(const std::filesystem::path& dir) {
    RunDirectory r(dir);
    const auto meta = dir / "run.json";
    try {
      r.meta_ = nlohmann::json::parse(ReadFileToString(meta.string()));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(meta.string() + ": " + e.what());
    }
    r.meta_["resumed"].push_back(Timestamp());
    r.WriteMeta();
    return r;
  }

  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path last_checkpoint() const { return dir_ / "last.ckpt"; }

  static std::string BestName(int epoch, double eer) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "epoch-%03d_deer-%.4f.ckpt", epoch, eer);
    return buf;
  }

  // Persists the state after an epoch; `improved` also writes a best file.
  void Record(const Checkpoint& c, bool improved) {
    std::string report_log;
    for (const auto& r : c.reports) report_log += FormatReport(r) + '\n';
    const std::string bytes = WriteCheckpoint(c);
    if (improved) {
      const auto name = BestName(c.best_epoch, c.best_eer);
      WriteAtomically(dir_ / name, bytes);
      if (meta_["best_checkpoint"].is_string()) {
        const auto old = dir_ / meta_["best_checkpoint"].get<std::string>();
        if (old.filename() != name) std::filesystem::remove(old);
      }
      meta_["best_checkpoint"] = name;
      meta_["best_epoch"] = c.best_epoch;
      meta_["best_dev_eer"] = FormatDouble(c.best_eer);
    }
    WriteAtomically(last_checkpoint(), bytes);
    WriteAtomically(dir_ / "reports.log", report_log);
    WriteMeta();
  }

  void Finish() {
    meta_["finished"] = Timestamp();
    WriteMeta();
  }

  // Best checkpoint path recorded in run.json of `dir`.
  static std::filesystem::path BestCheckpoint(const std::filesystem::path& dir) {
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(ReadFileToString((dir / "run.json").string()));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError((dir / "run.json").string() + ": " + e.what());
    }
    if (!meta.contains("best_checkpoint") || !meta["best_checkpoint"].is_string()) {
      throw ValidationError("run directory '" + dir.string() + "' has no best checkpoint yet");
    }
    return dir / meta["best_checkpoint"].get<std::string>();
  }

 private:
  explicit RunDirectory(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static std::string Timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  static void WriteAtomically(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = path.string() + ".tmp";
    WriteStringToFile(tmp, bytes);
    std::filesystem::rename(tmp, path);
  }

  void WriteMeta() { WriteAtomically(dir_ / "run.json", meta_.dump(2) + '\n'); }

  std::filesystem::path dir_;
  nlohmann::json meta_;
};

// ---------------------------------------------------------------------------

struct FitResult {
  Checkpoint best;
  std::vector<EpochReport> reports;  // every epoch, including resumed ones
};

// Trains from `st` until max_epochs.  After each epoch the dev EER feeds the
// plateau schedule and best-checkpoint selection (strictly lower EER wins, so
// ties keep the earlier epoch).  `run` may be null.  When resuming, pass the
// best checkpoint written so far as `prior_best`.
inline FitResult Fit(TrainingState& st, const LabeledInputs& train, const LabeledInputs& dev,
                     const RunConfig& cfg, const std::string& frontend_version,
                     RunDirectory* run = nullptr,
                     const std::function<void(const EpochReport&)>& on_epoch = {},
                     std::optional<Checkpoint> prior_best = std::nullopt) {
  cfg.Validate();
  FitResult out;
  out.best = prior_best ? std::move(*prior_best) : Capture(st, cfg, frontend_version);
  if (st.next_epoch >= cfg.train.max_epochs) {
    out.reports = st.reports;
    return out;
  }
  {
    std::unordered_set<std::string_view> train_ids(train.ids.begin(), train.ids.end());
    std::vector<std::string> shared;
    for (const auto& id : dev.ids) {
      if (train_ids.count(id)) shared.push_back(id);
    }
    if (!shared.empty()) {
      throw ValidationError("train and dev share " + std::to_string(shared.size()) +
                            " utterance id(s): " + internal::ListIds(shared));
    }
    const auto n_bona = std::count(dev.keys.begin(), dev.keys.end(), TrialKey::kBonafide);
    const auto n_spoof = std::count(dev.keys.begin(), dev.keys.end(), TrialKey::kSpoof);
    if (n_bona == 0 || n_spoof == 0) {
      throw ValidationError("dev set needs both bonafide and spoof utterances to compute an EER");
    }
  }
  while (st.next_epoch < cfg.train.max_epochs) {
    EpochReport rep = TrainEpoch(st, train, cfg);
    rep.dev_eer = DevEer(st.model, dev);
    st.sched = PlateauStep(st.sched, rep.dev_eer, cfg.train.plateau_factor,
                           cfg.train.plateau_patience);
    st.reports.push_back(rep);
    ++st.next_epoch;
    const bool improved = rep.dev_eer < st.best_eer;
    if (improved) {
      st.best_eer = rep.dev_eer;
      st.best_epoch = rep.epoch;
    }
    Checkpoint c = Capture(st, cfg, frontend_version);
    if (improved) out.best = c;
    if (run != nullptr) run->Record(c, improved);
    if (on_epoch) on_epoch(rep);
  }
  if (run != nullptr) run->Finish();
  out.reports = st.reports;
  return out;
}

}  // namespace vibspoof
