// vibspoof/frontend.hpp

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

// Waveform -> fixed-dimension speech embedding.
//
// A frontend is split in two stages so that training can cache the expensive
// part:
//
//   Encode(samples)  -> "frozen" vector (never receives gradient)
//   Project(frozen)  -> embedding x     (affine, optionally trainable)
//
// The toy frontend encodes to mean-pooled frame features and projects with a
// seeded affine map.  The pretrained adapter encodes straight to the
// mean-pooled context vectors and its projection is the identity.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vibspoof/audio.hpp"
#include "vibspoof/common.hpp"
#include "vibspoof/protocol.hpp"

namespace vibspoof {

enum class FrontendKind { kPretrained, kToy };

inline std::string_view FrontendKindName(FrontendKind k) {
  return k == FrontendKind::kToy ? "toy" : "pretrained";
}

struct FrontendSpec {
  FrontendKind kind = FrontendKind::kToy;
  int output_dim = 768;
  bool trainable = true;
  int sample_rate = 16000;
  std::uint64_t toy_seed = 20220801;

  // Throws ConfigError listing every violated constraint.
  void Validate() const {
    std::vector<std::string> problems;
    if (output_dim <= 0) problems.push_back("frontend output_dim must be positive");
    if (sample_rate <= 0) problems.push_back("sample_rate must be positive");
    if (kind == FrontendKind::kPretrained && output_dim != 768) {
      problems.push_back("pretrained frontend requires output_dim = 768");
    }
    if (kind == FrontendKind::kPretrained && trainable) {
      problems.push_back(
          "pretrained frontend is inference-only here; set frontend_trainable = false");
    }
    if (!problems.empty()) throw ConfigError(problems);
  }
};

struct SpeechEmbedding {
  std::string utterance_id;
  Eigen::VectorXd values;
};

// Right-padding record produced by Collate().
struct PaddingPlan {
  std::size_t padded_length = 0;
  std::vector<std::size_t> true_lengths;
  double pad_value = 0.0;
};

struct PaddedBatch {
  std::vector<std::vector<double>> rows;  // each of padded_length samples
  int sample_rate = 16000;
};

// Pads every waveform with zeros up to the longest one in the batch.
inline std::pair<PaddedBatch, PaddingPlan> Collate(std::span<const Waveform> batch) {
  if (batch.empty()) throw ArgumentError("cannot collate an empty batch");
  PaddingPlan plan;
  PaddedBatch out;
  out.sample_rate = batch.front().sample_rate;
  for (const auto& w : batch) {
    if (w.sample_rate != out.sample_rate) {
      throw ValidationError("batch mixes sample rates " + std::to_string(out.sample_rate) +
                            " and " + std::to_string(w.sample_rate));
    }
    plan.true_lengths.push_back(w.samples.size());
    plan.padded_length = std::max(plan.padded_length, w.samples.size());
  }
  out.rows.reserve(batch.size());
  for (const auto& w : batch) {
    auto& row = out.rows.emplace_back(w.samples);
    row.resize(plan.padded_length, plan.pad_value);
  }
  return {std::move(out), std::move(plan)};
}

class Frontend {
 public:
  virtual ~Frontend() = default;

  virtual FrontendKind kind() const = 0;
  virtual int output_dim() const = 0;
  virtual int encoded_dim() const = 0;
  virtual int sample_rate() const = 0;
  // Hash of everything that determines the embedding.
  virtual std::string VersionHash() const = 0;

  // Frozen stage on an unpadded, rate-checked waveform.
  virtual Eigen::VectorXd Encode(std::span<const double> samples) const = 0;

  // Trainable stage.  Identity unless the frontend has affine parameters.
  virtual Eigen::VectorXd Project(const Eigen::VectorXd& encoded) const { return encoded; }
  virtual bool has_projection() const { return false; }
  virtual Eigen::MatrixXd* projection_weight() { return nullptr; }
  virtual Eigen::VectorXd* projection_bias() { return nullptr; }
  const Eigen::MatrixXd* projection_weight() const {
    return const_cast<Frontend*>(this)->projection_weight();
  }
  const Eigen::VectorXd* projection_bias() const {
    return const_cast<Frontend*>(this)->projection_bias();
  }

  void CheckRate(int rate) const {
    if (rate != sample_rate()) {
      throw ValidationError("frontend expects " + std::to_string(sample_rate()) +
                            " Hz audio, got " + std::to_string(rate) + " Hz");
    }
  }
};

// ---------------------------------------------------------------------------
// Toy frontend: 25 ms frames every 10 ms; per frame the log-energy plus log
// power of a fixed bank of windowed cosine projections.  Frames are averaged
// and mapped to output_dim by a seeded affine map.

class ToyFrontend : public Frontend {
 public:
  static constexpr int kBankSize = 16;

  explicit ToyFrontend(const FrontendSpec& spec)
      : output_dim_(spec.output_dim),
        sample_rate_(spec.sample_rate),
        seed_(spec.toy_seed),
        window_(static_cast<std::size_t>(std::lround(0.025 * spec.sample_rate))),
        hop_(static_cast<std::size_t>(std::lround(0.010 * spec.sample_rate))) {
    if (output_dim_ <= 0) throw ArgumentError("toy frontend output_dim must be positive");
    if (window_ < 2 || hop_ < 1) throw ArgumentError("sample rate too low for toy frontend");
    const double n = static_cast<double>(window_);
    hann_.resize(static_cast<Eigen::Index>(window_));
    for (std::size_t i = 0; i < window_; ++i) {
      hann_[static_cast<Eigen::Index>(i)] =
          0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / n);
    }
    // Geometric spacing of cosine indices from ~100 Hz up to 0.95 Nyquist.
    const double lo = std::max(1.0, 100.0 * 2.0 * n / spec.sample_rate);
    const double hi = 0.95 * n;
    bank_.resize(kBankSize, static_cast<Eigen::Index>(window_));
    for (int j = 0; j < kBankSize; ++j) {
      const double k = std::round(lo * std::pow(hi / lo, j / double(kBankSize - 1)));
      for (std::size_t i = 0; i < window_; ++i) {
        bank_(j, static_cast<Eigen::Index>(i)) =
            (2.0 / n) * hann_[static_cast<Eigen::Index>(i)] *
            std::cos(std::numbers::pi * k * (i + 0.5) / n);
      }
    }
    std::mt19937_64 rng(seed_);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(kFeatureDim)));
    weight_.resize(output_dim_, kFeatureDim);
    for (Eigen::Index c = 0; c < weight_.cols(); ++c) {
      for (Eigen::Index r = 0; r < weight_.rows(); ++r) weight_(r, c) = normal(rng);
    }
    bias_ = Eigen::VectorXd::Zero(output_dim_);
  }

  static constexpr int kFeatureDim = 1 + kBankSize;

  FrontendKind kind() const override { return FrontendKind::kToy; }
  int output_dim() const override { return output_dim_; }
  int encoded_dim() const override { return kFeatureDim; }
  int sample_rate() const override { return sample_rate_; }
  std::size_t window() const { return window_; }
  std::size_t hop() const { return hop_; }

  std::string VersionHash() const override {
    Fnv1a64 h;
    h.Update("toy-frontend-v2|" + std::to_string(sample_rate_) + "|" +
             std::to_string(output_dim_) + "|" + std::to_string(seed_));
    h.Update(weight_.data(), sizeof(double) * static_cast<std::size_t>(weight_.size()));
    h.Update(bias_.data(), sizeof(double) * static_cast<std::size_t>(bias_.size()));
    return h.hex();
  }

  // Per-frame features; frames shorter than the window (only possible when
  // the whole signal is shorter) are zero-extended.
  Eigen::VectorXd FrameFeatures(std::span<const double> frame) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(window_));
    for (std::size_t i = 0; i < frame.size() && i < window_; ++i) {
      x[static_cast<Eigen::Index>(i)] = frame[i];
    }
    // Log powers, shifted and scaled to roughly unit range.
    auto scaled_log = [](double p) { return (std::log(1e-10 + p) + 10.0) / 5.0; };
    Eigen::VectorXd f(kFeatureDim);
    f[0] = scaled_log(x.squaredNorm() / static_cast<double>(window_));
    const Eigen::VectorXd proj = bank_ * x;
    for (int j = 0; j < kBankSize; ++j) f[1 + j] = scaled_log(proj[j] * proj[j]);
    return f;
  }

  std::size_t FrameCount(std::size_t length) const {
    if (length == 0) return 0;
    if (length < window_) return 1;
    return 1 + (length - window_) / hop_;
  }

  // Mean of the frame features over every frame that lies within `samples`.
  Eigen::VectorXd Encode(std::span<const double> samples) const override {
    if (samples.empty()) throw ValidationError("cannot embed an empty waveform");
    const std::size_t frames = FrameCount(samples.size());
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(kFeatureDim);
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t start = t * hop_;
      acc += FrameFeatures(samples.subspan(start, std::min(window_, samples.size() - start)));
    }
    return acc / static_cast<double>(frames);
  }

  Eigen::VectorXd Project(const Eigen::VectorXd& encoded) const override {
    return weight_ * encoded + bias_;
  }
  bool has_projection() const override { return true; }
  Eigen::MatrixXd* projection_weight() override { return &weight_; }
  Eigen::VectorXd* projection_bias() override { return &bias_; }

 private:
  int output_dim_;
  int sample_rate_;
  std::uint64_t seed_;
  std::size_t window_;
  std::size_t hop_;
  Eigen::VectorXd hann_;
  Eigen::MatrixXd bank_;
  Eigen::MatrixXd weight_;
  Eigen::VectorXd bias_;
};

// Embeds one waveform (evaluation mode).
inline SpeechEmbedding Embed(const Frontend& frontend, const Waveform& w,
                             std::string utterance_id = {}) {
  frontend.CheckRate(w.sample_rate);
  ValidateWaveform(w, utterance_id.empty() ? "waveform" : "waveform '" + utterance_id + "'");
  return {std::move(utterance_id), frontend.Project(frontend.Encode(w.samples))};
}

// Frozen-stage outputs for a padded batch.  Only the first true_length
// samples of each row are read, so pad content never reaches the pooling.
inline std::vector<Eigen::VectorXd> EncodeBatch(const Frontend& frontend, const PaddedBatch& batch,
                                                const PaddingPlan& plan) {
  frontend.CheckRate(batch.sample_rate);
  if (batch.rows.size() != plan.true_lengths.size()) {
    throw ArgumentError("padding plan does not match batch size");
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(batch.rows.size());
  for (std::size_t i = 0; i < batch.rows.size(); ++i) {
    const std::size_t n = plan.true_lengths[i];
    if (n > batch.rows[i].size() || n > plan.padded_length) {
      throw ArgumentError("true length exceeds padded length");
    }
    out.push_back(frontend.Encode(std::span<const double>(batch.rows[i]).first(n)));
  }
  return out;
}

inline std::vector<Eigen::VectorXd> EmbedBatch(const Frontend& frontend, const PaddedBatch& batch,
                                               const PaddingPlan& plan) {
  auto encoded = EncodeBatch(frontend, batch, plan);
  for (auto& e : encoded) e = frontend.Project(e);
  return encoded;
}

// Loads, collates and encodes every manifest utterance (frozen stage only),
// in manifest order.  All missing audio is reported in one error.
// `max_length` > 0 truncates utterances to that many samples.
inline std::vector<Eigen::VectorXd> EncodeManifest(const Frontend& frontend,
                                                   const DatasetManifest& manifest,
                                                   std::size_t batch_size = 8,
                                                   std::size_t max_length = 0) {
  std::vector<std::filesystem::path> paths;
  std::vector<std::string> missing;
  paths.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    auto p = ResolveAudio(manifest, e);
    if (!p) missing.push_back(e.utterance_id);
    paths.push_back(p.value_or(std::filesystem::path{}));
  }
  if (!missing.empty()) {
    throw ValidationError("no audio found under '" + manifest.audio_root.string() + "' for " +
                          std::to_string(missing.size()) +
                          " utterance(s): " + internal::ListIds(missing));
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(paths.size());
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < paths.size(); start += batch_size) {
    std::vector<Waveform> batch;
    for (std::size_t i = start; i < std::min(paths.size(), start + batch_size); ++i) {
      Waveform w = LoadAudio(paths[i]);
      ValidateWaveform(w, "audio for '" + manifest.entries[i].utterance_id + "'");
      if (max_length > 0 && w.samples.size() > max_length) w.samples.resize(max_length);
      frontend.CheckRate(w.sample_rate);
      batch.push_back(std::move(w));
    }
    auto [padded, plan] = Collate(batch);
    for (auto& v : EncodeBatch(frontend, padded, plan)) out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<SpeechEmbedding> EmbedManifest(const Frontend& frontend,
                                                  const DatasetManifest& manifest,
                                                  std::size_t batch_size = 8) {
  auto encoded = EncodeManifest(frontend, manifest, batch_size);
  std::vector<SpeechEmbedding> out;
  out.reserve(encoded.size());
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    out.push_back({manifest.entries[i].utterance_id, frontend.Project(encoded[i])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding cache: text table of (utterance_id, D values) behind a header
// naming the frontend kind, dimension and version hash.

inline constexpr std::string_view kEmbeddingCacheMagic = "#vibspoof-embeddings 1";

struct EmbeddingCache {
  FrontendKind kind = FrontendKind::kToy;
  int dim = 0;
  std::string version;
  std::vector<SpeechEmbedding> rows;
};

inline std::string WriteEmbeddingCache(const EmbeddingCache& c) {
  std::string out;
  out += kEmbeddingCacheMagic;
  out += "\nfrontend " + std::string(FrontendKindName(c.kind)) + "\ndim " +
         std::to_string(c.dim) + "\nversion " + c.version + "\ncount " +
         std::to_string(c.rows.size()) + '\n';
  for (const auto& r : c.rows) {
    out += r.utterance_id;
    for (Eigen::Index i = 0; i < r.values.size(); ++i) out += ' ' + FormatDouble(r.values[i]);
    out += '\n';
  }
  return out;
}

inline EmbeddingCache ReadEmbeddingCache(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != kEmbeddingCacheMagic) {
    throw ParseError("not an embedding cache", 1);
  }
  EmbeddingCache c;
  auto field = [&](std::string_view name) {
    if (!std::getline(in, line) || line.rfind(std::string(name) + ' ', 0) != 0) {
      throw ParseError("expected '" + std::string(name) + "'", line_no + 1);
    }
    ++line_no;
    return line.substr(name.size() + 1);
  };
  const std::string kind = field("frontend");
  if (kind != "toy" && kind != "pretrained") throw ParseError("unknown frontend kind", line_no);
  c.kind = kind == "toy" ? FrontendKind::kToy : FrontendKind::kPretrained;
  if (!ParseInt(field("dim"), &c.dim) || c.dim <= 0) throw ParseError("bad dim", line_no);
  c.version = field("version");
  std::size_t count = 0;
  if (!ParseInt(field("count"), &count)) throw ParseError("bad count", line_no);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw ParseError("fewer rows than declared", line_no + 1);
    ++line_no;
    const auto cols = SplitWhitespace(line);
    if (cols.size() != static_cast<std::size_t>(c.dim) + 1) {
      throw ParseError("expected " + std::to_string(c.dim + 1) + " columns", line_no);
    }
    SpeechEmbedding e{std::string(cols[0]), Eigen::VectorXd(c.dim)};
    for (int d = 0; d < c.dim; ++d) {
      if (!ParseDouble(cols[d + 1], &e.values[d]) || !std::isfinite(e.values[d])) {
        throw ParseError("bad embedding value", line_no);
      }
    }
    c.rows.push_back(std::move(e));
  }
  return c;
}

inline EmbeddingCache ReadEmbeddingCacheFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding cache '" + path + "'");
  return ReadEmbeddingCache(in);
}

// Reorders cache rows to manifest order; throws if the cache does not belong
// to `frontend` or lacks an utterance.
inline std::vector<Eigen::VectorXd> CacheForManifest(const EmbeddingCache& cache,
                                                     const Frontend& frontend,
                                                     const DatasetManifest& manifest) {
  if (cache.kind != frontend.kind() || cache.dim != frontend.output_dim() ||
      cache.version != frontend.VersionHash()) {
    throw ValidationError("embedding cache was produced by a different frontend (" +
                          std::string(FrontendKindName(cache.kind)) + ", dim " +
                          std::to_string(cache.dim) + ", version " + cache.version + ")");
  }
  std::unordered_map<std::string_view, const Eigen::VectorXd*> index;
  for (const auto& r : cache.rows) index.emplace(r.utterance_id, &r.values);
  std::vector<Eigen::VectorXd> out;
  std::vector<std::string> missing;
  for (const auto& e : manifest.entries) {
    auto it = index.find(e.utterance_id);
    if (it == index.end()) {
      missing.push_back(e.utterance_id);
    } else {
      out.push_back(*it->second);
    }
  }
  if (!missing.empty()) {
    throw ValidationError("embedding cache lacks " + std::to_string(missing.size()) +
                          " utterance(s): " + internal::ListIds(missing));
  }
  return out;
}

}  // namespace vibspoof
