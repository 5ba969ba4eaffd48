// vibspoof/vib.hpp

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

// Classification heads on top of a speech embedding.
//
// VIB head:       x -> MLP g -> (mu, log_var) -> z = mu + eps * exp(log_var / 2)
//                   -> classifier q -> logits (bonafide, spoof)
// Baseline head:  x -> affine -> ReLU -> affine -> logits
//
// Everything is double precision with hand-written backward passes.  Batches
// are column-major: one utterance per column.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vibspoof/common.hpp"
#include "vibspoof/protocol.hpp"

namespace vibspoof {

using Rng = std::mt19937_64;

enum class HeadKind { kVib, kBaseline };

inline std::string_view HeadKindName(HeadKind k) { return k == HeadKind::kVib ? "vib" : "baseline"; }

// How the train-mode posterior samples are combined.
enum class SampleAveraging {
  kLogits,  // mean of classifier logits, then the loss
  kLatent,  // mean of the latent draws, then one classifier pass
  kLoss,    // mean of the per-draw losses
};

inline std::string_view SampleAveragingName(SampleAveraging a) {
  switch (a) {
    case SampleAveraging::kLogits: return "logits";
    case SampleAveraging::kLatent: return "latent";
    case SampleAveraging::kLoss: return "loss";
  }
  return "logits";
}

enum class BetaSchedule { kEpoch, kStep };

struct ClassWeights {
  double bonafide = 0.9;
  double spoof = 0.1;
  double operator[](TrialKey k) const { return k == TrialKey::kBonafide ? bonafide : spoof; }
};

struct VIBConfig {
  int input_dim = 768;
  std::vector<int> mlp_dims{768, 640, 512};
  int latent_dim = 256;
  int classifier_hidden = 256;
  int baseline_hidden = 768;
  int train_samples = 5;
  double beta_cap = 1.0;
  double beta_rate = 1e-4;
  ClassWeights class_weights;
  double logvar_min = -12.0;
  double logvar_max = 12.0;
  SampleAveraging averaging = SampleAveraging::kLogits;

  std::vector<std::string> Problems() const {
    std::vector<std::string> p;
    if (input_dim <= 0) p.push_back("input_dim must be positive");
    if (mlp_dims.empty()) p.push_back("mlp_dims must list at least one width");
    for (int d : mlp_dims) {
      if (d <= 0) {
        p.push_back("mlp_dims entries must be positive");
        break;
      }
    }
    if (latent_dim <= 0) p.push_back("latent_dim must be positive");
    if (classifier_hidden <= 0) p.push_back("classifier_hidden must be positive");
    if (baseline_hidden <= 0) p.push_back("baseline_hidden must be positive");
    if (train_samples < 1) p.push_back("train_samples must be >= 1");
    if (!(beta_rate > 0) || !std::isfinite(beta_rate)) p.push_back("beta_rate must be > 0");
    if (!(beta_cap >= 0) || !std::isfinite(beta_cap)) p.push_back("beta_cap must be >= 0");
    if (!(class_weights.bonafide > 0) || !(class_weights.spoof > 0) ||
        !std::isfinite(class_weights.bonafide) || !std::isfinite(class_weights.spoof)) {
      p.push_back("class weights must be positive");
    }
    if (!(logvar_min < logvar_max)) p.push_back("logvar_min must be below logvar_max");
    return p;
  }

  void Validate() const {
    auto p = Problems();
    if (!p.empty()) throw ConfigError(p);
  }
};

// ---------------------------------------------------------------------------
// Stateless pieces.

struct GaussianPosterior {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_var;
};

struct LatentSample {
  Eigen::VectorXd z;
  Eigen::VectorXd epsilon;
};

inline double KlToStandardNormal(const GaussianPosterior& p) {
  if (p.mu.size() != p.log_var.size()) throw ArgumentError("posterior mu/log_var size mismatch");
  if (!p.mu.allFinite() || !p.log_var.allFinite()) {
    throw NumericalError("non-finite posterior passed to KL");
  }
  return 0.5 * (p.mu.array().square() + p.log_var.array().exp() - p.log_var.array() - 1.0).sum();
}

inline std::vector<LatentSample> SampleLatent(const GaussianPosterior& p, int n, Rng& rng) {
  if (n < 1) throw ArgumentError("sample count must be >= 1");
  std::normal_distribution<double> normal;
  const Eigen::VectorXd sd = (0.5 * p.log_var.array()).exp().matrix();
  std::vector<LatentSample> out(static_cast<std::size_t>(n));
  for (auto& s : out) {
    s.epsilon.resize(p.mu.size());
    for (Eigen::Index d = 0; d < p.mu.size(); ++d) s.epsilon[d] = normal(rng);
    s.z = p.mu + s.epsilon.cwiseProduct(sd);
  }
  return out;
}

inline double BetaAt(std::int64_t epoch, const VIBConfig& cfg) {
  if (epoch < 0) throw ArgumentError("epoch must be nonnegative");
  return std::min(cfg.beta_cap, static_cast<double>(epoch) * cfg.beta_rate);
}

// log(1 + exp(t)) without overflow or cancellation.
inline double Softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

inline double Sigmoid(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

// Index 0 is bonafide, 1 is spoof.
inline int KeyIndex(TrialKey k) { return k == TrialKey::kBonafide ? 0 : 1; }

inline double WeightedCrossEntropy(const Eigen::Vector2d& logits, TrialKey key,
                                   const ClassWeights& w) {
  if (!logits.allFinite()) throw NumericalError("non-finite logits");
  const int k = KeyIndex(key);
  return w[key] * Softplus(logits[1 - k] - logits[k]);
}

inline double ScoreFromLogits(const Eigen::Vector2d& logits) { return logits[0] - logits[1]; }

// ---------------------------------------------------------------------------
// Parameters.

struct Linear {
  Eigen::MatrixXd w, gw;
  Eigen::VectorXd b, gb;

  Linear() = default;
  Linear(int out, int in) : w(out, in), gw(Eigen::MatrixXd::Zero(out, in)),
                            b(Eigen::VectorXd::Zero(out)), gb(Eigen::VectorXd::Zero(out)) {}

  Eigen::MatrixXd Apply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd y = w * x;
    y.colwise() += b;
    return y;
  }

  // Accumulates parameter gradients and returns dL/dx.
  Eigen::MatrixXd Backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
    gw.noalias() += dy * x.transpose();
    gb += dy.rowwise().sum();
    return w.transpose() * dy;
  }
};

struct ParamRef {
  std::string name;
  double* value;
  double* grad;
  Eigen::Index rows, cols;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

inline Eigen::MatrixXd Relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

inline Eigen::MatrixXd ReluMask(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& grad) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

// ---------------------------------------------------------------------------

enum class Mode { kTrain, kEval };

struct BatchResult {
  Eigen::MatrixXd logits;  // 2 x B, averaged over draws
  Eigen::VectorXd kl;      // per item
  Eigen::VectorXd nll;     // per item, unweighted
  double kl_mean = 0.0;
  double ce = 0.0;         // sum_i w_i nll_i / sum_i w_i
  double beta = 0.0;
  double total = 0.0;      // beta * kl_mean + ce

  Eigen::VectorXd Scores() const { return logits.row(0).transpose() - logits.row(1).transpose(); }
};

// Single-utterance view of a forward pass.
struct VIBForwardOutput {
  Eigen::Vector2d logits;
  double kl = 0.0;
  double ce = 0.0;
  double total_loss = 0.0;
  double beta_used = 0.0;
};

class Model {
 public:
  // `projection` seeds an optional trainable input projection (the toy
  // frontend's affine map); the model input is then the frontend encoding.
  Model(HeadKind kind, VIBConfig cfg, std::uint64_t init_seed,
        const Linear* projection = nullptr)
      : kind_(kind), cfg_(std::move(cfg)) {
    cfg_.Validate();
    Rng rng(init_seed);
    if (projection != nullptr) {
      if (projection->w.rows() != cfg_.input_dim) {
        throw ConfigError("frontend projection emits " + std::to_string(projection->w.rows()) +
                          " values but input_dim is " + std::to_string(cfg_.input_dim));
      }
      front_ = Linear(static_cast<int>(projection->w.rows()), static_cast<int>(projection->w.cols()));
      front_->w = projection->w;
      front_->b = projection->b;
    }
    if (kind_ == HeadKind::kVib) {
      int in = cfg_.input_dim;
      for (int d : cfg_.mlp_dims) {
        mlp_.emplace_back(d, in);
        in = d;
      }
      mu_ = Linear(cfg_.latent_dim, in);
      logvar_ = Linear(cfg_.latent_dim, in);
      cls1_ = Linear(cfg_.classifier_hidden, cfg_.latent_dim);
      cls2_ = Linear(2, cfg_.classifier_hidden);
    } else {
      cls1_ = Linear(cfg_.baseline_hidden, cfg_.input_dim);
      cls2_ = Linear(2, cfg_.baseline_hidden);
    }
    // Zero-mean normal weights with std 1/sqrt(fan_in); zero biases.
    for (auto& p : Params()) {
      if (p.name.rfind("frontend.", 0) == 0 || p.name.find(".bias") != std::string::npos) continue;
      Eigen::Map<Eigen::MatrixXd> w(p.value, p.rows, p.cols);
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(p.cols)));
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = normal(rng);
      }
    }
  }

  HeadKind kind() const { return kind_; }
  const VIBConfig& config() const { return cfg_; }
  bool has_projection() const { return front_.has_value(); }
  // Rows expected in the model input.
  int input_rows() const {
    return front_ ? static_cast<int>(front_->w.cols()) : cfg_.input_dim;
  }
  const Linear* projection() const { return front_ ? &*front_ : nullptr; }

  // Canonical parameter order; names are stable across versions.
  std::vector<ParamRef> Params() {
    std::vector<ParamRef> out;
    auto add = [&](const std::string& name, Linear& l) {
      out.push_back({name + ".weight", l.w.data(), l.gw.data(), l.w.rows(), l.w.cols()});
      out.push_back({name + ".bias", l.b.data(), l.gb.data(), l.b.size(), 1});
    };
    if (front_) add("frontend.proj", *front_);
    if (kind_ == HeadKind::kVib) {
      for (std::size_t i = 0; i < mlp_.size(); ++i) add("mlp." + std::to_string(i), mlp_[i]);
      add("mu", mu_);
      add("logvar", logvar_);
      add("classifier.0", cls1_);
      add("classifier.1", cls2_);
    } else {
      add("baseline.0", cls1_);
      add("baseline.1", cls2_);
    }
    return out;
  }

  std::size_t ParamCount() {
    std::size_t n = 0;
    for (const auto& p : Params()) n += p.size();
    return n;
  }

  void ZeroGrad() {
    for (auto& p : Params()) std::fill(p.grad, p.grad + p.size(), 0.0);
  }

  // Speech embedding fed to the head (after the optional projection).
  Eigen::MatrixXd Embedding(const Eigen::MatrixXd& x) const {
    CheckInput(x);
    return front_ ? front_->Apply(x) : x;
  }

  // Posterior for every column; log_var is clamped.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> Posterior(const Eigen::MatrixXd& x) const {
    if (kind_ != HeadKind::kVib) throw ArgumentError("the baseline head has no posterior");
    Eigen::MatrixXd a = Embedding(x);
    for (const auto& l : mlp_) a = Relu(l.Apply(a));
    return {mu_.Apply(a), logvar_.Apply(a).cwiseMax(cfg_.logvar_min).cwiseMin(cfg_.logvar_max)};
  }

  GaussianPosterior EncodePosterior(const Eigen::VectorXd& x) const {
    auto [mu, lv] = Posterior(x);
    return {mu.col(0), lv.col(0)};
  }

  Eigen::Vector2d Classify(const Eigen::VectorXd& z) const {
    return cls2_.Apply(Relu(cls1_.Apply(z))).col(0);
  }

  Eigen::Vector2d BaselineForward(const Eigen::VectorXd& x) const {
    if (kind_ != HeadKind::kBaseline) throw ArgumentError("not a baseline head");
    return cls2_.Apply(Relu(cls1_.Apply(Embedding(x)))).col(0);
  }

  // Loss on a batch.  Train mode draws train_samples noise vectors per item
  // from `rng` (item-major, then draw, then latent coordinate); eval mode
  // uses z = mu and leaves `rng` untouched.
  BatchResult Loss(const Eigen::MatrixXd& x, std::span<const TrialKey> keys, double beta,
                   Mode mode, Rng* rng, bool accumulate_grad = false) {
    std::vector<Eigen::MatrixXd> eps;
    if (kind_ == HeadKind::kVib && mode == Mode::kTrain) {
      if (rng == nullptr) throw ArgumentError("train mode needs a random generator");
      eps = DrawNoise(x.cols(), *rng);
    }
    return LossWithNoise(x, keys, beta, eps, accumulate_grad);
  }

  std::vector<Eigen::MatrixXd> DrawNoise(Eigen::Index batch, Rng& rng) const {
    std::normal_distribution<double> normal;
    std::vector<Eigen::MatrixXd> eps(static_cast<std::size_t>(cfg_.train_samples),
                                     Eigen::MatrixXd(cfg_.latent_dim, batch));
    for (Eigen::Index i = 0; i < batch; ++i) {
      for (auto& e : eps) {
        for (Eigen::Index d = 0; d < e.rows(); ++d) e(d, i) = normal(rng);
      }
    }
    return eps;
  }

  // As Loss() with explicit noise: eps[s] is latent_dim x B.  An empty `eps`
  // is the eval path (z = mu).
  BatchResult LossWithNoise(const Eigen::MatrixXd& x, std::span<const TrialKey> keys, double beta,
                            const std::vector<Eigen::MatrixXd>& eps, bool accumulate_grad) {
    CheckInput(x);
    const Eigen::Index batch = x.cols();
    if (static_cast<Eigen::Index>(keys.size()) != batch) {
      throw ArgumentError("got " + std::to_string(keys.size()) + " keys for a batch of " +
                          std::to_string(batch));
    }
    if (batch == 0) throw ArgumentError("empty batch");
    if (!(beta >= 0) || !std::isfinite(beta)) throw ArgumentError("beta must be finite and >= 0");

    BatchResult r;
    r.beta = beta;
    Eigen::VectorXd weight(batch);
    for (Eigen::Index i = 0; i < batch; ++i) weight[i] = cfg_.class_weights[keys[i]];
    const double weight_sum = weight.sum();

    const Eigen::MatrixXd x_in = front_ ? front_->Apply(x) : x;

    if (kind_ == HeadKind::kBaseline) {
      const Eigen::MatrixXd pre = cls1_.Apply(x_in);
      const Eigen::MatrixXd h = Relu(pre);
      r.logits = cls2_.Apply(h);
      r.kl = Eigen::VectorXd::Zero(batch);
      Eigen::MatrixXd dlogits = CrossEntropy(r, keys, weight, weight_sum, 1);
      r.total = r.ce;
      CheckFinite(r);
      if (accumulate_grad) {
        const Eigen::MatrixXd dh = cls2_.Backward(h, dlogits);
        const Eigen::MatrixXd dx = cls1_.Backward(x_in, ReluMask(pre, dh));
        if (front_) front_->Backward(x, dx);
      }
      return r;
    }

    // Encoder.
    std::vector<Eigen::MatrixXd> acts{x_in}, pres;
    for (const auto& l : mlp_) {
      pres.push_back(l.Apply(acts.back()));
      acts.push_back(Relu(pres.back()));
    }
    const Eigen::MatrixXd mu = mu_.Apply(acts.back());
    const Eigen::MatrixXd lv_raw = logvar_.Apply(acts.back());
    const Eigen::MatrixXd lv = lv_raw.cwiseMax(cfg_.logvar_min).cwiseMin(cfg_.logvar_max);
    const Eigen::MatrixXd sd = (0.5 * lv.array()).exp().matrix();
    r.kl = 0.5 * (mu.array().square() + lv.array().exp() - lv.array() - 1.0).colwise().sum().transpose();
    r.kl_mean = r.kl.mean();

    // Effective draws fed to the classifier.
    std::vector<Eigen::MatrixXd> draws;
    const bool eval = eps.empty();
    if (eval) {
      draws.push_back(Eigen::MatrixXd::Zero(cfg_.latent_dim, batch));
    } else {
      for (const auto& e : eps) {
        if (e.rows() != cfg_.latent_dim || e.cols() != batch) {
          throw ArgumentError("noise matrix has the wrong shape");
        }
      }
      if (cfg_.averaging == SampleAveraging::kLatent) {
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(cfg_.latent_dim, batch);
        for (const auto& e : eps) mean += e;
        draws.push_back(mean / static_cast<double>(eps.size()));
      } else {
        draws = eps;
      }
    }
    const Eigen::Index n = static_cast<Eigen::Index>(draws.size());
    Eigen::MatrixXd z(cfg_.latent_dim, n * batch);
    for (Eigen::Index s = 0; s < n; ++s) {
      z.middleCols(s * batch, batch) =
          eval ? mu : (mu + draws[static_cast<std::size_t>(s)].cwiseProduct(sd)).eval();
    }
    const Eigen::MatrixXd pre = cls1_.Apply(z);
    const Eigen::MatrixXd h = Relu(pre);
    const Eigen::MatrixXd all_logits = cls2_.Apply(h);

    Eigen::MatrixXd dall;  // dL/d all_logits
    if (cfg_.averaging == SampleAveraging::kLoss && !eval && n > 1) {
      r.logits = Eigen::MatrixXd::Zero(2, batch);
      for (Eigen::Index s = 0; s < n; ++s) r.logits += all_logits.middleCols(s * batch, batch);
      r.logits /= static_cast<double>(n);
      r.nll = Eigen::VectorXd::Zero(batch);
      dall.resize(2, n * batch);
      for (Eigen::Index s = 0; s < n; ++s) {
        BatchResult part;
        part.logits = all_logits.middleCols(s * batch, batch);
        dall.middleCols(s * batch, batch) = CrossEntropy(part, keys, weight, weight_sum, n);
        r.nll += part.nll / static_cast<double>(n);
      }
      r.ce = weight.dot(r.nll) / weight_sum;
    } else {
      r.logits = Eigen::MatrixXd::Zero(2, batch);
      for (Eigen::Index s = 0; s < n; ++s) r.logits += all_logits.middleCols(s * batch, batch);
      r.logits /= static_cast<double>(n);
      const Eigen::MatrixXd dmean = CrossEntropy(r, keys, weight, weight_sum, 1);
      dall.resize(2, n * batch);
      for (Eigen::Index s = 0; s < n; ++s) {
        dall.middleCols(s * batch, batch) = dmean / static_cast<double>(n);
      }
    }
    r.total = beta * r.kl_mean + r.ce;
    CheckFinite(r);
    if (!accumulate_grad) return r;

    const Eigen::MatrixXd dh = cls2_.Backward(h, dall);
    const Eigen::MatrixXd dz = cls1_.Backward(z, ReluMask(pre, dh));
    Eigen::MatrixXd dmu = (beta / static_cast<double>(batch)) * mu;
    Eigen::MatrixXd dlv =
        (beta / static_cast<double>(batch)) * 0.5 * (lv.array().exp() - 1.0).matrix();
    for (Eigen::Index s = 0; s < n; ++s) {
      const auto dzs = dz.middleCols(s * batch, batch);
      dmu += dzs;
      if (!eval) {
        dlv += (dzs.array() * draws[static_cast<std::size_t>(s)].array() * 0.5 * sd.array())
                   .matrix();
      }
    }
    // The clamp passes gradient only inside its range.
    const Eigen::MatrixXd dlv_raw =
        ((lv_raw.array() > cfg_.logvar_min) && (lv_raw.array() < cfg_.logvar_max))
            .select(dlv, 0.0);
    Eigen::MatrixXd da = mu_.Backward(acts.back(), dmu) + logvar_.Backward(acts.back(), dlv_raw);
    for (std::size_t k = mlp_.size(); k-- > 0;) {
      da = mlp_[k].Backward(acts[k], ReluMask(pres[k], da));
    }
    if (front_) front_->Backward(x, da);
    return r;
  }

  // Single-utterance forward, for inspection and tests.
  VIBForwardOutput Forward(const Eigen::VectorXd& x, TrialKey key, double beta, Mode mode,
                           Rng* rng) {
    const TrialKey keys[1] = {key};
    const BatchResult r = Loss(x, keys, beta, mode, rng);
    return {r.logits.col(0), r.kl[0], r.ce, r.total, r.beta};
  }

 private:
  void CheckInput(const Eigen::MatrixXd& x) const {
    if (x.rows() != input_rows()) {
      throw ValidationError("head expects " + std::to_string(input_rows()) +
                            "-dimensional input, got " + std::to_string(x.rows()));
    }
  }

  // Fills r.nll / r.ce from r.logits and returns dce/dlogits scaled by 1/n.
  static Eigen::MatrixXd CrossEntropy(BatchResult& r, std::span<const TrialKey> keys,
                                      const Eigen::VectorXd& weight, double weight_sum,
                                      Eigen::Index n) {
    const Eigen::Index batch = r.logits.cols();
    r.nll.resize(batch);
    Eigen::MatrixXd d(2, batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
      const int k = KeyIndex(keys[static_cast<std::size_t>(i)]);
      const double margin = r.logits(1 - k, i) - r.logits(k, i);
      r.nll[i] = Softplus(margin);
      // d nll / d logit_k = -(1 - p_k) = -sigmoid(margin); the other is +.
      const double c = weight[i] / weight_sum / static_cast<double>(n) * Sigmoid(margin);
      d(k, i) = -c;
      d(1 - k, i) = c;
    }
    r.ce = weight.dot(r.nll) / weight_sum;
    return d;
  }

  static void CheckFinite(const BatchResult& r) {
    if (!std::isfinite(r.total) || !r.logits.allFinite()) {
      throw NumericalError("non-finite loss (kl " + FormatDouble(r.kl_mean) + ", ce " +
                           FormatDouble(r.ce) + ")");
    }
  }

  HeadKind kind_;
  VIBConfig cfg_;
  std::optional<Linear> front_;
  std::vector<Linear> mlp_;
  Linear mu_, logvar_, cls1_, cls2_;
};

}  // namespace vibspoof
