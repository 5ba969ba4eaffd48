// tests/training_test.cc

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

#include "vibspoof/training.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "synthetic.hpp"

namespace vibspoof {
namespace {

namespace fs = std::filesystem;

fs::path TempDir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("vibspoof_training_" + name + "_" +
                                              std::to_string(::getpid()));
  fs::remove_all(d);
  return d;
}

// In-memory waveforms through the toy frontend; no files involved.
struct Toy {
  RunConfig cfg;
  std::unique_ptr<Frontend> frontend;
  LabeledInputs train, dev;
};

LabeledInputs Encode(const Frontend& f, std::size_t n, std::uint64_t seed, const char* tag,
                     bool projected) {
  std::mt19937_64 rng(seed);
  LabeledInputs out;
  std::vector<Eigen::VectorXd> cols;
  for (std::size_t i = 0; i < n; ++i) {
    const bool bona = i % 5 == 0;
    const auto w = synthetic::Utterance(bona, rng);
    const auto e = f.Encode(w.samples);
    cols.push_back(projected ? f.Project(e) : e);
    out.keys.push_back(bona ? TrialKey::kBonafide : TrialKey::kSpoof);
    out.ids.push_back(std::string(tag) + std::to_string(i));
  }
  out.x.resize(cols.front().size(), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out.x.col(static_cast<Eigen::Index>(i)) = cols[i];
  return out;
}

Toy MakeToy(RunConfig cfg = synthetic::DeskConfig(), std::size_t n_train = 60,
            std::size_t n_dev = 30) {
  Toy t{cfg, MakeFrontend(cfg), {}, {}};
  const bool projected = !cfg.ResolvedFrontend().trainable;
  t.train = Encode(*t.frontend, n_train, 1, "t", projected);
  t.dev = Encode(*t.frontend, n_dev, 2, "d", projected);
  return t;
}

std::vector<double> Flatten(Model& m) {
  std::vector<double> out;
  for (const auto& p : m.Params()) out.insert(out.end(), p.value, p.value + p.size());
  return out;
}

// ---------------------------------------------------------------------------
// Config.

TEST(RunConfigText, DefaultsRoundTrip) {
  const RunConfig def;
  const std::string text = WriteRunConfig(def);
  EXPECT_EQ(WriteRunConfig(ParseRunConfig(text)), text);
  EXPECT_NE(text.find("learning_rate = 1e-06\n"), std::string::npos);
  EXPECT_NE(text.find("mlp_dims = 768,640,512\n"), std::string::npos);
  EXPECT_NE(text.find("plateau_patience = 8\n"), std::string::npos);
  EXPECT_NE(text.find("batch_size = 8\n"), std::string::npos);
  EXPECT_NE(text.find("max_epochs = 100\n"), std::string::npos);
  EXPECT_NE(text.find("weight_decay = 0.01\n"), std::string::npos);
}

TEST(RunConfigText, ParsesValuesCommentsAndOverrides) {
  const auto cfg = ParseRunConfig(
      "# desk run\n"
      "head = baseline\n"
      "mlp_dims = 8, 4\n"
      "beta_fixed = 10   # over-compression\n"
      "\n"
      "seed = 42\n",
      {}, {{"seed", "7"}, {"frontend_trainable", "false"}});
  EXPECT_EQ(cfg.head, HeadKind::kBaseline);
  EXPECT_EQ(cfg.vib.mlp_dims, (std::vector<int>{8, 4}));
  ASSERT_TRUE(cfg.train.beta_fixed);
  EXPECT_EQ(*cfg.train.beta_fixed, 10.0);
  EXPECT_EQ(cfg.train.seed, 7u);
  EXPECT_FALSE(cfg.ResolvedFrontend().trainable);
}

TEST(RunConfigText, NegativeBetaRateIsAConfigError) {
  try {
    ParseRunConfig("beta_rate = -0.0001\n");
    FAIL();
  } catch (const ConfigError& e) {
    ASSERT_EQ(e.problems().size(), 1u);
    EXPECT_NE(e.problems()[0].find("beta_rate"), std::string::npos);
    EXPECT_EQ(static_cast<int>(e.exit_code()), 1);
  }
}

TEST(RunConfigText, ListsEveryProblem) {
  try {
    ParseRunConfig(
        "learnin_rate = 1e-3\n"
        "batch_size = eight\n"
        "no equals sign here\n"
        "seed = 1\n"
        "seed = 2\n");
    FAIL();
  } catch (const ConfigError& e) {
    ASSERT_EQ(e.problems().size(), 4u) << e.what();
    EXPECT_NE(e.problems()[0].find("line 1: unknown key 'learnin_rate'"), std::string::npos);
    EXPECT_NE(e.problems()[1].find("line 2"), std::string::npos);
    EXPECT_NE(e.problems()[2].find("line 3"), std::string::npos);
    EXPECT_NE(e.problems()[3].find("duplicate key 'seed'"), std::string::npos);
  }
  // Constraint violations are collected together too.
  try {
    ParseRunConfig("batch_size = 0\nplateau_factor = 1\nplateau_patience = 0\ntrain_samples = 0\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 4u) << e.what();
  }
}

TEST(RunConfigText, PretrainedNeedsFrozenWidth768) {
  EXPECT_THROW(ParseRunConfig("frontend = pretrained\ninput_dim = 32\n"), ConfigError);
  EXPECT_THROW(ParseRunConfig("frontend = pretrained\nfrontend_trainable = true\n"), ConfigError);
  const auto cfg = ParseRunConfig("frontend = pretrained\n");
  EXPECT_FALSE(cfg.ResolvedFrontend().trainable);
  EXPECT_TRUE(ParseRunConfig("").ResolvedFrontend().trainable);
}

// ---------------------------------------------------------------------------
// Plateau schedule.

TEST(Plateau, ImprovementResetsCounter) {
  PlateauState s{1e-6};
  s = PlateauStep(s, 5.0, 0.1, 8);
  s = PlateauStep(s, 4.0, 0.1, 8);
  EXPECT_EQ(s.lr, 1e-6);
  EXPECT_EQ(s.bad_epochs, 0);
  EXPECT_EQ(s.best, 4.0);
}

TEST(Plateau, FiresOnceAfterEightFlatEpochs) {
  const std::vector<double> eers{5, 4, 4, 4, 4, 4, 4, 4, 4, 4};
  PlateauState s{1e-6};
  std::vector<double> lr;
  for (double e : eers) {
    s = PlateauStep(s, e, 0.1, 8);
    lr.push_back(s.lr);
  }
  for (int i = 0; i < 9; ++i) EXPECT_EQ(lr[i], 1e-6) << i;
  EXPECT_EQ(lr[9], 1e-6 * 0.1);
  EXPECT_EQ(s.reductions, 1);
  EXPECT_EQ(lr, oracle::PlateauLrTrajectory(eers, 1e-6, 0.1, 8));
}

TEST(Plateau, ConstantEerDecaysGeometrically) {
  PlateauState s{1.0};
  double expect = 1.0;
  for (int e = 0; e < 50; ++e) {
    s = PlateauStep(s, 3.0, 0.1, 8);
    if (e > 0 && e % 8 == 0) expect *= 0.1;
    EXPECT_EQ(s.lr, expect) << e;
  }
}

TEST(Plateau, MatchesOracleOnRandomSequences) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> level(0, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const int patience = 1 + trial % 9;
    std::vector<double> eers(60);
    for (auto& e : eers) e = level(rng);
    PlateauState s{1e-3};
    std::vector<double> lr;
    for (double e : eers) lr.push_back((s = PlateauStep(s, e, 0.5, patience)).lr);
    EXPECT_EQ(lr, oracle::PlateauLrTrajectory(eers, 1e-3, 0.5, patience)) << trial;
  }
}

// ---------------------------------------------------------------------------
// Optimizer.

TEST(AdamW, FirstStepFromDefinition) {
  double value[2] = {1.0, -2.0}, grad[2] = {0.5, -0.25};
  std::vector<ParamRef> params{{"p", value, grad, 2, 1}};
  TrainConfig cfg;
  AdamWState st;
  AdamWStep(params, st, cfg, 0.1);
  // Step one: bias-corrected moments are g and g^2.
  for (int i = 0; i < 2; ++i) {
    const double p0 = i == 0 ? 1.0 : -2.0, g = i == 0 ? 0.5 : -0.25;
    const double decayed = p0 - 0.1 * 0.01 * p0;
    const double expect = decayed - 0.1 * g / (std::abs(g) + 1e-8);
    EXPECT_NEAR(value[i], expect, 1e-15);
  }
  EXPECT_EQ(st.step, 1);
}

TEST(AdamW, ClippingScalesTheGradient) {
  double a[1] = {0.0}, ga[1] = {30.0};
  double b[1] = {0.0}, gb[1] = {40.0};
  std::vector<ParamRef> params{{"a", a, ga, 1, 1}, {"b", b, gb, 1, 1}};
  EXPECT_DOUBLE_EQ(GradNorm(params), 50.0);
  TrainConfig cfg;
  cfg.grad_clip = 5.0;
  cfg.weight_decay = 0.0;
  AdamWState st;
  AdamWStep(params, st, cfg, 1.0);
  // Moments see 3 and 4; the Adam ratio is still sign-like at step one.
  EXPECT_NEAR(st.m[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(st.m[1], 0.1 * 4.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Epochs.

TEST(TrainEpoch, ZeroLearningRateLeavesParametersBitwise) {
  auto cfg = synthetic::DeskConfig();
  cfg.train.learning_rate = 0.0;
  auto t = MakeToy(cfg);
  TrainingState st = InitialState(t.cfg, *t.frontend);
  const auto before = Flatten(st.model);
  const auto rep = TrainEpoch(st, t.train, t.cfg);
  EXPECT_EQ(Flatten(st.model), before);
  EXPECT_EQ(rep.lr, 0.0);
  EXPECT_GT(st.opt.step, 0);
}

TEST(TrainEpoch, BetaAtEpochThree) {
  auto t = MakeToy();
  t.cfg.vib.beta_rate = 1e-4;
  TrainingState st = InitialState(t.cfg, *t.frontend);
  st.next_epoch = 3;
  const auto rep = TrainEpoch(st, t.train, t.cfg);
  EXPECT_EQ(rep.epoch, 3);
  EXPECT_DOUBLE_EQ(rep.beta, 0.0003);
  EXPECT_EQ(rep.beta, BetaAt(3, t.cfg.vib));
}

TEST(TrainEpoch, StepScheduleAndFixedBeta) {
  auto t = MakeToy();
  t.cfg.train.beta_schedule = BetaSchedule::kStep;
  TrainingState st = InitialState(t.cfg, *t.frontend);
  st.next_epoch = 1;
  st.global_step = 40;
  EXPECT_EQ(TrainEpoch(st, t.train, t.cfg).beta, BetaAt(40, t.cfg.vib));
  t.cfg.train.beta_fixed = 10.0;
  EXPECT_EQ(TrainEpoch(st, t.train, t.cfg).beta, 10.0);
}

// Linearly separable two-cluster features: the loss measured over each
// epoch falls every epoch at a small rate.
TEST(TrainEpoch, LossDecreasesOnSeparableData) {
  auto cfg = synthetic::DeskConfig();
  cfg.train.learning_rate = 1e-3;
  auto t = MakeToy(cfg, 300, 20);
  TrainingState st = InitialState(t.cfg, *t.frontend);
  double prev = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 5; ++e) {
    const auto rep = TrainEpoch(st, t.train, t.cfg);
    ++st.next_epoch;
    EXPECT_LT(rep.train_loss, prev) << "epoch " << e;
    EXPECT_NEAR(rep.train_loss, rep.beta * rep.train_kl + rep.train_ce, 1e-12);
    prev = rep.train_loss;
  }
}

TEST(TrainEpoch, TrainableProjectionMovesOnlyWhenEnabled) {
  auto t = MakeToy();
  TrainingState st = InitialState(t.cfg, *t.frontend);
  ASSERT_TRUE(st.model.has_projection());
  EXPECT_EQ(st.model.input_rows(), ToyFrontend::kFeatureDim);
  const Eigen::MatrixXd w0 = st.model.projection()->w;
  EXPECT_EQ(w0, *t.frontend->projection_weight());
  TrainEpoch(st, t.train, t.cfg);
  EXPECT_GT((st.model.projection()->w - w0).cwiseAbs().maxCoeff(), 0.0);

  auto frozen = synthetic::DeskConfig();
  frozen.frontend_trainable = false;
  auto f = MakeToy(frozen);
  TrainingState sf = InitialState(f.cfg, *f.frontend);
  EXPECT_FALSE(sf.model.has_projection());
  EXPECT_EQ(sf.model.input_rows(), 32);
  EXPECT_NO_THROW(TrainEpoch(sf, f.train, f.cfg));
}

// Per-utterance loss from a mixed-length batch equals the solo loss.
TEST(TrainEpoch, PaddingInvarianceOfPerItemLoss) {
  auto t = MakeToy();
  TrainingState st = InitialState(t.cfg, *t.frontend);
  std::mt19937_64 rng(3);
  std::vector<Waveform> batch;
  std::vector<TrialKey> keys;
  for (int i = 0; i < 6; ++i) {
    batch.push_back(synthetic::Utterance(i % 2 == 0, rng));
    keys.push_back(i % 2 == 0 ? TrialKey::kBonafide : TrialKey::kSpoof);
  }
  batch[2].samples.resize(900);
  auto [padded, plan] = Collate(batch);
  const auto enc = EncodeBatch(*t.frontend, padded, plan);
  Eigen::MatrixXd x(enc[0].size(), 6);
  for (int i = 0; i < 6; ++i) x.col(i) = enc[static_cast<std::size_t>(i)];
  Rng noise_rng(9);
  const auto eps = st.model.DrawNoise(6, noise_rng);
  for (bool train : {false, true}) {
    const auto all = st.model.LossWithNoise(x, keys, 0.5, train ? eps : decltype(eps){}, false);
    for (int i = 0; i < 6; ++i) {
      const Eigen::VectorXd solo_x = t.frontend->Encode(batch[static_cast<std::size_t>(i)].samples);
      std::vector<Eigen::MatrixXd> solo_eps;
      if (train) {
        for (const auto& e : eps) solo_eps.push_back(e.col(i));
      }
      const TrialKey k[1] = {keys[static_cast<std::size_t>(i)]};
      const auto one = st.model.LossWithNoise(solo_x, k, 0.5, solo_eps, false);
      EXPECT_NEAR(one.nll[0], all.nll[i], 1e-6 * std::abs(one.nll[0])) << i;
      EXPECT_NEAR(one.kl[0], all.kl[i], 1e-6 * std::abs(one.kl[0])) << i;
    }
  }
}

// ---------------------------------------------------------------------------
// Fit.

TEST(Fit, ZeroEpochsReturnsInitialCheckpoint) {
  auto t = MakeToy();
  t.cfg.train.max_epochs = 0;
  TrainingState st = InitialState(t.cfg, *t.frontend);
  const auto init = Flatten(st.model);
  const auto r = Fit(st, t.train, t.dev, t.cfg, t.frontend->VersionHash());
  EXPECT_TRUE(r.reports.empty());
  TrainingState back = Restore(r.best, *t.frontend);
  EXPECT_EQ(Flatten(back.model), init);
  EXPECT_EQ(r.best.next_epoch, 0);
}

TEST(Fit, SingleClassDevSetIsAnError) {
  auto t = MakeToy();
  t.cfg.train.max_epochs = 1;
  for (auto& k : t.dev.keys) k = TrialKey::kSpoof;
  TrainingState st = InitialState(t.cfg, *t.frontend);
  EXPECT_THROW(Fit(st, t.train, t.dev, t.cfg, t.frontend->VersionHash()), ValidationError);
}

TEST(Fit, OverlappingTrainAndDevIsAnError) {
  auto t = MakeToy();
  t.cfg.train.max_epochs = 1;
  t.dev.ids[3] = t.train.ids[5];
  TrainingState st = InitialState(t.cfg, *t.frontend);
  EXPECT_THROW(Fit(st, t.train, t.dev, t.cfg, t.frontend->VersionHash()), ValidationError);
}

TEST(Fit, TiesKeepTheEarlierEpoch) {
  auto t = MakeToy();
  t.cfg.train.learning_rate = 0.0;
  t.cfg.train.max_epochs = 4;
  TrainingState st = InitialState(t.cfg, *t.frontend);
  const auto r = Fit(st, t.train, t.dev, t.cfg, t.frontend->VersionHash());
  ASSERT_EQ(r.reports.size(), 4u);
  for (const auto& rep : r.reports) EXPECT_EQ(rep.dev_eer, r.reports[0].dev_eer);
  EXPECT_EQ(r.best.best_epoch, 0);
  EXPECT_EQ(r.best.next_epoch, 1);
}

TEST(Fit, ReportsAreFiniteAndBestIsMinimum) {
  auto t = MakeToy();
  t.cfg.train.max_epochs = 6;
  TrainingState st = InitialState(t.cfg, *t.frontend);
  const auto r = Fit(st, t.train, t.dev, t.cfg, t.frontend->VersionHash());
  ASSERT_EQ(r.reports.size(), 6u);
  double best = 101;
  int best_epoch = -1;
  for (const auto& rep : r.reports) {
    EXPECT_TRUE(std::isfinite(rep.train_loss) && std::isfinite(rep.train_kl) &&
                std::isfinite(rep.train_ce));
    EXPECT_GE(rep.dev_eer, 0.0);
    EXPECT_LE(rep.dev_eer, 100.0);
    if (rep.dev_eer < best) {
      best = rep.dev_eer;
      best_epoch = rep.epoch;
    }
  }
  EXPECT_EQ(r.best.best_epoch, best_epoch);
  EXPECT_EQ(r.best.best_eer, best);
  // The best checkpoint reproduces its dev EER.
  TrainingState back = Restore(r.best, *t.frontend);
  EXPECT_EQ(DevEer(back.model, t.dev), best);
}

TEST(Fit, ResumeReproducesUninterruptedRun) {
  auto t = MakeToy();
  t.cfg.train.max_epochs = 6;
  TrainingState full = InitialState(t.cfg, *t.frontend);
  const auto ref = Fit(full, t.train, t.dev, t.cfg, t.frontend->VersionHash());

  auto half_cfg = t.cfg;
  half_cfg.train.max_epochs = 3;
  TrainingState half = InitialState(half_cfg, *t.frontend);
  const auto first = Fit(half, t.train, t.dev, half_cfg, t.frontend->VersionHash());
  const std::string bytes = WriteCheckpoint(Capture(half, t.cfg, t.frontend->VersionHash()));
  TrainingState resumed = Restore(ReadCheckpoint(bytes), *t.frontend);
  const auto rest = Fit(resumed, t.train, t.dev, t.cfg, t.frontend->VersionHash(), nullptr, {},
                        first.best);
  EXPECT_EQ(rest.reports, ref.reports);
  EXPECT_EQ(Flatten(resumed.model), Flatten(full.model));
  EXPECT_EQ(rest.best.best_epoch, ref.best.best_epoch);
}

// ---------------------------------------------------------------------------
// Checkpoints and the run directory.

TEST(CheckpointFile, RoundTripIsByteIdentical) {
  auto t = MakeToy();
  TrainingState st = InitialState(t.cfg, *t.frontend);
  TrainEpoch(st, t.train, t.cfg);
  st.next_epoch = 1;
  st.reports.push_back({0, 1.5, 0.25, 1.25, 12.5, 1e-3, 0.0});
  const std::string a = WriteCheckpoint(Capture(st, t.cfg, t.frontend->VersionHash()));
  ASSERT_EQ(a.rfind("VIBSPOOFCKPT 1\n", 0), 0u);
  const Checkpoint c = ReadCheckpoint(a);
  EXPECT_EQ(WriteCheckpoint(c), a);
  EXPECT_EQ(c.reports, st.reports);
  EXPECT_EQ(c.opt.step, st.opt.step);
  TrainingState back = Restore(c, *t.frontend);
  EXPECT_EQ(Flatten(back.model), Flatten(st.model));
  EXPECT_EQ(c.params.front().first, "frontend.proj.weight");
}

TEST(CheckpointFile, CorruptionIsDetected) {
  auto t = MakeToy();
  TrainingState st = InitialState(t.cfg, *t.frontend);
  std::string a = WriteCheckpoint(Capture(st, t.cfg, t.frontend->VersionHash()));
  std::string flipped = a;
  flipped[flipped.size() - 3] ^= 0x10;
  EXPECT_THROW(ReadCheckpoint(flipped), ParseError);
  EXPECT_THROW(ReadCheckpoint(a.substr(0, a.size() - 8)), ParseError);
  EXPECT_THROW(ReadCheckpoint("VIBSPOOFCKPT 9\n2\n{}"), ParseError);
}

TEST(CheckpointFile, MismatchFailsLoudly) {
  auto t = MakeToy();
  TrainingState st = InitialState(t.cfg, *t.frontend);
  Checkpoint c = Capture(st, t.cfg, t.frontend->VersionHash());

  // Another toy seed is another frontend.
  auto other = t.cfg;
  other.frontend.toy_seed += 1;
  EXPECT_THROW(Restore(c, *MakeFrontend(other)), ConfigError);

  // Stored tensors that disagree with the stored config.
  Checkpoint bad = c;
  bad.params.back().second.resize(3, 3);
  EXPECT_THROW(Restore(bad, *t.frontend), ConfigError);
  Checkpoint renamed = c;
  renamed.params[2].first = "mlp.9.weight";
  EXPECT_THROW(Restore(renamed, *t.frontend), ConfigError);

  auto wider = t.cfg;
  wider.vib.latent_dim = 8;
  EXPECT_FALSE(ConfigDifferences(c.config, wider).empty());
  EXPECT_TRUE(ConfigDifferences(c.config, wider, {"latent_dim"}).empty());
}

TEST(RunDir, LayoutAfterFit) {
  const auto dir = TempDir("layout");
  auto t = MakeToy();
  t.cfg.train.max_epochs = 3;
  RunDirectory run = RunDirectory::Create(dir, t.cfg, "train", "desk.cfg");
  EXPECT_TRUE(fs::exists(dir / "config.txt"));
  EXPECT_EQ(ReadFileToString((dir / "config.txt").string()), WriteRunConfig(t.cfg));
  TrainingState st = InitialState(t.cfg, *t.frontend);
  const auto r = Fit(st, t.train, t.dev, t.cfg, t.frontend->VersionHash(), &run);
  std::string log;
  for (const auto& rep : r.reports) log += FormatReport(rep) + '\n';
  EXPECT_EQ(ReadFileToString((dir / "reports.log").string()), log);
  const auto best = RunDirectory::BestCheckpoint(dir);
  EXPECT_EQ(best.filename().string(), RunDirectory::BestName(r.best.best_epoch, r.best.best_eer));
  EXPECT_EQ(ReadFileToString(best.string()), WriteCheckpoint(r.best));
  EXPECT_TRUE(fs::exists(run.last_checkpoint()));
  std::size_t ckpts = 0;
  for (const auto& e : fs::directory_iterator(dir)) ckpts += e.path().extension() == ".ckpt";
  EXPECT_EQ(ckpts, 2u);  // last + best
  EXPECT_THROW(RunDirectory::Create(dir, t.cfg, "train", ""), ArgumentError);
  fs::remove_all(dir);
}

TEST(RunDir, BestNameFormat) {
  EXPECT_EQ(RunDirectory::BestName(7, 1.23456), "epoch-007_deer-1.2346.ckpt");
}

}  // namespace
}  // namespace vibspoof
