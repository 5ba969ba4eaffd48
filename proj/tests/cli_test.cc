// tests/cli_test.cc

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

// Runs the vibspoof binary end to end on a small synthetic corpus.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "synthetic.hpp"
#include "vibspoof/protocol.hpp"

namespace vibspoof {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
};

Result Cmd(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + VIBSPOOF_CLI + std::string(" ") + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string Q(const fs::path& p) { return "'" + p.string() + "'"; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("vibspoof_cli_" + std::string(info->name()) + "_" + std::to_string(getpid()));
    fs::remove_all(dir_);
    corpus_ = synthetic::Make(dir_ / "corpus", 60, 40, 40, 3);
    RunConfig cfg = synthetic::DeskConfig();
    cfg.train.max_epochs = 2;
    WriteStringToFile((dir_ / "run.cfg").string(), WriteRunConfig(cfg));
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Prepares the three synthetic subsets into manifest caches.
  void PrepareAll() {
    for (const char* s : {"train", "dev", "eval"}) {
      const fs::path proto = s == std::string("train") ? corpus_.train_protocol
                             : s == std::string("dev") ? corpus_.dev_protocol
                                                       : corpus_.eval_protocol;
      const auto r = Cmd("prepare --corpus asvspoof2019_la --subset " + std::string(s) +
                         " --protocol " + Q(proto) + " --audio-root " + Q(corpus_.root / "wav") +
                         " --out " + Q(dir_ / (std::string(s) + ".manifest")));
      ASSERT_EQ(r.code, 0) << r.out;
    }
  }

  Result TrainRun(const std::string& out, const std::string& extra = "") {
    return Cmd("train --config " + Q(dir_ / "run.cfg") + " --train " + Q(dir_ / "train.manifest") +
               " --dev " + Q(dir_ / "dev.manifest") + " --out " + Q(dir_ / out) + " " + extra);
  }

  fs::path dir_;
  synthetic::Corpus corpus_;
};

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(Cmd("").code, 1);
  EXPECT_EQ(Cmd("frobnicate").code, 1);
  EXPECT_EQ(Cmd("subsample --fraction 0.5").code, 1);
  EXPECT_EQ(Cmd("--help").code, 0);
  EXPECT_EQ(Cmd("train --help").code, 0);
}

TEST_F(Cli, PrepareReportsCounts) {
  const auto r = Cmd("prepare --corpus asvspoof2019_la --protocol " + Q(corpus_.train_protocol) +
                     " --audio-root " + Q(corpus_.root / "wav") + " --check-audio --out " +
                     Q(dir_ / "m"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("bonafide 12\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("spoof 48\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("attack A01 "), std::string::npos);
  const auto m = ReadManifestCacheFile((dir_ / "m").string());
  EXPECT_EQ(m.entries, corpus_.train.entries);
}

TEST_F(Cli, PrepareMissingProtocolIsIoError) {
  const auto r = Cmd("prepare --corpus asvspoof2019_la --protocol " + Q(dir_ / "nope.txt") +
                     " --out " + Q(dir_ / "m"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("nope.txt"), std::string::npos) << r.out;
}

TEST_F(Cli, PrepareParseErrorCarriesLine) {
  WriteStringToFile((dir_ / "bad.txt").string(), "LA_0 LA_T_1 - - bonafide\nLA_0 LA_T_2 -\n");
  const auto r = Cmd("prepare --corpus asvspoof2019_la --protocol " + Q(dir_ / "bad.txt") +
                     " --out " + Q(dir_ / "m"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("bad.txt"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("line 2"), std::string::npos) << r.out;
}

TEST_F(Cli, PrepareUnknownCorpusIsUsage) {
  const auto r = Cmd("prepare --corpus timit --protocol " + Q(corpus_.train_protocol) + " --out " +
                     Q(dir_ / "m"));
  EXPECT_EQ(r.code, 1) << r.out;
}

TEST_F(Cli, Prepare2015TagsCorpus) {
  WriteStringToFile((dir_ / "p2015.txt").string(),
                    "T1 T1_1000001 human human\nT1 T1_1000002 S3 spoof\nT2 T2_1000003 S10 spoof\n");
  const auto r = Cmd("prepare --corpus asvspoof2015 --subset eval --protocol " +
                     Q(dir_ / "p2015.txt") + " --out " + Q(dir_ / "m"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = ReadManifestCacheFile((dir_ / "m").string());
  EXPECT_EQ(m.corpus, Corpus::kAsvspoof2015);
  EXPECT_EQ(m.subset, Subset::kEval);
  EXPECT_EQ(m.entries.size(), 3u);
}

TEST_F(Cli, PrepareCheckAudioNamesMissing) {
  fs::remove(corpus_.root / "wav" / "LA_T_1000007.wav");
  const auto r = Cmd("prepare --corpus asvspoof2019_la --protocol " + Q(corpus_.train_protocol) +
                     " --audio-root " + Q(corpus_.root / "wav") + " --check-audio --out " +
                     Q(dir_ / "m"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("LA_T_1000007"), std::string::npos) << r.out;
}

TEST_F(Cli, SubsampleProvenanceAndCounts) {
  PrepareAll();
  const auto parent = ReadManifestCacheFile((dir_ / "train.manifest").string());

  ASSERT_EQ(Cmd("subsample --manifest " + Q(dir_ / "train.manifest") +
                " --fraction 1.0 --seed 4 --out " + Q(dir_ / "full")).code, 0);
  const auto full = ReadManifestCacheFile((dir_ / "full").string());
  EXPECT_EQ(full.entries, parent.entries);
  ASSERT_EQ(full.provenance.size(), 3u);
  EXPECT_EQ(full.provenance[0], std::make_pair(std::string("parent_hash"), ManifestHash(parent)));
  EXPECT_EQ(full.provenance[1].first, "fraction");
  EXPECT_EQ(full.provenance[2], std::make_pair(std::string("seed"), std::string("4")));

  // Expected per-stratum counts from the parent's (speaker, attack) cells.
  std::map<std::pair<std::string, std::string>, int> sizes, got;
  for (const auto& e : parent.entries) ++sizes[{e.speaker_id, e.attack_id}];
  std::string texts[3];
  for (int seed = 0; seed < 3; ++seed) {
    const fs::path out = dir_ / ("sub" + std::to_string(seed));
    const auto r = Cmd("subsample --manifest " + Q(dir_ / "train.manifest") +
                       " --fraction 0.25 --seed " + std::to_string(seed) + " --out " + Q(out));
    ASSERT_EQ(r.code, 0) << r.out;
    texts[seed] = ReadFileToString(out.string());
    got.clear();
    for (const auto& e : ReadManifestCacheFile(out.string()).entries) ++got[{e.speaker_id, e.attack_id}];
    for (const auto& [cell, n] : sizes) {
      const int want = std::max(1, static_cast<int>(std::lround(n * 0.25)));
      EXPECT_EQ(got[cell], want) << cell.first << ' ' << cell.second;
    }
  }
  EXPECT_NE(texts[0], texts[1]);
  EXPECT_NE(texts[1], texts[2]);

  ASSERT_EQ(Cmd("subsample --manifest " + Q(dir_ / "train.manifest") +
                " --fraction 0.25 --seed 1 --out " + Q(dir_ / "again")).code, 0);
  EXPECT_EQ(ReadFileToString((dir_ / "again").string()), texts[1]);

  EXPECT_EQ(Cmd("subsample --manifest " + Q(dir_ / "train.manifest") +
                " --fraction 0 --out " + Q(dir_ / "zero")).code, 1);
}

TEST_F(Cli, TrainSmokeWritesCheckpointAndMetadata) {
  PrepareAll();
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = TrainRun("run");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LT(secs, 60.0);
  EXPECT_NE(r.out.find("epoch=0 "), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "config.txt"));
  const auto meta = nlohmann::json::parse(ReadFileToString((dir_ / "run" / "run.json").string()));
  EXPECT_EQ(meta["head"], "vib");
  EXPECT_EQ(meta["frontend"], "toy");
  EXPECT_EQ(meta["seed"], 11);
  ASSERT_TRUE(meta["best_checkpoint"].is_string());
  EXPECT_TRUE(fs::exists(dir_ / "run" / meta["best_checkpoint"].get<std::string>()));

  // The output directory is created exactly once.
  EXPECT_EQ(TrainRun("run").code, 1);
}

TEST_F(Cli, TrainRecordsBaselineHead) {
  PrepareAll();
  const auto r = TrainRun("base", "--head baseline --seed 5");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto meta = nlohmann::json::parse(ReadFileToString((dir_ / "base" / "run.json").string()));
  EXPECT_EQ(meta["head"], "baseline");
  EXPECT_EQ(meta["seed"], 5);
}

TEST_F(Cli, TrainRejectsNegativeBetaRate) {
  PrepareAll();
  std::string text = ReadFileToString((dir_ / "run.cfg").string());
  const auto at = text.find("beta_rate = ");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, text.find('\n', at) - at, "beta_rate = -0.5");
  WriteStringToFile((dir_ / "run.cfg").string(), text);
  const auto r = TrainRun("neg");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("beta_rate"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(dir_ / "neg"));
}

TEST_F(Cli, PretrainedWithoutCacheDirIsConfigError) {
  PrepareAll();
  const auto r = Cmd("train --frontend pretrained --train " + Q(dir_ / "train.manifest") +
                         " --dev " + Q(dir_ / "dev.manifest") + " --out " + Q(dir_ / "pt"),
                     "env -u VIBSPOOF_PRETRAINED_DIR");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("VIBSPOOF_PRETRAINED_DIR"), std::string::npos) << r.out;
}

TEST_F(Cli, ResumeContinuesRun) {
  PrepareAll();
  ASSERT_EQ(TrainRun("run").code, 0);
  std::string text = ReadFileToString((dir_ / "run.cfg").string());
  const auto at = text.find("max_epochs = ");
  text.replace(at, text.find('\n', at) - at, "max_epochs = 3");
  WriteStringToFile((dir_ / "run.cfg").string(), text);
  const auto r = TrainRun("run", "--resume");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("epoch=2 "), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("epoch=0 "), std::string::npos) << r.out;
}

TEST_F(Cli, ScoreIsDeterministicAndEvaluates) {
  PrepareAll();
  ASSERT_EQ(TrainRun("run").code, 0);
  for (const char* name : {"s1", "s2"}) {
    const auto r = Cmd("score --checkpoint " + Q(dir_ / "run") + " --manifest " +
                       Q(dir_ / "eval.manifest") + " --out " + Q(dir_ / name));
    ASSERT_EQ(r.code, 0) << r.out;
  }
  const std::string s1 = ReadFileToString((dir_ / "s1").string());
  EXPECT_EQ(s1, ReadFileToString((dir_ / "s2").string()));
  EXPECT_EQ(ParseScores(s1).size(), 40u);

  const auto r = Cmd("eval --scores " + Q(dir_ / "s1") + " --manifest " + Q(dir_ / "eval.manifest") +
                     " --cost-model default --asv-rates 0.01,0.02,0.3 --out " + Q(dir_ / "rep"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("n_bonafide 8\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("min_tdcf 0."), std::string::npos) << r.out;
  EXPECT_EQ(ReadFileToString((dir_ / "rep").string()), r.out);
}

TEST_F(Cli, ScoreMissingAudioNamesUtterances) {
  PrepareAll();
  ASSERT_EQ(TrainRun("run").code, 0);
  fs::remove(corpus_.root / "wav" / "LA_E_1000003.wav");
  fs::remove(corpus_.root / "wav" / "LA_E_1000011.wav");
  const auto r = Cmd("score --checkpoint " + Q(dir_ / "run") + " --manifest " +
                     Q(dir_ / "eval.manifest") + " --out " + Q(dir_ / "s"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("LA_E_1000003"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("LA_E_1000011"), std::string::npos) << r.out;
}

TEST_F(Cli, ScoreRejectsMismatchedConfig) {
  PrepareAll();
  ASSERT_EQ(TrainRun("run").code, 0);
  RunConfig other = synthetic::DeskConfig();
  other.vib.latent_dim = 8;
  WriteStringToFile((dir_ / "other.cfg").string(), WriteRunConfig(other));
  const auto r = Cmd("score --checkpoint " + Q(dir_ / "run") + " --config " + Q(dir_ / "other.cfg") +
                     " --manifest " + Q(dir_ / "eval.manifest") + " --out " + Q(dir_ / "s"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("latent_dim"), std::string::npos) << r.out;
}

TEST_F(Cli, EvalPerfectSeparation) {
  std::string text;
  for (int i = 0; i < 30; ++i) text += "u" + std::to_string(i) + ' ' + std::to_string(i) + (i < 10 ? " spoof\n" : " bonafide\n");
  WriteStringToFile((dir_ / "s").string(), text);
  const auto r = Cmd("eval --scores " + Q(dir_ / "s") + " --asv-rates 0.01,0.05,0.4");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("eer_percent 0.0000\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("min_tdcf 0.000000\n"), std::string::npos) << r.out;
}

TEST_F(Cli, EvalWithoutCostModelSkipsTdcf) {
  WriteStringToFile((dir_ / "s").string(), "a 0.1 spoof\nb 0.9 bonafide\nc 0.3 spoof\n");
  const auto r = Cmd("eval --scores " + Q(dir_ / "s"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("min_tdcf skipped\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("# t-DCF skipped"), std::string::npos) << r.out;
}

TEST_F(Cli, EvalRandomScoresNearFifty) {
  // EER of independent scores with 2000 per class: sd about 1.1 points.
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  std::string text;
  for (int i = 0; i < 4000; ++i) {
    text += "u" + std::to_string(i) + ' ' + FormatDouble(g(rng)) + (i % 2 ? " spoof\n" : " bonafide\n");
  }
  WriteStringToFile((dir_ / "s").string(), text);
  const auto r = Cmd("eval --scores " + Q(dir_ / "s"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto at = r.out.find("eer_percent ");
  ASSERT_NE(at, std::string::npos);
  const double eer = std::stod(r.out.substr(at + 12));
  EXPECT_NEAR(eer, 50.0, 4.5);
}

TEST_F(Cli, EvalErrors) {
  WriteStringToFile((dir_ / "one").string(), "a 0.1 spoof\nb 0.3 spoof\n");
  EXPECT_EQ(Cmd("eval --scores " + Q(dir_ / "one")).code, 2);
  EXPECT_EQ(Cmd("eval --scores " + Q(dir_ / "absent")).code, 2);
  WriteStringToFile((dir_ / "s").string(), "a 0.1 spoof\nb 0.9 bonafide\n");
  EXPECT_EQ(Cmd("eval --scores " + Q(dir_ / "s") + " --asv-rates 0.1,0.2").code, 1);
  EXPECT_EQ(Cmd("eval --scores " + Q(dir_ / "s") + " --eer-mode mean").code, 1);
}

TEST_F(Cli, ExportEmbeddings) {
  PrepareAll();
  ASSERT_EQ(TrainRun("run").code, 0);
  const std::string ckpt = Q(dir_ / "run");
  ASSERT_EQ(Cmd("export-embeddings --checkpoint " + ckpt + " --manifest " + Q(dir_ / "dev.manifest") +
                " --layer latent_mean --out " + Q(dir_ / "lat")).code, 0);
  ASSERT_EQ(Cmd("export-embeddings --checkpoint " + ckpt + " --manifest " + Q(dir_ / "dev.manifest") +
                " --layer speech_embedding --out " + Q(dir_ / "emb")).code, 0);
  ASSERT_EQ(Cmd("export-embeddings --checkpoint " + ckpt + " --manifest " + Q(dir_ / "dev.manifest") +
                " --layer latent_mean --out " + Q(dir_ / "lat2")).code, 0);
  const std::string lat = ReadFileToString((dir_ / "lat").string());
  EXPECT_EQ(lat, ReadFileToString((dir_ / "lat2").string()));

  auto check = [](const std::string& text, int dim) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    EXPECT_NE(line.find("dim=" + std::to_string(dim)), std::string::npos) << line;
    int rows = 0;
    while (std::getline(in, line)) {
      EXPECT_EQ(static_cast<int>(SplitWhitespace(line).size()), dim + 2);
      ++rows;
    }
    EXPECT_EQ(rows, 40);
  };
  check(lat, 16);
  check(ReadFileToString((dir_ / "emb").string()), 32);

  DatasetManifest empty = ReadManifestCacheFile((dir_ / "dev.manifest").string());
  empty.entries.clear();
  WriteStringToFile((dir_ / "empty.manifest").string(), WriteManifestCache(empty));
  ASSERT_EQ(Cmd("export-embeddings --checkpoint " + ckpt + " --manifest " +
                Q(dir_ / "empty.manifest") + " --layer latent_mean --out " + Q(dir_ / "none")).code,
            0);
  EXPECT_EQ(ReadFileToString((dir_ / "none").string()),
            "# vibspoof-embeddings-table layer=latent_mean dim=16 count=0\n");

  const auto r = Cmd("export-embeddings --checkpoint " + ckpt + " --manifest " +
                     Q(dir_ / "dev.manifest") + " --layer logits --out " + Q(dir_ / "x"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("logits"), std::string::npos) << r.out;
}

TEST_F(Cli, AggregateAcrossSeeds) {
  const char* eers[] = {"1.0000", "2.0000", "6.0000"};
  std::string args;
  for (int i = 0; i < 3; ++i) {
    const fs::path p = dir_ / ("r" + std::to_string(i));
    WriteStringToFile(p.string(), std::string("n_bonafide 5\neer_percent ") + eers[i] +
                                      "\nmin_tdcf 0.1" + std::to_string(i) + "0000\n");
    args += ' ' + Q(p);
  }
  const auto r = Cmd("aggregate --reports" + args);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("runs 3\n"), std::string::npos);
  EXPECT_NE(r.out.find("eer_percent_mean 3.0000\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("eer_percent_std 2.6458\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("min_tdcf_mean 0.110000\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("min_tdcf_std 0.010000\n"), std::string::npos) << r.out;
}

}  // namespace
}  // namespace vibspoof
