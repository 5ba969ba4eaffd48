// tools/vibspoof.cpp

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

// vibspoof: anti-spoofing countermeasure training and evaluation.
//
//   vibspoof prepare   --corpus asvspoof2019_la --subset train --protocol P --audio-root DIR --out M
//   vibspoof subsample --manifest M --fraction 0.05 --seed 1 --out M5
//   vibspoof embed     --config C --manifest M --out CACHE
//   vibspoof train     --config C --train M --dev M --out RUN [--resume]
//   vibspoof score     --checkpoint RUN|CKPT --manifest M --out SCORES
//   vibspoof eval      --scores S --manifest M [--cost-model F|default] [--asv-rates a,b,c]
//   vibspoof export-embeddings --checkpoint RUN|CKPT --manifest M --layer latent_mean --out T
//   vibspoof aggregate --reports R1 R2 R3 [--out F]
//
// Exit status: 0 success, 1 usage or configuration, 2 data validation or
// I/O, 3 numerical failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vibspoof/commands.hpp"

namespace {

using namespace vibspoof;

void AddModelFlags(CLI::App* sub, cmd::ModelOptions* m, std::optional<std::uint64_t>* seed) {
  sub->add_option("--config", m->config_path, "flat key = value run config")->check(CLI::ExistingFile);
  sub->add_option("--seed", *seed, "overrides the config seed");
  sub->add_option("--head", m->head, "overrides the config head")
      ->check(CLI::IsMember({"vib", "baseline"}));
  sub->add_option("--frontend", m->frontend, "overrides the config frontend")
      ->check(CLI::IsMember({"toy", "pretrained"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vibspoof: spoofed-speech countermeasures with a variational information "
               "bottleneck head"};
  app.require_subcommand(1);

  cmd::PrepareOptions prep;
  auto* prepare = app.add_subcommand("prepare", "validate a protocol file into a manifest cache");
  prepare->add_option("--corpus", prep.corpus, "asvspoof2015 | asvspoof2019_la | asvspoof2021_la")
      ->required();
  prepare->add_option("--subset", prep.subset, "train | dev | eval");
  prepare->add_option("--protocol", prep.protocol, "organiser protocol file")->required();
  prepare->add_option("--audio-root", prep.audio_root, "directory holding the audio");
  prepare->add_option("--out", prep.out, "manifest cache to write")->required();
  prepare->add_flag("--check-audio", prep.check_audio, "fail if any utterance has no audio file");

  cmd::SubsampleOptions sub;
  auto* subsample = app.add_subcommand("subsample", "stratified low-resource subset");
  subsample->add_option("--manifest", sub.manifest)->required()->check(CLI::ExistingFile);
  subsample->add_option("--fraction", sub.fraction, "in (0, 1]")->required();
  subsample->add_option("--seed", sub.seed);
  subsample->add_option("--out", sub.out)->required();

  cmd::EmbedOptions emb;
  std::optional<std::uint64_t> emb_seed;
  auto* embed = app.add_subcommand("embed", "write a frozen-frontend embedding cache");
  AddModelFlags(embed, &emb.model, &emb_seed);
  embed->add_option("--manifest", emb.manifest)->required()->check(CLI::ExistingFile);
  embed->add_option("--out", emb.out)->required();

  cmd::TrainOptions tr;
  std::optional<std::uint64_t> tr_seed;
  auto* train = app.add_subcommand("train", "fine-tune a head; writes a run directory");
  AddModelFlags(train, &tr.model, &tr_seed);
  train->add_option("--train", tr.train_manifest, "train manifest cache")->required()->check(CLI::ExistingFile);
  train->add_option("--dev", tr.dev_manifest, "dev manifest cache")->required()->check(CLI::ExistingFile);
  train->add_option("--train-embeddings", tr.train_embeddings, "embedding cache for --train");
  train->add_option("--dev-embeddings", tr.dev_embeddings, "embedding cache for --dev");
  train->add_option("--out", tr.out, "run directory (created)")->required();
  train->add_flag("--resume", tr.resume, "continue the run in --out from last.ckpt");

  cmd::ScoreOptions sc;
  auto* score = app.add_subcommand("score", "eval-mode scores for every manifest utterance");
  score->add_option("--checkpoint", sc.checkpoint, "checkpoint file or run directory")->required();
  score->add_option("--config", sc.config_path, "optional; must match the checkpoint")
      ->check(CLI::ExistingFile);
  score->add_option("--manifest", sc.manifest)->required()->check(CLI::ExistingFile);
  score->add_option("--out", sc.out)->required();
  score->add_flag("--with-keys", sc.with_keys, "append the manifest key to each line");

  cmd::EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "EER and min t-DCF of a score file");
  eval->add_option("--scores", ev.scores)->required();
  eval->add_option("--manifest", ev.manifest, "supplies keys when the score file has none");
  eval->add_option("--cost-model", ev.cost_model, "'default' or a key = value file");
  eval->add_option("--asv-rates", ev.asv_rates, "p_fa,p_miss,p_miss_spoof of the ASV system");
  eval->add_option("--asv-scores", ev.asv_scores, "organiser ASV score file");
  eval->add_option("--eer-mode", ev.eer_mode, "midpoint | interpolate");
  eval->add_option("--out", ev.out, "report file");

  cmd::ExportOptions ex;
  auto* exp = app.add_subcommand("export-embeddings", "embedding table for 2-D projection");
  exp->add_option("--checkpoint", ex.checkpoint, "checkpoint file or run directory")->required();
  exp->add_option("--manifest", ex.manifest)->required()->check(CLI::ExistingFile);
  exp->add_option("--layer", ex.layer, "speech_embedding | latent_mean")->required();
  exp->add_option("--out", ex.out)->required();

  std::vector<std::string> agg_reports;
  std::string agg_out;
  auto* agg = app.add_subcommand("aggregate", "mean and std of eval reports across seeds");
  agg->add_option("--reports", agg_reports)->required()->expected(1, -1);
  agg->add_option("--out", agg_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*prepare) {
      cmd::Prepare(prep, std::cout);
    } else if (*subsample) {
      cmd::Subsample(sub, std::cout);
    } else if (*embed) {
      emb.model.seed = emb_seed;
      cmd::EmbedCommand(emb, std::cout);
    } else if (*train) {
      tr.model.seed = tr_seed;
      const auto r = cmd::Train(tr, std::cout);
      std::cout << "best epoch " << r.best.best_epoch << " dev_eer "
                << FormatFixed(r.best.best_eer, 4) << '\n';
    } else if (*score) {
      cmd::Score(sc, std::cout);
    } else if (*eval) {
      cmd::Eval(ev, std::cout);
    } else if (*exp) {
      cmd::ExportEmbeddings(ex, std::cout);
    } else if (*agg) {
      cmd::Aggregate(agg_reports, agg_out, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "vibspoof: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "vibspoof: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}
