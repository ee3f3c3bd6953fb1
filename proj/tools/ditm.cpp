// Copyright 2026 The DITM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// ditm: score | train | eval | synth | gradcheck

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "ditm/app.hpp"

namespace {

using ditm::app::kExitCheckFailed;
using ditm::app::kExitOk;
using ditm::app::kExitUsage;

// Flag overrides applied on top of defaults and the optional --config file.
struct TrainFlags {
  std::string config_file;
  std::optional<std::size_t> batch_size, epochs, lr_decay_epoch, warmup_epochs, embed_dim;
  std::optional<double> lr, lr_decay_factor, weight_decay, alpha, tau, lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> objective;
  bool no_mining = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON train config; flags override its values");
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--lr", lr);
    cmd->add_option("--lr-decay-epoch", lr_decay_epoch);
    cmd->add_option("--lr-decay-factor", lr_decay_factor);
    cmd->add_option("--weight-decay", weight_decay);
    cmd->add_option("--warmup-epochs", warmup_epochs);
    cmd->add_option("--embed-dim", embed_dim);
    cmd->add_option("--objective", objective, "triplet | adaptive | overall");
    cmd->add_option("--alpha", alpha, "fixed margin of the triplet baseline");
    cmd->add_option("--tau", tau, "adaptive margin scale");
    cmd->add_option("--lambda", lambda, "weight of the ordering loss");
    cmd->add_option("--seed", seed);
    cmd->add_flag("--no-mining", no_mining, "never use hardest-negative mining");
  }

  ditm::trainer::TrainConfig resolve() const {
    ditm::trainer::TrainConfig c;
    if (!config_file.empty()) {
      ditm::app::require_file(config_file);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(ditm::io::read_file(config_file));
      } catch (const nlohmann::json::exception& e) {
        throw ditm::FormatError(config_file + ": " + e.what());
      }
      ditm::io::apply_train_config(j, c);
    }
    if (batch_size) c.batch_size = *batch_size;
    if (epochs) c.epochs = *epochs;
    if (lr) c.lr = *lr;
    if (lr_decay_epoch) c.lr_decay_epoch = *lr_decay_epoch;
    if (lr_decay_factor) c.lr_decay_factor = *lr_decay_factor;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (warmup_epochs) c.warmup_epochs = *warmup_epochs;
    if (embed_dim) c.embed_dim = *embed_dim;
    if (objective) c.objective = ditm::trainer::parse_objective(*objective);
    if (alpha) c.loss.alpha = *alpha;
    if (tau) c.loss.tau = *tau;
    if (lambda) c.loss.lambda = *lambda;
    if (seed) c.seed = *seed;
    if (no_mining) c.loss.use_hardest_mining = false;
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Descriptive image-text matching toolkit"};
  app.require_subcommand(1);

  ditm::app::ScoreOptions score;
  std::string score_corpus, score_out;
  auto* score_cmd = app.add_subcommand("score", "Score caption descriptiveness against a pool split");
  score_cmd->add_option("--corpus", score_corpus, "corpus JSONL")->required();
  score_cmd->add_option("--pool-split", score.pool_split, "split used as the document pool");
  score_cmd->add_option("--out", score_out, "output directory")->required();

  ditm::app::TrainOptions train;
  std::string train_features, train_corpus, train_table, train_out, train_resume;
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train projection model");
  train_cmd->add_option("--features", train_features, "directory with images.json and texts.json")->required();
  train_cmd->add_option("--corpus", train_corpus, "corpus JSONL")->required();
  train_cmd->add_option("--table", train_table, "descriptiveness table JSONL")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to continue from");
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every, "also checkpoint every N epochs");
  train_flags.add_to(train_cmd);

  ditm::app::EvalOptions evalo;
  std::string eval_ckpt, eval_features, eval_corpus, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--features", eval_features, "directory with images.json and texts.json")->required();
  eval_cmd->add_option("--corpus", eval_corpus, "corpus JSONL")->required();
  eval_cmd->add_option("--split", evalo.split, "split to evaluate");
  eval_cmd->add_option("--steps", evalo.traversal_steps, "traversal points, both ends included");
  eval_cmd->add_option("--folds", evalo.folds, "average recalls over N image folds");
  eval_cmd->add_option("--out", eval_out, "output directory")->required();

  ditm::datagen::SynthSpec spec;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic hierarchical corpus and features");
  synth_cmd->add_option("--images", spec.n_images);
  synth_cmd->add_option("--levels", spec.levels);
  synth_cmd->add_option("--shared-vocab", spec.shared_vocab);
  synth_cmd->add_option("--rare-vocab", spec.rare_vocab);
  synth_cmd->add_option("--words-per-level", spec.words_per_level);
  synth_cmd->add_option("--feature-dim", spec.feature_dim);
  synth_cmd->add_option("--noise-sigma", spec.noise_sigma);
  synth_cmd->add_flag("--unique-rare", spec.unique_rare);
  synth_cmd->add_option("--val-fraction", spec.val_fraction);
  synth_cmd->add_option("--test-fraction", spec.test_fraction);
  synth_cmd->add_option("--seed", spec.seed);
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  std::uint64_t gc_seed = 0;
  std::size_t gc_trials = 20;
  std::string gc_out;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Check analytic loss gradients against finite differences");
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_option("--trials", gc_trials);
  gc_cmd->add_option("--out", gc_out, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (score_cmd->parsed()) {
      score.corpus = score_corpus;
      score.out = score_out;
      ditm::app::cmd_score(score);
    } else if (train_cmd->parsed()) {
      train.features = train_features;
      train.corpus = train_corpus;
      train.table = train_table;
      train.out = train_out;
      if (!train_resume.empty()) train.resume = train_resume;
      train.config = train_flags.resolve();
      auto outcome = ditm::app::cmd_train(train);
      if (!outcome.log.empty()) {
        std::cout << "trained to epoch " << outcome.state.epoch << ", final loss " << outcome.log.back().loss
                  << "\n";
      }
    } else if (eval_cmd->parsed()) {
      evalo.checkpoint = eval_ckpt;
      evalo.features = eval_features;
      evalo.corpus = eval_corpus;
      evalo.out = eval_out;
      auto rep = ditm::app::cmd_eval(evalo);
      std::cout << ditm::app::report_to_json(rep).dump(2) << "\n";
    } else if (synth_cmd->parsed()) {
      ditm::app::cmd_synth(spec, synth_out);
    } else if (gc_cmd->parsed()) {
      std::optional<std::filesystem::path> out;
      if (!gc_out.empty()) out = gc_out;
      return ditm::app::cmd_gradcheck(gc_seed, gc_trials, std::cout, out);
    }
  } catch (const ditm::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}
