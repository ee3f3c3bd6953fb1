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

#pragma once

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ditm/corpus.hpp"
#include "ditm/datagen.hpp"
#include "ditm/error.hpp"
#include "ditm/eval.hpp"
#include "ditm/geometry.hpp"
#include "ditm/gradcheck.hpp"
#include "ditm/io.hpp"
#include "ditm/trainer.hpp"

// The score, train, eval, synth and gradcheck runs behind the command line.
// Every run writes into its own output directory, including a config.json
// echo of the resolved settings.
namespace ditm::app {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

inline void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw IoError("no such file: '" + p.string() + "'");
}

inline void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw IoError("no such directory: '" + p.string() + "'");
}

inline fs::path image_features_path(const fs::path& dir) { return dir / "images.json"; }
inline fs::path text_features_path(const fs::path& dir) { return dir / "texts.json"; }

inline void write_config_echo(const fs::path& out_dir, const json& config) {
  io::write_file(out_dir / "config.json", config.dump(2) + "\n");
}

// ----------------------------------------------------------------- score --

struct ScoreOptions {
  fs::path corpus;
  std::string pool_split = "train";
  fs::path out;
};

inline void cmd_score(const ScoreOptions& opt) {
  require_file(opt.corpus);
  const auto sentences = io::read_corpus(opt.corpus);
  auto [pool, table] = corpus::score_corpus(sentences, opt.pool_split);
  io::write_table(opt.out / "table.jsonl", table, opt.pool_split);
  write_config_echo(opt.out, {{"command", "score"},
                              {"corpus", opt.corpus.string()},
                              {"pool_split", opt.pool_split},
                              {"pool_sentences", pool.num_sentences}});
}

// ----------------------------------------------------------------- synth --

inline json synth_spec_to_json(const datagen::SynthSpec& s) {
  return {{"n_images", s.n_images},         {"levels", s.levels},
          {"shared_vocab", s.shared_vocab}, {"rare_vocab", s.rare_vocab},
          {"words_per_level", s.words_per_level}, {"feature_dim", s.feature_dim},
          {"noise_sigma", s.noise_sigma},   {"unique_rare", s.unique_rare},
          {"val_fraction", s.val_fraction}, {"test_fraction", s.test_fraction},
          {"seed", s.seed}};
}

// Writes corpus.jsonl and features/{images,texts}.{json,bin}.
inline void cmd_synth(const datagen::SynthSpec& spec, const fs::path& out) {
  spec.validate();
  const auto sentences = datagen::gen_corpus(spec);
  const auto feats = datagen::gen_features(sentences, spec);
  io::write_corpus(out / "corpus.jsonl", sentences);
  io::write_features(image_features_path(out / "features"), feats.images);
  io::write_features(text_features_path(out / "features"), feats.texts);
  write_config_echo(out, {{"command", "synth"}, {"spec", synth_spec_to_json(spec)}});
}

// ---------------------------------------------------------- dataset glue --

// Rows of one split: its sentences in corpus order, and their images in
// feature-file order.
inline trainer::Dataset assemble_dataset(const FeatureSet& images, const FeatureSet& texts,
                                         const std::vector<corpus::Sentence>& sentences,
                                         const corpus::DescriptivenessTable* table,
                                         const std::string& split) {
  std::map<std::string, std::size_t> text_row;
  for (std::size_t i = 0; i < texts.ids.size(); ++i) text_row[texts.ids[i]] = i;
  std::set<std::string> wanted_images;
  for (const auto& s : sentences)
    if (s.split == split) wanted_images.insert(s.image_id);

  trainer::Dataset d;
  std::map<std::string, std::size_t> image_index;
  std::vector<std::size_t> image_rows;
  for (std::size_t i = 0; i < images.ids.size(); ++i) {
    if (!wanted_images.count(images.ids[i])) continue;
    image_index[images.ids[i]] = image_rows.size();
    image_rows.push_back(i);
    d.image_ids.push_back(images.ids[i]);
  }
  std::vector<std::size_t> text_rows;
  for (const auto& s : sentences) {
    if (s.split != split) continue;
    auto img = image_index.find(s.image_id);
    if (img == image_index.end()) throw FormatError("image '" + s.image_id + "' has no features");
    auto row = text_row.find(s.id);
    if (row == text_row.end()) throw FormatError("sentence '" + s.id + "' has no features");
    text_rows.push_back(row->second);
    d.image_of_text.push_back(img->second);
    d.deltas.push_back(table != nullptr ? table->delta(s.id) : 0.5);
    d.levels.push_back(s.level.value_or(0));
    d.text_ids.push_back(s.id);
  }
  d.image_feats = images.values.gather_rows(image_rows);
  d.text_feats = texts.values.gather_rows(text_rows);
  return d;
}

// ----------------------------------------------------------------- train --

struct TrainOptions {
  fs::path features;  // directory with images.json and texts.json
  fs::path corpus;
  fs::path table;
  fs::path out;
  std::optional<fs::path> resume;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  trainer::TrainConfig config;
};

struct TrainOutcome {
  std::vector<trainer::EpochRecord> log;
  trainer::TrainState state;
};

inline TrainOutcome cmd_train(const TrainOptions& opt) {
  require_dir(opt.features);
  require_file(image_features_path(opt.features));
  require_file(text_features_path(opt.features));
  require_file(opt.corpus);
  require_file(opt.table);
  if (opt.resume) require_file(*opt.resume);
  opt.config.validate();

  const auto images = io::read_features(image_features_path(opt.features));
  const auto texts = io::read_features(text_features_path(opt.features));
  const auto sentences = io::read_corpus(opt.corpus);
  const auto table = io::read_table(opt.table);
  const auto train_set = assemble_dataset(images, texts, sentences, &table, "train");
  const auto val_set = assemble_dataset(images, texts, sentences, &table, "val");

  trainer::TrainState state;
  if (opt.resume) {
    io::Checkpoint ck = io::load_checkpoint(*opt.resume);
    if (io::config_hash(ck.config) != io::config_hash(opt.config)) {
      throw Error("checkpoint '" + opt.resume->string() + "' was written with a different config");
    }
    state = std::move(ck.state);
  } else {
    state = trainer::init_state(train_set, opt.config);
  }

  write_config_echo(opt.out, {{"command", "train"},
                              {"features", opt.features.string()},
                              {"corpus", opt.corpus.string()},
                              {"table", opt.table.string()},
                              {"resume", opt.resume ? json(opt.resume->string()) : json(nullptr)},
                              {"checkpoint_every", opt.checkpoint_every},
                              {"train", io::train_config_to_json(opt.config)}});

  std::string log_text;
  auto on_epoch = [&](const trainer::TrainState& s, const trainer::EpochRecord& rec) {
    log_text += io::epoch_record_to_json(rec).dump() + "\n";
    io::write_file(opt.out / "train_log.jsonl", log_text);
    if (opt.checkpoint_every > 0 && s.epoch % opt.checkpoint_every == 0) {
      io::save_checkpoint({s, opt.config},
                          opt.out / ("checkpoint_epoch" + std::to_string(s.epoch) + ".bin"));
    }
  };
  TrainOutcome outcome;
  outcome.log = trainer::train(train_set, val_set.num_images() > 0 ? &val_set : nullptr, opt.config,
                               state, on_epoch);
  io::write_file(opt.out / "train_log.jsonl", log_text);
  io::save_checkpoint({state, opt.config}, opt.out / "checkpoint.bin");
  outcome.state = std::move(state);
  return outcome;
}

// ------------------------------------------------------------------ eval --

struct EvalOptions {
  fs::path checkpoint;
  fs::path features;
  fs::path corpus;
  std::string split = "test";
  std::size_t traversal_steps = 50;
  std::size_t folds = 1;
  fs::path out;
};

struct RetrievalReport {
  eval::RecallTable recalls;
  double rsum = 0.0;
  eval::HierarchyReport hierarchy;
  std::size_t images = 0;
  std::size_t texts = 0;
  // (level, distance) for every labeled caption, in dataset order
  std::vector<std::tuple<std::string, std::string, int, double>> distances;
};

// Root of the traversal: the text embedding of an all-zero feature (the
// empty caption), falling back to the normalized text centroid when the
// projection maps it to the origin.
inline std::vector<double> root_embedding(const trainer::ProjectionModel& model,
                                          const EmbeddingMatrix& texts) {
  const double n = geometry::norm(model.b_txt);
  std::vector<double> root(model.embed_dim(), 0.0);
  if (n >= geometry::kMinRowNorm) {
    for (std::size_t k = 0; k < root.size(); ++k) root[k] = model.b_txt[k] / n;
    return root;
  }
  for (std::size_t r = 0; r < texts.rows(); ++r)
    for (std::size_t k = 0; k < root.size(); ++k) root[k] += texts.values(r, k);
  const double m = geometry::norm(root);
  if (m < geometry::kMinRowNorm) throw Error("eval: cannot place a root embedding");
  for (double& x : root) x /= m;
  return root;
}

inline RetrievalReport evaluate_model(const trainer::ProjectionModel& model, const trainer::Dataset& data,
                                      std::size_t traversal_steps = 50, std::size_t folds = 1) {
  if (data.num_images() == 0 || data.num_texts() == 0) throw Error("eval: split has no images or texts");
  auto fwd = trainer::embed_dataset(model, data);
  const auto& img = fwd.image.embeddings;
  const auto& txt = fwd.text.embeddings;
  const Matrix sims = geometry::sim_matrix(img, txt);

  RetrievalReport rep;
  rep.images = data.num_images();
  rep.texts = data.num_texts();
  rep.recalls = folds > 1 ? eval::fold_averaged_recalls(sims, data.image_of_text, folds)
                          : eval::bidirectional_recalls(sims, data.image_of_text);
  const Matrix text_sims = geometry::sim_matrix(txt, txt);
  bool multi_caption = false;
  {
    std::vector<std::size_t> count(data.num_images(), 0);
    for (std::size_t o : data.image_of_text) multi_caption = multi_caption || ++count[o] > 1;
  }
  if (multi_caption && data.num_texts() > 1) {
    for (std::size_t k : {1, 5}) {
      rep.recalls.set("t2t", k, eval::text_to_text_recall(text_sims, data.image_of_text, k));
    }
  }
  rep.rsum = rep.recalls.rsum();

  const auto root = root_embedding(model, txt);
  rep.hierarchy = eval::evaluate_hierarchy(img, txt, data.image_of_text, data.levels, root, traversal_steps);
  for (std::size_t t = 0; t < data.num_texts(); ++t) {
    if (data.levels[t] == 0) continue;
    const std::size_t i = data.image_of_text[t];
    rep.distances.emplace_back(data.image_ids[i], data.text_ids[t], data.levels[t],
                               geometry::euclid_dist(img.row(i), txt.row(t)));
  }
  return rep;
}

inline json report_to_json(const RetrievalReport& r) {
  json recalls = json::object();
  for (const auto& [k, v] : r.recalls.values) recalls[k] = v;
  json per_level = json::object();
  for (const auto& [lv, v] : r.hierarchy.per_level_recall) per_level[std::to_string(lv)] = v;
  return {{"images", r.images},
          {"texts", r.texts},
          {"recalls", recalls},
          {"rsum", r.rsum},
          {"precision", r.hierarchy.precision},
          {"recall", r.hierarchy.recall},
          {"d_corr", r.hierarchy.d_corr},
          {"hierarchy_images", r.hierarchy.images},
          {"d_corr_images", r.hierarchy.d_corr_images},
          {"per_level_recall", per_level}};
}

inline std::string format_number(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

// One row per metric.
inline std::string recalls_csv(const RetrievalReport& r) {
  std::string out = "metric,value\n";
  for (const auto& [k, v] : r.recalls.values) out += k + "," + format_number(v) + "\n";
  out += "rsum," + format_number(r.rsum) + "\n";
  out += "precision," + format_number(r.hierarchy.precision) + "\n";
  out += "recall," + format_number(r.hierarchy.recall) + "\n";
  out += "d_corr," + format_number(r.hierarchy.d_corr) + "\n";
  return out;
}

inline std::string per_level_csv(const RetrievalReport& r) {
  std::map<int, std::pair<double, std::size_t>> dist;
  for (const auto& [img, txt, level, d] : r.distances) {
    dist[level].first += d;
    ++dist[level].second;
  }
  std::string out = "level,texts,mean_distance,recall\n";
  for (const auto& [level, acc] : dist) {
    auto it = r.hierarchy.per_level_recall.find(level);
    out += std::to_string(level) + "," + std::to_string(acc.second) + "," +
           format_number(acc.first / static_cast<double>(acc.second)) + "," +
           (it == r.hierarchy.per_level_recall.end() ? std::string() : format_number(it->second)) + "\n";
  }
  return out;
}

inline std::string distances_csv(const RetrievalReport& r) {
  std::string out = "image_id,text_id,level,distance\n";
  for (const auto& [img, txt, level, d] : r.distances) {
    out += img + "," + txt + "," + std::to_string(level) + "," + format_number(d) + "\n";
  }
  return out;
}

inline RetrievalReport cmd_eval(const EvalOptions& opt) {
  require_file(opt.checkpoint);
  require_dir(opt.features);
  require_file(image_features_path(opt.features));
  require_file(text_features_path(opt.features));
  require_file(opt.corpus);
  const io::Checkpoint ck = io::load_checkpoint(opt.checkpoint);
  const auto images = io::read_features(image_features_path(opt.features));
  const auto texts = io::read_features(text_features_path(opt.features));
  const auto sentences = io::read_corpus(opt.corpus);
  const auto data = assemble_dataset(images, texts, sentences, nullptr, opt.split);
  if (data.num_images() == 0) throw Error("eval: split '" + opt.split + "' has no sentences");

  RetrievalReport rep = evaluate_model(ck.state.model, data, opt.traversal_steps, opt.folds);
  io::write_file(opt.out / "report.json", report_to_json(rep).dump(2) + "\n");
  io::write_file(opt.out / "recalls.csv", recalls_csv(rep));
  io::write_file(opt.out / "per_level.csv", per_level_csv(rep));
  io::write_file(opt.out / "distances.csv", distances_csv(rep));
  write_config_echo(opt.out, {{"command", "eval"},
                              {"checkpoint", opt.checkpoint.string()},
                              {"features", opt.features.string()},
                              {"corpus", opt.corpus.string()},
                              {"split", opt.split},
                              {"traversal_steps", opt.traversal_steps},
                              {"folds", opt.folds}});
  return rep;
}

// ------------------------------------------------------------- gradcheck --

inline json trial_to_json(const gradcheck::Trial& t) {
  return {{"loss", t.loss},
          {"trial", t.trial},
          {"value", t.value},
          {"rel_error", t.cmp.rel_error},
          {"max_abs_error", t.cmp.max_abs_error},
          {"worst_coordinate", t.cmp.worst_index},
          {"kink_rejections", t.kink_rejections},
          {"passed", t.passed}};
}

// Writes one JSON line per trial to `diag`; returns the exit code.
inline int cmd_gradcheck(std::uint64_t seed, std::size_t trials, std::ostream& diag,
                         const std::optional<fs::path>& out = std::nullopt) {
  if (trials == 0) throw Error("gradcheck: --trials must be >= 1");
  gradcheck::SuiteOptions opt;
  opt.trials = trials;
  const auto report = gradcheck::run_suite(seed, opt);
  std::string lines;
  for (const auto& t : report.trials) lines += trial_to_json(t).dump() + "\n";
  diag << lines;
  if (out) {
    io::write_file(*out / "gradcheck.jsonl", lines);
    write_config_echo(*out, {{"command", "gradcheck"}, {"seed", seed}, {"trials", trials}});
  }
  if (!report.passed()) {
    const auto* w = report.worst();
    diag << "gradcheck FAILED: worst " << w->loss << " trial " << w->trial << " rel_error "
         << w->cmp.rel_error << " at coordinate " << w->cmp.worst_index << "\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}

}  // namespace ditm::app
