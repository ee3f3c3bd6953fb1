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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ditm/error.hpp"
#include "ditm/geometry.hpp"
#include "ditm/matrix.hpp"

// Retrieval metrics: recall@K and RSUM, hierarchical traversal towards a root
// embedding with set precision/recall, per-level recall, and d_corr.
//
// All percentages are in [0, 100]. Rankings sort by descending similarity and
// break ties by ascending gallery index.
namespace ditm::eval {

// For each query, the gallery indices that count as relevant.
using RelevanceMap = std::vector<std::vector<std::size_t>>;

// Rank of gallery item `item` for a query row: the number of items ranked
// strictly ahead of it.
inline std::size_t rank_of(std::span<const double> scores, std::size_t item) {
  std::size_t ahead = 0;
  const double s = scores[item];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && j < item)) ++ahead;
  }
  return ahead;
}

inline double recall_at_k(const Matrix& sims, const RelevanceMap& relevance, std::size_t k) {
  if (sims.cols() == 0) throw Error("recall_at_k: empty gallery");
  if (k == 0 || k > sims.cols()) throw Error("recall_at_k: K must be in [1, gallery size]");
  if (relevance.size() != sims.rows()) throw Error("recall_at_k: relevance/query count mismatch");
  if (sims.rows() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < sims.rows(); ++q) {
    auto row = sims.row(q);
    for (std::size_t item : relevance[q]) {
      if (item >= sims.cols()) throw Error("recall_at_k: relevant id outside the gallery");
      if (rank_of(row, item) < k) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(sims.rows());
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

// Named recalls such as "i2t@1" or "t2i@10".
struct RecallTable {
  std::map<std::string, double> values;

  double at(const std::string& direction, std::size_t k) const {
    auto it = values.find(direction + "@" + std::to_string(k));
    if (it == values.end()) {
      throw Error("recall table has no entry for " + direction + "@" + std::to_string(k));
    }
    return it->second;
  }
  void set(const std::string& direction, std::size_t k, double v) {
    values[direction + "@" + std::to_string(k)] = v;
  }
  double rsum() const;
};

inline constexpr std::array<std::size_t, 3> kRsumKs = {1, 5, 10};

// Sum of R@{1,5,10} in both directions.
inline double rsum(const RecallTable& table) {
  double total = 0.0;
  for (const char* dir : {"i2t", "t2i"}) {
    for (std::size_t k : kRsumKs) total += table.at(dir, k);
  }
  return total;
}

inline double RecallTable::rsum() const { return eval::rsum(*this); }

inline RelevanceMap image_to_text_relevance(const std::vector<std::size_t>& image_of_text,
                                            std::size_t num_images) {
  RelevanceMap rel(num_images);
  for (std::size_t t = 0; t < image_of_text.size(); ++t) rel[image_of_text[t]].push_back(t);
  return rel;
}

inline RelevanceMap text_to_image_relevance(const std::vector<std::size_t>& image_of_text) {
  RelevanceMap rel(image_of_text.size());
  for (std::size_t t = 0; t < image_of_text.size(); ++t) rel[t] = {image_of_text[t]};
  return rel;
}

// i2t and t2i recall at each K (clipped to the gallery size).
inline RecallTable bidirectional_recalls(const Matrix& sims,
                                         const std::vector<std::size_t>& image_of_text,
                                         std::span<const std::size_t> ks = kRsumKs) {
  const RelevanceMap i2t = image_to_text_relevance(image_of_text, sims.rows());
  const RelevanceMap t2i = text_to_image_relevance(image_of_text);
  const Matrix sims_t = transpose(sims);
  RecallTable table;
  for (std::size_t k : ks) {
    table.set("i2t", k, recall_at_k(sims, i2t, std::min(k, sims.cols())));
    table.set("t2i", k, recall_at_k(sims_t, t2i, std::min(k, sims_t.cols())));
  }
  return table;
}

// Text-to-text recall: other captions of the same image are relevant; the
// query itself is pushed to the end of its own ranking.
inline double text_to_text_recall(const Matrix& text_sims, const std::vector<std::size_t>& image_of_text,
                                  std::size_t k) {
  Matrix s = text_sims;
  RelevanceMap rel(image_of_text.size());
  std::vector<std::size_t> queries;
  for (std::size_t a = 0; a < image_of_text.size(); ++a) {
    for (std::size_t b = 0; b < image_of_text.size(); ++b) {
      if (a != b && image_of_text[a] == image_of_text[b]) rel[a].push_back(b);
    }
    s(a, a) = -std::numeric_limits<double>::infinity();
    if (!rel[a].empty()) queries.push_back(a);
  }
  Matrix q(queries.size(), s.cols());
  RelevanceMap qrel;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto src = s.row(queries[i]);
    std::copy(src.begin(), src.end(), q.row(i).begin());
    qrel.push_back(rel[queries[i]]);
  }
  return recall_at_k(q, qrel, std::min(k, s.cols()));
}

// Averages bidirectional recalls over `folds` contiguous image folds, each
// with its own captions as the gallery (the 5-fold 1K-image protocol).
inline RecallTable fold_averaged_recalls(const Matrix& sims,
                                         const std::vector<std::size_t>& image_of_text,
                                         std::size_t folds) {
  const std::size_t n_img = sims.rows();
  if (folds == 0 || folds > n_img) throw Error("fold_averaged_recalls: invalid fold count");
  RecallTable mean;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n_img / folds;
    const std::size_t hi = (f + 1) * n_img / folds;
    std::vector<std::size_t> texts;
    std::vector<std::size_t> owner;
    for (std::size_t t = 0; t < image_of_text.size(); ++t) {
      if (image_of_text[t] >= lo && image_of_text[t] < hi) {
        texts.push_back(t);
        owner.push_back(image_of_text[t] - lo);
      }
    }
    Matrix sub(hi - lo, texts.size());
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < texts.size(); ++j) sub(i - lo, j) = sims(i, texts[j]);
    RecallTable part = bidirectional_recalls(sub, owner);
    for (const auto& [key, v] : part.values) mean.values[key] += v / static_cast<double>(folds);
  }
  return mean;
}

// Index of the candidate nearest to `point`; ties go to the lowest index.
inline std::size_t nearest(std::span<const double> point, const EmbeddingMatrix& candidates) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < candidates.rows(); ++j) {
    const double d = geometry::euclid_dist(point, candidates.row(j));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

// Walks from the candidate nearest the image to the root in `steps` equally
// spaced points (both ends included) and returns the nearest candidate at
// each point, deduplicated in first-encounter order. Points are not
// re-normalized.
inline std::vector<std::size_t> hierarchical_traverse(std::span<const double> image,
                                                      const EmbeddingMatrix& candidates,
                                                      std::span<const double> root,
                                                      std::size_t steps = 50) {
  if (candidates.rows() == 0) throw Error("hierarchical_traverse: no candidate texts");
  if (steps < 2) throw Error("hierarchical_traverse: steps must be >= 2");
  if (image.size() != candidates.dim() || root.size() != candidates.dim()) {
    throw Error("hierarchical_traverse: dimension mismatch");
  }
  const std::size_t start = nearest(image, candidates);
  auto e0 = candidates.row(start);
  std::vector<std::size_t> out;
  std::vector<bool> seen(candidates.rows(), false);
  std::vector<double> point(e0.size());
  for (std::size_t s = 0; s < steps; ++s) {
    const double a = static_cast<double>(s) / static_cast<double>(steps - 1);
    for (std::size_t k = 0; k < point.size(); ++k) point[k] = e0[k] + a * (root[k] - e0[k]);
    const std::size_t hit = nearest(point, candidates);
    if (!seen[hit]) {
      seen[hit] = true;
      out.push_back(hit);
    }
  }
  return out;
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

inline PrecisionRecall set_precision_recall(const std::set<std::size_t>& retrieved,
                                            const std::set<std::size_t>& ground_truth) {
  if (ground_truth.empty()) throw Error("set_precision_recall: empty ground truth");
  std::size_t correct = 0;
  for (std::size_t id : retrieved) correct += ground_truth.count(id);
  PrecisionRecall pr;
  pr.precision = retrieved.empty() ? 0.0 : 100.0 * correct / static_cast<double>(retrieved.size());
  pr.recall = 100.0 * correct / static_cast<double>(ground_truth.size());
  return pr;
}

// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Pearson correlation of average ranks; 0 when either side is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// Rank correlation between hierarchy level and negative distance to the
// image, times 100. +100 means deeper levels are strictly closer.
inline double d_corr(std::span<const double> image, const EmbeddingMatrix& texts,
                     std::span<const int> levels) {
  if (texts.rows() != levels.size()) throw Error("d_corr: one level per text required");
  if (std::set<int>(levels.begin(), levels.end()).size() < 2) {
    throw Error("d_corr: need at least two hierarchy levels");
  }
  std::vector<double> lv(levels.begin(), levels.end());
  std::vector<double> neg_dist(texts.rows());
  for (std::size_t i = 0; i < texts.rows(); ++i) {
    neg_dist[i] = -geometry::euclid_dist(image, texts.row(i));
  }
  return 100.0 * spearman(lv, neg_dist);
}

// Per level: percentage of that level's ground-truth texts that appear in
// their image's retrieved set. Levels with no ground truth are omitted.
struct LevelledText {
  std::size_t text = 0;
  int level = 0;
};

inline std::map<int, double> per_level_recall(
    const std::vector<std::set<std::size_t>>& retrieved,
    const std::vector<std::vector<LevelledText>>& ground_truth) {
  if (retrieved.size() != ground_truth.size()) throw Error("per_level_recall: size mismatch");
  std::map<int, std::pair<std::size_t, std::size_t>> counts;  // level -> (hit, total)
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    for (const auto& gt : ground_truth[i]) {
      auto& c = counts[gt.level];
      ++c.second;
      c.first += retrieved[i].count(gt.text);
    }
  }
  std::map<int, double> out;
  for (const auto& [level, c] : counts) {
    out[level] = 100.0 * static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  return out;
}

struct HierarchyReport {
  double precision = 0.0;
  double recall = 0.0;
  double d_corr = 0.0;
  std::size_t images = 0;         // images with labeled texts
  std::size_t d_corr_images = 0;  // images with >= 2 distinct levels
  std::map<int, double> per_level_recall;
};

// Traversal P/R, per-level recall and d_corr averaged over every image that
// has level-labeled captions. `levels[t] == 0` marks an unlabeled caption.
inline HierarchyReport evaluate_hierarchy(const EmbeddingMatrix& images, const EmbeddingMatrix& texts,
                                          const std::vector<std::size_t>& image_of_text,
                                          const std::vector<int>& levels,
                                          std::span<const double> root, std::size_t steps = 50) {
  std::vector<std::vector<LevelledText>> gt(images.rows());
  for (std::size_t t = 0; t < texts.rows(); ++t) {
    if (levels[t] != 0) gt[image_of_text[t]].push_back({t, levels[t]});
  }
  HierarchyReport rep;
  std::vector<std::set<std::size_t>> retrieved_sets;
  std::vector<std::vector<LevelledText>> gt_kept;
  double p_sum = 0.0, r_sum = 0.0, dc_sum = 0.0;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    if (gt[i].empty()) continue;
    auto path = hierarchical_traverse(images.row(i), texts, root, steps);
    std::set<std::size_t> got(path.begin(), path.end());
    std::set<std::size_t> truth;
    for (const auto& g : gt[i]) truth.insert(g.text);
    PrecisionRecall pr = set_precision_recall(got, truth);
    p_sum += pr.precision;
    r_sum += pr.recall;
    ++rep.images;

    std::set<int> distinct;
    for (const auto& g : gt[i]) distinct.insert(g.level);
    if (distinct.size() >= 2) {
      std::vector<std::size_t> rows;
      std::vector<int> lv;
      for (const auto& g : gt[i]) {
        rows.push_back(g.text);
        lv.push_back(g.level);
      }
      EmbeddingMatrix sub{texts.values.gather_rows(rows), true};
      dc_sum += d_corr(images.row(i), sub, lv);
      ++rep.d_corr_images;
    }
    retrieved_sets.push_back(std::move(got));
    gt_kept.push_back(gt[i]);
  }
  if (rep.images > 0) {
    rep.precision = p_sum / static_cast<double>(rep.images);
    rep.recall = r_sum / static_cast<double>(rep.images);
  }
  if (rep.d_corr_images > 0) rep.d_corr = dc_sum / static_cast<double>(rep.d_corr_images);
  rep.per_level_recall = per_level_recall(retrieved_sets, gt_kept);
  return rep;
}

}  // namespace ditm::eval
