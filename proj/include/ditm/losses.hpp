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
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ditm/error.hpp"
#include "ditm/geometry.hpp"
#include "ditm/matrix.hpp"

// Matching objectives over a batch of image and text embeddings.
//
// Every text in a batch forms one positive pair with the image that owns it;
// an image may own several texts. Descriptiveness values are constants: no
// gradient flows into them.
namespace ditm::losses {

struct Batch {
  EmbeddingMatrix images;
  EmbeddingMatrix texts;
  std::vector<std::size_t> image_of_text;
  std::vector<double> deltas;

  std::size_t num_images() const { return images.rows(); }
  std::size_t num_texts() const { return texts.rows(); }

  void validate() const {
    if (images.dim() != texts.dim()) throw Error("batch: embedding dimension mismatch");
    if (image_of_text.size() != num_texts() || deltas.size() != num_texts()) {
      throw Error("batch: per-text arrays do not match the number of texts");
    }
    for (std::size_t t = 0; t < num_texts(); ++t) {
      if (image_of_text[t] >= num_images()) {
        throw Error("batch: text " + std::to_string(t) + " points at a missing image");
      }
      if (!(deltas[t] >= 0.0 && deltas[t] <= 1.0)) {
        throw Error("batch: descriptiveness of text " + std::to_string(t) + " outside [0, 1]");
      }
    }
  }
};

struct LossConfig {
  double alpha = 0.2;
  double tau = 6.0;
  double lambda = 0.07;
  double eps_delta = 1e-4;
  double eps_dist = 1e-4;
  bool use_hardest_mining = true;

  void validate() const {
    if (!(tau > 0.0)) throw Error("loss config: tau must be > 0");
    if (!(lambda >= 0.0)) throw Error("loss config: lambda must be >= 0");
    if (!(eps_delta > 0.0) || !(eps_dist > 0.0)) {
      throw Error("loss config: eps_delta and eps_dist must be > 0");
    }
  }
};

struct Diagnostics {
  double triplet = 0.0;
  double ordering = 0.0;
  std::size_t active_hinges = 0;
  std::size_t ordering_pairs = 0;
  bool hardest_mining_used = false;
};

struct LossOutput {
  double value = 0.0;
  Matrix grad_images;
  Matrix grad_texts;
  Diagnostics diagnostics;
};

// Hardest negatives per positive pair, indexed by text.
struct MinedNegatives {
  std::vector<std::size_t> text_negative;
  std::vector<std::size_t> image_negative;
};

// For the pair (v, t): the highest-similarity text not owned by v, and the
// highest-similarity image other than v. Ties go to the lowest index.
inline MinedNegatives hardest_negatives(const Matrix& sims,
                                        const std::vector<std::size_t>& image_of_text) {
  const std::size_t n_img = sims.rows();
  const std::size_t n_txt = sims.cols();
  if (image_of_text.size() != n_txt) throw Error("hardest_negatives: shape mismatch");
  if (n_img < 2) throw Error("hardest_negatives: batch needs at least two images");

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  MinedNegatives out;
  out.text_negative.resize(n_txt);
  out.image_negative.resize(n_txt);
  for (std::size_t t = 0; t < n_txt; ++t) {
    const std::size_t v = image_of_text[t];

    std::size_t best_t = kNone;
    for (std::size_t j = 0; j < n_txt; ++j) {
      if (image_of_text[j] == v) continue;
      if (best_t == kNone || sims(v, j) > sims(v, best_t)) best_t = j;
    }
    if (best_t == kNone) {
      throw Error("hardest_negatives: image " + std::to_string(v) + " has no negative text");
    }

    std::size_t best_v = kNone;
    for (std::size_t i = 0; i < n_img; ++i) {
      if (i == v) continue;
      if (best_v == kNone || sims(i, t) > sims(best_v, t)) best_v = i;
    }
    out.text_negative[t] = best_t;
    out.image_negative[t] = best_v;
  }
  return out;
}

struct AdaptiveMargins {
  double image_to_text;
  double image_to_image;
};

// (delta(t) + delta(t-)) / tau and (delta(t) + delta(t)) / tau.
inline AdaptiveMargins adaptive_margins(double delta_t, double delta_tneg, double tau) {
  if (!(tau > 0.0)) throw Error("adaptive_margins: tau must be > 0");
  return {(delta_t + delta_tneg) / tau, (delta_t + delta_t) / tau};
}

namespace detail {

inline void add_grad_from_sims(const Batch& batch, const Matrix& dsims, LossOutput& out) {
  const std::size_t dim = batch.images.dim();
  for (std::size_t i = 0; i < batch.num_images(); ++i) {
    for (std::size_t j = 0; j < batch.num_texts(); ++j) {
      const double g = dsims(i, j);
      if (g == 0.0) continue;
      auto img = batch.images.row(i);
      auto txt = batch.texts.row(j);
      auto gi = out.grad_images.row(i);
      auto gt = out.grad_texts.row(j);
      for (std::size_t k = 0; k < dim; ++k) {
        gi[k] += g * txt[k];
        gt[k] += g * img[k];
      }
    }
  }
}

inline LossOutput empty_output(const Batch& batch) {
  LossOutput out;
  out.grad_images = Matrix(batch.num_images(), batch.images.dim());
  out.grad_texts = Matrix(batch.num_texts(), batch.texts.dim());
  return out;
}

// Shared body of the fixed-margin and adaptive-margin triplet losses.
inline LossOutput ranking_loss(const Batch& batch, const LossConfig& config, bool adaptive) {
  batch.validate();
  config.validate();
  const std::size_t n_img = batch.num_images();
  const std::size_t n_txt = batch.num_texts();
  const Matrix sims = geometry::sim_matrix(batch.images, batch.texts);
  Matrix dsims(n_img, n_txt);
  LossOutput out = empty_output(batch);

  auto margin_i2t = [&](std::size_t t, std::size_t tneg) {
    return adaptive ? adaptive_margins(batch.deltas[t], batch.deltas[tneg], config.tau).image_to_text
                    : config.alpha;
  };
  auto margin_i2i = [&](std::size_t t) {
    return adaptive ? adaptive_margins(batch.deltas[t], batch.deltas[t], config.tau).image_to_image
                    : config.alpha;
  };

  double total = 0.0;
  if (config.use_hardest_mining) {
    const MinedNegatives mined = hardest_negatives(sims, batch.image_of_text);
    out.diagnostics.hardest_mining_used = true;
    for (std::size_t t = 0; t < n_txt; ++t) {
      const std::size_t v = batch.image_of_text[t];
      const std::size_t tneg = mined.text_negative[t];
      const std::size_t vneg = mined.image_negative[t];
      const double pos = sims(v, t);

      const double a1 = margin_i2t(t, tneg) - pos + sims(v, tneg);
      if (a1 > 0.0) {
        total += a1;
        dsims(v, t) -= 1.0;
        dsims(v, tneg) += 1.0;
        ++out.diagnostics.active_hinges;
      }
      const double a2 = margin_i2i(t) - pos + sims(vneg, t);
      if (a2 > 0.0) {
        total += a2;
        dsims(v, t) -= 1.0;
        dsims(vneg, t) += 1.0;
        ++out.diagnostics.active_hinges;
      }
    }
  } else {
    if (n_img < 2) throw Error("triplet loss: batch needs at least two images");
    for (std::size_t t = 0; t < n_txt; ++t) {
      const std::size_t v = batch.image_of_text[t];
      const double pos = sims(v, t);

      std::size_t n_neg = 0;
      for (std::size_t j = 0; j < n_txt; ++j) n_neg += batch.image_of_text[j] != v;
      if (n_neg == 0) {
        throw Error("triplet loss: image " + std::to_string(v) + " has no negative text");
      }
      const double w_txt = 1.0 / static_cast<double>(n_neg);
      for (std::size_t j = 0; j < n_txt; ++j) {
        if (batch.image_of_text[j] == v) continue;
        const double a = margin_i2t(t, j) - pos + sims(v, j);
        if (a > 0.0) {
          total += w_txt * a;
          dsims(v, t) -= w_txt;
          dsims(v, j) += w_txt;
          ++out.diagnostics.active_hinges;
        }
      }

      const double w_img = 1.0 / static_cast<double>(n_img - 1);
      for (std::size_t i = 0; i < n_img; ++i) {
        if (i == v) continue;
        const double a = margin_i2i(t) - pos + sims(i, t);
        if (a > 0.0) {
          total += w_img * a;
          dsims(v, t) -= w_img;
          dsims(i, t) += w_img;
          ++out.diagnostics.active_hinges;
        }
      }
    }
  }

  add_grad_from_sims(batch, dsims, out);
  out.value = total;
  out.diagnostics.triplet = total;
  return out;
}

}  // namespace detail

// Hinge triplet ranking loss with a fixed margin. Without hardest mining each
// hinge is averaged over all admissible negatives instead.
inline LossOutput triplet_loss(const Batch& batch, const LossConfig& config) {
  return detail::ranking_loss(batch, config, false);
}

// Triplet loss whose margins come from the descriptiveness of the positive
// text and of the mined negative text.
inline LossOutput adaptive_triplet_loss(const Batch& batch, const LossConfig& config) {
  return detail::ranking_loss(batch, config, true);
}

// Squared log-ratio penalty between the distance ratio of two captions of the
// same image and the inverse ratio of their descriptiveness, summed over every
// unordered pair of same-image texts in the batch.
inline LossOutput ordering_loss(const Batch& batch, const LossConfig& config) {
  batch.validate();
  config.validate();
  LossOutput out = detail::empty_output(batch);
  const std::size_t dim = batch.images.dim();

  std::vector<std::vector<std::size_t>> texts_of(batch.num_images());
  for (std::size_t t = 0; t < batch.num_texts(); ++t) texts_of[batch.image_of_text[t]].push_back(t);

  // d(log d(v, t)) / d(embeddings), scaled by `coef`
  auto push_log_dist_grad = [&](std::size_t v, std::size_t t, double dist, double coef) {
    if (dist <= config.eps_dist) return;
    auto img = batch.images.row(v);
    auto txt = batch.texts.row(t);
    auto gi = out.grad_images.row(v);
    auto gt = out.grad_texts.row(t);
    const double s = coef / (dist * dist);
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = img[k] - txt[k];
      gi[k] += s * diff;
      gt[k] -= s * diff;
    }
  };

  double total = 0.0;
  for (std::size_t v = 0; v < batch.num_images(); ++v) {
    const auto& owned = texts_of[v];
    std::vector<double> dist(owned.size());
    for (std::size_t a = 0; a < owned.size(); ++a) {
      dist[a] = geometry::euclid_dist(batch.images.row(v), batch.texts.row(owned[a]));
    }
    for (std::size_t a = 0; a < owned.size(); ++a) {
      for (std::size_t b = a + 1; b < owned.size(); ++b) {
        const double d_t = std::max(dist[a], config.eps_dist);
        const double d_p = std::max(dist[b], config.eps_dist);
        const double delta_t = std::max(batch.deltas[owned[a]], config.eps_delta);
        const double delta_p = std::max(batch.deltas[owned[b]], config.eps_delta);
        const double r = std::log(d_t / d_p) - std::log(delta_p / delta_t);
        total += r * r;
        ++out.diagnostics.ordering_pairs;
        push_log_dist_grad(v, owned[a], dist[a], 2.0 * r);
        push_log_dist_grad(v, owned[b], dist[b], -2.0 * r);
      }
    }
  }
  out.value = total;
  out.diagnostics.ordering = total;
  return out;
}

// Adaptive triplet loss plus lambda times the ordering loss.
inline LossOutput overall_loss(const Batch& batch, const LossConfig& config) {
  LossOutput out = adaptive_triplet_loss(batch, config);
  if (config.lambda == 0.0) return out;
  LossOutput order = ordering_loss(batch, config);
  out.value += config.lambda * order.value;
  out.grad_images.axpy(config.lambda, order.grad_images);
  out.grad_texts.axpy(config.lambda, order.grad_texts);
  out.diagnostics.ordering = order.value;
  out.diagnostics.ordering_pairs = order.diagnostics.ordering_pairs;
  return out;
}

// Smallest distance from any non-differentiable point of the ranking loss:
// hinge arguments near zero, or two mined candidates within a hair of each
// other. Finite-difference checks skip batches where this is small.
inline double ranking_kink_distance(const Batch& batch, const LossConfig& config, bool adaptive) {
  const Matrix sims = geometry::sim_matrix(batch.images, batch.texts);
  const std::size_t n_img = batch.num_images();
  const std::size_t n_txt = batch.num_texts();
  double closest = std::numeric_limits<double>::infinity();
  auto m_i2t = [&](std::size_t t, std::size_t j) {
    return adaptive ? (batch.deltas[t] + batch.deltas[j]) / config.tau : config.alpha;
  };
  auto m_i2i = [&](std::size_t t) {
    return adaptive ? (batch.deltas[t] + batch.deltas[t]) / config.tau : config.alpha;
  };
  auto gap_to_runner_up = [](std::vector<double> vals) {
    if (vals.size() < 2) return std::numeric_limits<double>::infinity();
    std::sort(vals.begin(), vals.end(), std::greater<>());
    return vals[0] - vals[1];
  };

  const MinedNegatives mined = hardest_negatives(sims, batch.image_of_text);
  for (std::size_t t = 0; t < n_txt; ++t) {
    const std::size_t v = batch.image_of_text[t];
    const double pos = sims(v, t);
    std::vector<double> neg_txt, neg_img;
    for (std::size_t j = 0; j < n_txt; ++j) {
      if (batch.image_of_text[j] == v) continue;
      neg_txt.push_back(sims(v, j));
      if (!config.use_hardest_mining) {
        closest = std::min(closest, std::abs(m_i2t(t, j) - pos + sims(v, j)));
      }
    }
    for (std::size_t i = 0; i < n_img; ++i) {
      if (i == v) continue;
      neg_img.push_back(sims(i, t));
      if (!config.use_hardest_mining) {
        closest = std::min(closest, std::abs(m_i2i(t) - pos + sims(i, t)));
      }
    }
    if (config.use_hardest_mining) {
      const std::size_t tneg = mined.text_negative[t];
      const std::size_t vneg = mined.image_negative[t];
      closest = std::min(closest, std::abs(m_i2t(t, tneg) - pos + sims(v, tneg)));
      closest = std::min(closest, std::abs(m_i2i(t) - pos + sims(vneg, t)));
      closest = std::min(closest, gap_to_runner_up(neg_txt));
      closest = std::min(closest, gap_to_runner_up(neg_img));
    }
  }
  return closest;
}

}  // namespace ditm::losses
