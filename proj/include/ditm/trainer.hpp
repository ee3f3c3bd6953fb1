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
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ditm/error.hpp"
#include "ditm/eval.hpp"
#include "ditm/geometry.hpp"
#include "ditm/losses.hpp"
#include "ditm/matrix.hpp"

namespace ditm::trainer {

using Rng = std::mt19937_64;

// Affine projection of each modality into the shared space, followed by
// row-wise L2 normalization.
struct ProjectionModel {
  Matrix w_img;  // embed_dim x image_input_dim
  std::vector<double> b_img;
  Matrix w_txt;  // embed_dim x text_input_dim
  std::vector<double> b_txt;

  std::size_t embed_dim() const { return w_img.rows(); }
  std::size_t image_input_dim() const { return w_img.cols(); }
  std::size_t text_input_dim() const { return w_txt.cols(); }

  friend bool operator==(const ProjectionModel&, const ProjectionModel&) = default;
};

// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline ProjectionModel init_model(std::size_t image_dim, std::size_t text_dim,
                                  std::size_t embed_dim, Rng& rng) {
  if (image_dim == 0 || text_dim == 0 || embed_dim == 0) {
    throw Error("init_model: dimensions must be >= 1");
  }
  auto uniform_fill = [&](std::vector<double>& v, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : v) x = dist(rng);
  };
  ProjectionModel m;
  m.w_img = Matrix(embed_dim, image_dim);
  m.b_img.assign(embed_dim, 0.0);
  m.w_txt = Matrix(embed_dim, text_dim);
  m.b_txt.assign(embed_dim, 0.0);
  uniform_fill(m.w_img.data(), image_dim);
  uniform_fill(m.b_img, image_dim);
  uniform_fill(m.w_txt.data(), text_dim);
  uniform_fill(m.b_txt, text_dim);
  return m;
}

// Forward result of one branch; `norms` holds the pre-normalization row norms.
struct BranchOutput {
  EmbeddingMatrix embeddings;
  std::vector<double> norms;
};

struct BranchGrads {
  Matrix w;
  std::vector<double> b;
};

inline BranchOutput project(const Matrix& w, const std::vector<double>& b, const Matrix& feats) {
  if (feats.cols() != w.cols()) {
    throw Error("forward: feature dimension " + std::to_string(feats.cols()) +
                " does not match model input dimension " + std::to_string(w.cols()));
  }
  const std::size_t out_dim = w.rows();
  Matrix pre(feats.rows(), out_dim);
  for (std::size_t r = 0; r < feats.rows(); ++r) {
    auto x = feats.row(r);
    for (std::size_t o = 0; o < out_dim; ++o) pre(r, o) = b[o] + geometry::dot(w.row(o), x);
  }
  BranchOutput out;
  out.norms.resize(feats.rows());
  for (std::size_t r = 0; r < feats.rows(); ++r) out.norms[r] = geometry::norm(pre.row(r));
  out.embeddings = geometry::l2_normalize(std::move(pre));
  return out;
}

// Chain rule through e = x / |x| and x = W f + b:
// dL/dx = (I - e e^T) dL/de / |x|.
inline BranchGrads project_backward(const Matrix& w, const Matrix& feats, const BranchOutput& fwd,
                                    const Matrix& grad_emb) {
  const std::size_t out_dim = w.rows();
  BranchGrads g{Matrix(out_dim, w.cols()), std::vector<double>(out_dim, 0.0)};
  std::vector<double> gx(out_dim);
  for (std::size_t r = 0; r < feats.rows(); ++r) {
    auto e = fwd.embeddings.row(r);
    auto ge = grad_emb.row(r);
    const double radial = geometry::dot(e, ge);
    for (std::size_t o = 0; o < out_dim; ++o) gx[o] = (ge[o] - e[o] * radial) / fwd.norms[r];
    auto f = feats.row(r);
    for (std::size_t o = 0; o < out_dim; ++o) {
      if (gx[o] == 0.0) continue;
      g.b[o] += gx[o];
      auto gw = g.w.row(o);
      for (std::size_t k = 0; k < f.size(); ++k) gw[k] += gx[o] * f[k];
    }
  }
  return g;
}

struct ModelGrads {
  BranchGrads image;
  BranchGrads text;
};

struct ForwardPass {
  BranchOutput image;
  BranchOutput text;
};

inline ForwardPass forward(const ProjectionModel& model, const Matrix& image_feats,
                           const Matrix& text_feats) {
  return {project(model.w_img, model.b_img, image_feats),
          project(model.w_txt, model.b_txt, text_feats)};
}

inline ModelGrads backward(const ProjectionModel& model, const Matrix& image_feats,
                           const Matrix& text_feats, const ForwardPass& fwd,
                           const Matrix& grad_images, const Matrix& grad_texts) {
  return {project_backward(model.w_img, image_feats, fwd.image, grad_images),
          project_backward(model.w_txt, text_feats, fwd.text, grad_texts)};
}

// Parameter blocks in a fixed order: w_img, b_img, w_txt, b_txt.
inline std::array<std::span<double>, 4> parameter_blocks(ProjectionModel& m) {
  return {m.w_img.data(), m.b_img, m.w_txt.data(), m.b_txt};
}
inline std::array<std::span<const double>, 4> gradient_blocks(const ModelGrads& g) {
  return {g.image.w.data(), g.image.b, g.text.w.data(), g.text.b};
}
// Weight decay applies to the weight matrices only, never to biases.
inline constexpr std::array<bool, 4> kDecayBlock = {true, false, true, false};

// Adam with decoupled weight decay.
struct AdamState {
  std::uint64_t step = 0;
  std::array<std::vector<double>, 4> m;
  std::array<std::vector<double>, 4> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState init_adam(ProjectionModel& model) {
  AdamState s;
  auto blocks = parameter_blocks(model);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    s.m[i].assign(blocks[i].size(), 0.0);
    s.v[i].assign(blocks[i].size(), 0.0);
  }
  return s;
}

inline void adam_step(ProjectionModel& model, AdamState& state, const ModelGrads& grads, double lr,
                      double weight_decay, const AdamConfig& cfg = {}) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  auto params = parameter_blocks(model);
  auto gs = gradient_blocks(grads);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    auto g = gs[b];
    auto& m = state.m[b];
    auto& v = state.v[b];
    if (g.size() != p.size() || m.size() != p.size()) throw Error("adam_step: shape mismatch");
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (kDecayBlock[b]) p[k] *= 1.0 - lr * weight_decay;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

// Which objective the trainer minimizes.
enum class Objective { kTriplet, kAdaptiveTriplet, kOverall };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kTriplet: return "triplet";
    case Objective::kAdaptiveTriplet: return "adaptive";
    case Objective::kOverall: return "overall";
  }
  return "overall";
}

inline Objective parse_objective(const std::string& s) {
  if (s == "triplet") return Objective::kTriplet;
  if (s == "adaptive") return Objective::kAdaptiveTriplet;
  if (s == "overall") return Objective::kOverall;
  throw Error("unknown objective '" + s + "' (expected triplet, adaptive or overall)");
}

inline losses::LossOutput evaluate_objective(Objective objective, const losses::Batch& batch,
                                             const losses::LossConfig& cfg) {
  switch (objective) {
    case Objective::kTriplet: return losses::triplet_loss(batch, cfg);
    case Objective::kAdaptiveTriplet: return losses::adaptive_triplet_loss(batch, cfg);
    case Objective::kOverall: return losses::overall_loss(batch, cfg);
  }
  throw Error("unknown objective");
}

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 25;
  double lr = 5e-4;
  double lr_decay_factor = 0.1;
  std::size_t lr_decay_epoch = 15;
  double weight_decay = 1e-4;
  std::size_t warmup_epochs = 2;
  std::size_t embed_dim = 32;
  std::uint64_t seed = 0;
  Objective objective = Objective::kOverall;
  losses::LossConfig loss;

  void validate() const {
    if (batch_size < 2) throw Error("train config: batch_size must be >= 2");
    if (epochs == 0) throw Error("train config: epochs must be >= 1");
    if (warmup_epochs >= epochs) throw Error("train config: warmup_epochs must be < epochs");
    if (!(lr > 0.0)) throw Error("train config: lr must be > 0");
    if (!(weight_decay >= 0.0)) throw Error("train config: weight_decay must be >= 0");
    if (embed_dim == 0) throw Error("train config: embed_dim must be >= 1");
    loss.validate();
  }

  double lr_at(std::size_t epoch) const {
    return epoch >= lr_decay_epoch ? lr * lr_decay_factor : lr;
  }
  bool mining_at(std::size_t epoch) const {
    return loss.use_hardest_mining && epoch >= warmup_epochs;
  }
};

// Features and caption bookkeeping for one split.
struct Dataset {
  Matrix image_feats;
  Matrix text_feats;
  std::vector<std::size_t> image_of_text;
  std::vector<double> deltas;
  std::vector<int> levels;  // 0 when unlabeled
  std::vector<std::string> image_ids;
  std::vector<std::string> text_ids;

  std::size_t num_images() const { return image_feats.rows(); }
  std::size_t num_texts() const { return text_feats.rows(); }

  std::vector<std::vector<std::size_t>> texts_by_image() const {
    std::vector<std::vector<std::size_t>> out(num_images());
    for (std::size_t t = 0; t < num_texts(); ++t) out[image_of_text[t]].push_back(t);
    return out;
  }

  void validate() const {
    if (image_of_text.size() != num_texts() || deltas.size() != num_texts()) {
      throw Error("dataset: per-text arrays do not match the text features");
    }
    for (std::size_t img : image_of_text) {
      if (img >= num_images()) throw Error("dataset: text refers to a missing image");
    }
  }
};

// Dataset rows making up one batch.
struct BatchIndices {
  std::vector<std::size_t> images;
  std::vector<std::size_t> texts;
  std::vector<std::size_t> image_of_text;  // local image index per text
};

// Shuffles the images and packs them, with all of their captions, into
// batches of at most `batch_size` texts. A trailing single-image batch is
// merged into the previous one so every batch has a negative image.
inline std::vector<std::vector<std::size_t>> plan_epoch(const Dataset& data, std::size_t batch_size,
                                                        Rng& rng) {
  if (data.num_images() == 0) throw Error("plan_epoch: dataset has no images");
  std::vector<std::size_t> order(data.num_images());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  const auto groups = data.texts_by_image();
  std::vector<std::vector<std::size_t>> plan;
  std::vector<std::size_t> current;
  std::size_t current_texts = 0;
  for (std::size_t img : order) {
    const std::size_t n = std::min(groups[img].size(), batch_size);
    if (!current.empty() && current_texts + n > batch_size) {
      plan.push_back(std::move(current));
      current.clear();
      current_texts = 0;
    }
    current.push_back(img);
    current_texts += n;
  }
  if (current.size() == 1 && !plan.empty()) {
    plan.back().push_back(current.front());
  } else {
    plan.push_back(std::move(current));
  }
  return plan;
}

// Gathers the captions of the given images, truncating at `batch_size` texts
// per image.
inline BatchIndices make_batch(const Dataset& data, const std::vector<std::size_t>& images,
                               std::size_t batch_size) {
  const auto groups = data.texts_by_image();
  BatchIndices b;
  b.images = images;
  for (std::size_t local = 0; local < images.size(); ++local) {
    const auto& owned = groups[images[local]];
    const std::size_t n = std::min(owned.size(), batch_size);
    for (std::size_t k = 0; k < n; ++k) {
      b.texts.push_back(owned[k]);
      b.image_of_text.push_back(local);
    }
  }
  return b;
}

// One sampled batch for a fresh rng; mainly useful for tests and tools.
inline BatchIndices sample_batch(const Dataset& data, std::size_t batch_size, Rng& rng) {
  auto plan = plan_epoch(data, batch_size, rng);
  return make_batch(data, plan.front(), batch_size);
}

inline losses::Batch embed_batch(const Dataset& data, const BatchIndices& idx,
                                 const ForwardPass& fwd) {
  losses::Batch batch;
  batch.images = fwd.image.embeddings;
  batch.texts = fwd.text.embeddings;
  batch.image_of_text = idx.image_of_text;
  batch.deltas.reserve(idx.texts.size());
  for (std::size_t t : idx.texts) batch.deltas.push_back(data.deltas[t]);
  return batch;
}

struct StepResult {
  losses::LossOutput loss;
  ModelGrads grads;
};

// Loss and weight gradients of one batch.
inline StepResult compute_step(const ProjectionModel& model, const Dataset& data,
                               const BatchIndices& idx, Objective objective,
                               const losses::LossConfig& cfg) {
  const Matrix img = data.image_feats.gather_rows(idx.images);
  const Matrix txt = data.text_feats.gather_rows(idx.texts);
  ForwardPass fwd = forward(model, img, txt);
  losses::Batch batch = embed_batch(data, idx, fwd);
  StepResult r;
  r.loss = evaluate_objective(objective, batch, cfg);
  r.grads = backward(model, img, txt, fwd, r.loss.grad_images, r.loss.grad_texts);
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double triplet = 0.0;
  double ordering = 0.0;
  std::optional<double> val_rsum;
  std::size_t batches = 0;
  std::size_t mining_calls = 0;
  double lr = 0.0;
};

struct TrainState {
  ProjectionModel model;
  AdamState adam;
  std::size_t epoch = 0;  // next epoch to run
  Rng rng;
};

inline TrainState init_state(const Dataset& data, const TrainConfig& cfg) {
  TrainState s;
  s.rng.seed(cfg.seed);
  s.model = init_model(data.image_feats.cols(), data.text_feats.cols(), cfg.embed_dim, s.rng);
  s.adam = init_adam(s.model);
  return s;
}

// Embeds every image and text of a dataset.
inline ForwardPass embed_dataset(const ProjectionModel& model, const Dataset& data) {
  return forward(model, data.image_feats, data.text_feats);
}

inline double validation_rsum(const ProjectionModel& model, const Dataset& data) {
  ForwardPass fwd = embed_dataset(model, data);
  return eval::bidirectional_recalls(geometry::sim_matrix(fwd.image.embeddings, fwd.text.embeddings),
                                     data.image_of_text)
      .rsum();
}

// Summed loss over the whole dataset, batched by image like training.
inline double dataset_loss(const ProjectionModel& model, const Dataset& data,
                           const TrainConfig& cfg, bool hardest_mining) {
  std::vector<std::size_t> all(data.num_images());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  losses::LossConfig lc = cfg.loss;
  lc.use_hardest_mining = hardest_mining;
  BatchIndices idx = make_batch(data, all, data.num_texts());
  const Matrix img = data.image_feats.gather_rows(idx.images);
  const Matrix txt = data.text_feats.gather_rows(idx.texts);
  ForwardPass fwd = forward(model, img, txt);
  return evaluate_objective(cfg.objective, embed_batch(data, idx, fwd), lc).value;
}

using EpochCallback = std::function<void(const TrainState&, const EpochRecord&)>;

// Runs epochs state.epoch .. cfg.epochs-1. Hardest mining is off during the
// first warmup_epochs epochs; the learning rate drops by lr_decay_factor from
// lr_decay_epoch on.
inline std::vector<EpochRecord> train(const Dataset& data, const Dataset* validation,
                                      const TrainConfig& cfg, TrainState& state,
                                      const EpochCallback& on_epoch = {}) {
  cfg.validate();
  data.validate();
  if (data.num_images() < 2) throw Error("train: dataset needs at least two images");
  std::vector<EpochRecord> log;
  for (; state.epoch < cfg.epochs;) {
    const std::size_t epoch = state.epoch;
    losses::LossConfig lc = cfg.loss;
    lc.use_hardest_mining = cfg.mining_at(epoch);
    const double lr = cfg.lr_at(epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const auto plan = plan_epoch(data, cfg.batch_size, state.rng);
    for (std::size_t b = 0; b < plan.size(); ++b) {
      BatchIndices idx = make_batch(data, plan[b], cfg.batch_size);
      StepResult step = compute_step(state.model, data, idx, cfg.objective, lc);
      if (!std::isfinite(step.loss.value)) {
        throw NumericalError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(b));
      }
      adam_step(state.model, state.adam, step.grads, lr, cfg.weight_decay);
      rec.loss += step.loss.value;
      rec.triplet += step.loss.diagnostics.triplet;
      rec.ordering += step.loss.diagnostics.ordering;
      rec.mining_calls += step.loss.diagnostics.hardest_mining_used ? 1 : 0;
      ++rec.batches;
    }
    const double n = static_cast<double>(rec.batches);
    rec.loss /= n;
    rec.triplet /= n;
    rec.ordering /= n;
    if (validation != nullptr && validation->num_images() > 0) {
      rec.val_rsum = validation_rsum(state.model, *validation);
    }
    ++state.epoch;
    log.push_back(rec);
    if (on_epoch) on_epoch(state, rec);
  }
  return log;
}

}  // namespace ditm::trainer
