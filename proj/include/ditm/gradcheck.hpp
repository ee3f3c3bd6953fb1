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
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ditm/geometry.hpp"
#include "ditm/losses.hpp"
#include "ditm/matrix.hpp"
#include "ditm/trainer.hpp"

// Central finite differences as an independent check of analytic gradients.
namespace ditm::gradcheck {

using LossFn = std::function<double(const losses::Batch&)>;

struct NumericGrads {
  Matrix images;
  Matrix texts;
};

// (f(x + h) - f(x - h)) / 2h for every embedding coordinate. Embeddings are
// perturbed in place and never re-normalized.
inline NumericGrads finite_diff_grad(const LossFn& loss_fn, const losses::Batch& batch, double h) {
  if (!(h > 0.0)) throw Error("finite_diff_grad: step must be > 0");
  losses::Batch work = batch;
  auto sweep = [&](Matrix& target) {
    Matrix g(target.rows(), target.cols());
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double orig = target.data()[i];
      target.data()[i] = orig + h;
      const double up = loss_fn(work);
      target.data()[i] = orig - h;
      const double down = loss_fn(work);
      target.data()[i] = orig;
      g.data()[i] = (up - down) / (2.0 * h);
    }
    return g;
  };
  NumericGrads out;
  out.images = sweep(work.images.values);
  out.texts = sweep(work.texts.values);
  return out;
}

// Central differences of a scalar function of a flat parameter vector.
inline std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                              std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct Comparison {
  double rel_error = 0.0;      // |a - n| / max(|a|, |n|), Euclidean norms
  double max_abs_error = 0.0;  // worst single coordinate
  std::size_t worst_index = 0;
};

inline Comparison compare(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw Error("gradcheck: gradient size mismatch");
  Comparison c;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff2 += d * d;
    a2 += analytic[i] * analytic[i];
    n2 += numeric[i] * numeric[i];
    if (std::abs(d) > c.max_abs_error) {
      c.max_abs_error = std::abs(d);
      c.worst_index = i;
    }
  }
  const double scale = std::sqrt(std::max(a2, n2));
  c.rel_error = scale < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / scale;
  return c;
}

inline std::vector<double> concat(const Matrix& a, const Matrix& b) {
  std::vector<double> v(a.data());
  v.insert(v.end(), b.data().begin(), b.data().end());
  return v;
}

inline Matrix random_unit_rows(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, dim);
  for (double& x : m.data()) x = n(rng);
  return geometry::l2_normalize(std::move(m)).values;
}

// `n_images` images owning between 1 and `max_texts_per_image` captions each,
// with random unit embeddings and descriptiveness in [0, 1].
inline losses::Batch random_batch(std::size_t n_images, std::size_t max_texts_per_image, std::size_t dim,
                                  std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> count(1, max_texts_per_image);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  losses::Batch b;
  for (std::size_t i = 0; i < n_images; ++i) {
    const std::size_t k = count(rng);
    for (std::size_t j = 0; j < k; ++j) {
      b.image_of_text.push_back(i);
      b.deltas.push_back(unit(rng));
    }
  }
  b.images = {random_unit_rows(n_images, dim, rng), true};
  b.texts = {random_unit_rows(b.image_of_text.size(), dim, rng), true};
  return b;
}

struct Trial {
  std::string loss;
  std::size_t trial = 0;
  double value = 0.0;
  Comparison cmp{};
  std::size_t kink_rejections = 0;
  bool passed = false;
};

struct SuiteReport {
  std::vector<Trial> trials;
  double tolerance = 1e-4;
  bool passed() const {
    return std::all_of(trials.begin(), trials.end(), [](const Trial& t) { return t.passed; });
  }
  const Trial* worst() const {
    const Trial* w = nullptr;
    for (const auto& t : trials)
      if (w == nullptr || t.cmp.rel_error > w->cmp.rel_error) w = &t;
    return w;
  }
};

struct SuiteOptions {
  std::size_t trials = 20;
  std::size_t batch_images = 8;
  std::size_t max_texts_per_image = 3;
  std::size_t dim = 16;
  double step = 1e-5;
  double tolerance = 1e-4;
};

// Compares every objective's analytic gradient with central differences on
// `trials` random batches each, then checks the features-to-loss gradient of
// the projection model. Batches within 10 steps of a hinge or mining kink are
// redrawn.
inline SuiteReport run_suite(std::uint64_t seed, const SuiteOptions& opt = {}) {
  if (opt.trials == 0) throw Error("gradcheck: trials must be >= 1");
  std::mt19937_64 rng(seed);
  SuiteReport report;
  report.tolerance = opt.tolerance;
  losses::LossConfig cfg;

  struct Named {
    const char* name;
    std::function<losses::LossOutput(const losses::Batch&, const losses::LossConfig&)> fn;
    int ranking;  // 0: none, 1: fixed margin, 2: adaptive
  };
  const std::vector<Named> objectives = {
      {"triplet", losses::triplet_loss, 1},
      {"adaptive_triplet", losses::adaptive_triplet_loss, 2},
      {"ordering", losses::ordering_loss, 0},
      {"overall", losses::overall_loss, 2},
  };
  const double kink_guard = 10.0 * opt.step;
  constexpr std::size_t kMaxRedraws = 1000;

  for (const auto& obj : objectives) {
    for (std::size_t t = 0; t < opt.trials; ++t) {
      Trial trial{obj.name, t};
      losses::Batch batch;
      for (;;) {
        batch = random_batch(opt.batch_images, opt.max_texts_per_image, opt.dim, rng);
        if (obj.ranking == 0 ||
            losses::ranking_kink_distance(batch, cfg, obj.ranking == 2) > kink_guard) {
          break;
        }
        if (++trial.kink_rejections > kMaxRedraws) throw Error("gradcheck: could not avoid kinks");
      }
      const losses::LossOutput out = obj.fn(batch, cfg);
      const NumericGrads num = finite_diff_grad(
          [&](const losses::Batch& b) { return obj.fn(b, cfg).value; }, batch, opt.step);
      trial.value = out.value;
      trial.cmp = compare(concat(out.grad_images, out.grad_texts), concat(num.images, num.texts));
      trial.passed = trial.cmp.rel_error < opt.tolerance;
      report.trials.push_back(trial);
    }
  }

  // Features -> projection -> overall loss, differentiated in the weights.
  for (std::size_t t = 0; t < opt.trials; ++t) {
    Trial trial{"end_to_end", t};
    const std::size_t n_img = 4, in_img = 12, in_txt = 10, embed = 8;
    trainer::ProjectionModel model;
    losses::Batch shape;
    Matrix img_feats, txt_feats;
    trainer::Rng local(rng());
    for (;;) {
      model = trainer::init_model(in_img, in_txt, embed, local);
      shape = random_batch(n_img, opt.max_texts_per_image, embed, local);
      img_feats = random_unit_rows(n_img, in_img, local);
      txt_feats = random_unit_rows(shape.num_texts(), in_txt, local);
      auto fwd = trainer::forward(model, img_feats, txt_feats);
      losses::Batch b{fwd.image.embeddings, fwd.text.embeddings, shape.image_of_text, shape.deltas};
      if (losses::ranking_kink_distance(b, cfg, true) > 1e-3) break;
      if (++trial.kink_rejections > kMaxRedraws) throw Error("gradcheck: could not avoid kinks");
    }

    auto loss_of = [&](const trainer::ProjectionModel& m) {
      auto fwd = trainer::forward(m, img_feats, txt_feats);
      losses::Batch b{fwd.image.embeddings, fwd.text.embeddings, shape.image_of_text, shape.deltas};
      return losses::overall_loss(b, cfg);
    };
    auto fwd = trainer::forward(model, img_feats, txt_feats);
    const losses::LossOutput out = loss_of(model);
    const trainer::ModelGrads g =
        trainer::backward(model, img_feats, txt_feats, fwd, out.grad_images, out.grad_texts);

    std::vector<double> analytic;
    for (auto blk : trainer::gradient_blocks(g)) analytic.insert(analytic.end(), blk.begin(), blk.end());
    std::vector<double> flat;
    {
      auto copy = model;
      for (auto blk : trainer::parameter_blocks(copy)) flat.insert(flat.end(), blk.begin(), blk.end());
    }
    auto f = [&](std::span<const double> x) {
      auto m = model;
      std::size_t pos = 0;
      for (auto blk : trainer::parameter_blocks(m)) {
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(pos),
                  x.begin() + static_cast<std::ptrdiff_t>(pos + blk.size()), blk.begin());
        pos += blk.size();
      }
      return loss_of(m).value;
    };
    const auto numeric = central_difference(f, flat, opt.step);
    trial.value = out.value;
    trial.cmp = compare(analytic, numeric);
    trial.passed = trial.cmp.rel_error < opt.tolerance;
    report.trials.push_back(trial);
  }
  return report;
}

}  // namespace ditm::gradcheck
