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

#include "ditm/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ditm/app.hpp"
#include "ditm/datagen.hpp"
#include "ditm/gradcheck.hpp"

namespace ditm::trainer {
namespace {

Dataset SynthDataset(std::size_t n_images, std::uint64_t seed, bool with_table = true) {
  datagen::SynthSpec spec;
  spec.n_images = n_images;
  spec.feature_dim = 16;
  spec.seed = seed;
  const auto sentences = datagen::gen_corpus(spec);
  const auto feats = datagen::gen_features(sentences, spec);
  if (!with_table) return app::assemble_dataset(feats.images, feats.texts, sentences, nullptr, "train");
  const auto table = corpus::score_corpus(sentences).second;
  return app::assemble_dataset(feats.images, feats.texts, sentences, &table, "train");
}

TrainConfig SmallConfig() {
  TrainConfig c;
  c.batch_size = 32;
  c.epochs = 4;
  c.lr = 1e-2;
  c.lr_decay_epoch = 3;
  c.warmup_epochs = 1;
  c.embed_dim = 8;
  c.seed = 3;
  return c;
}

TEST(Forward, IdentityModelNormalizesFeatures) {
  ProjectionModel m;
  m.w_img = Matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
  m.b_img = {0.0, 0.0};
  m.w_txt = m.w_img;
  m.b_txt = m.b_img;
  auto fwd = forward(m, Matrix(1, 2, {3.0, 4.0}), Matrix(1, 2, {0.0, 2.0}));
  EXPECT_DOUBLE_EQ(fwd.image.embeddings.values(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(fwd.image.embeddings.values(0, 1), 0.8);
  EXPECT_DOUBLE_EQ(fwd.image.norms[0], 5.0);
  EXPECT_DOUBLE_EQ(fwd.text.embeddings.values(0, 1), 1.0);
}

TEST(Forward, OutputsAreUnitRows) {
  Dataset d = SynthDataset(10, 1);
  Rng rng(4);
  ProjectionModel m = init_model(16, 16, 8, rng);
  auto fwd = embed_dataset(m, d);
  EXPECT_EQ(fwd.image.embeddings.dim(), 8u);
  for (std::size_t r = 0; r < fwd.text.embeddings.rows(); ++r) {
    EXPECT_NEAR(geometry::norm(fwd.text.embeddings.row(r)), 1.0, 1e-12);
  }
  EXPECT_EQ(embed_dataset(m, d).text.embeddings.values, fwd.text.embeddings.values);
}

TEST(Forward, DimensionMismatchIsAnError) {
  Rng rng(5);
  ProjectionModel m = init_model(4, 4, 2, rng);
  EXPECT_THROW(forward(m, Matrix(1, 3), Matrix(1, 4)), Error);
}

TEST(InitModel, SameSeedSameWeights) {
  Rng a(9), b(9);
  EXPECT_EQ(init_model(6, 5, 4, a), init_model(6, 5, 4, b));
}

TEST(Backward, ZeroUpstreamGradientGivesZero) {
  Rng rng(6);
  ProjectionModel m = init_model(5, 4, 3, rng);
  Matrix fi = gradcheck::random_unit_rows(2, 5, rng), ft = gradcheck::random_unit_rows(3, 4, rng);
  auto fwd = forward(m, fi, ft);
  auto g = backward(m, fi, ft, fwd, Matrix(2, 3), Matrix(3, 3));
  for (auto blk : gradient_blocks(g))
    for (double x : blk) EXPECT_EQ(x, 0.0);
}

TEST(Backward, RadialUpstreamGradientVanishes) {
  // Scaling an embedding along itself does not change the normalized output.
  Rng rng(7);
  ProjectionModel m = init_model(5, 4, 3, rng);
  Matrix fi = gradcheck::random_unit_rows(2, 5, rng), ft = gradcheck::random_unit_rows(2, 4, rng);
  auto fwd = forward(m, fi, ft);
  auto g = backward(m, fi, ft, fwd, fwd.image.embeddings.values, fwd.text.embeddings.values);
  for (auto blk : gradient_blocks(g))
    for (double x : blk) EXPECT_NEAR(x, 0.0, 1e-12);
}

TEST(Backward, WeightGradientsMatchFiniteDifferences) {
  Dataset d = SynthDataset(6, 2);
  Rng rng(8);
  ProjectionModel m = init_model(16, 16, 8, rng);
  auto idx = make_batch(d, {0, 1, 2, 3, 4, 5}, 64);
  losses::LossConfig cfg;
  auto step = compute_step(m, d, idx, Objective::kOverall, cfg);
  auto loss_at = [&](const ProjectionModel& mm) {
    return compute_step(mm, d, idx, Objective::kOverall, cfg).loss.value;
  };
  std::vector<double> analytic, numeric;
  auto grads = gradient_blocks(step.grads);
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t k = 0; k < grads[b].size(); k += 7) {
      ProjectionModel p = m, q = m;
      parameter_blocks(p)[b][k] += 1e-5;
      parameter_blocks(q)[b][k] -= 1e-5;
      analytic.push_back(grads[b][k]);
      numeric.push_back((loss_at(p) - loss_at(q)) / 2e-5);
    }
  }
  EXPECT_LT(gradcheck::compare(analytic, numeric).rel_error, 1e-4);
}

TEST(AdamStep, BiasesAreNotDecayed) {
  Rng rng(10);
  ProjectionModel m = init_model(3, 3, 2, rng);
  ProjectionModel before = m;
  AdamState s = init_adam(m);
  ModelGrads zero{{Matrix(2, 3), std::vector<double>(2, 0.0)}, {Matrix(2, 3), std::vector<double>(2, 0.0)}};
  adam_step(m, s, zero, 0.1, 0.5);
  EXPECT_EQ(m.b_img, before.b_img);
  EXPECT_EQ(m.b_txt, before.b_txt);
  EXPECT_DOUBLE_EQ(m.w_img.data()[0], before.w_img.data()[0] * 0.95);
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  Rng rng(11);
  ProjectionModel m = init_model(2, 2, 1, rng);
  ProjectionModel before = m;
  AdamState s = init_adam(m);
  ModelGrads g{{Matrix(1, 2, {2.0, -3.0}), {0.5}}, {Matrix(1, 2, {0.0, 1.0}), {-1.0}}};
  adam_step(m, s, g, 0.01, 0.0);
  EXPECT_NEAR(m.w_img.data()[0], before.w_img.data()[0] - 0.01, 1e-9);
  EXPECT_NEAR(m.w_img.data()[1], before.w_img.data()[1] + 0.01, 1e-9);
  EXPECT_NEAR(m.b_txt[0], before.b_txt[0] + 0.01, 1e-9);
  EXPECT_EQ(m.w_txt.data()[0], before.w_txt.data()[0]);
}

TEST(Objective, NamesRoundTrip) {
  for (auto o : {Objective::kTriplet, Objective::kAdaptiveTriplet, Objective::kOverall}) {
    EXPECT_EQ(parse_objective(objective_name(o)), o);
  }
  EXPECT_THROW(parse_objective("hinge"), Error);
}

TEST(TrainConfig, Schedules) {
  TrainConfig c;
  EXPECT_EQ(c.lr_at(14), 5e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(15), 5e-5);
  EXPECT_FALSE(c.mining_at(1));
  EXPECT_TRUE(c.mining_at(2));
  c.loss.use_hardest_mining = false;
  EXPECT_FALSE(c.mining_at(10));
}

TEST(TrainConfig, RejectsInvalidValues) {
  TrainConfig c;
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.warmup_epochs = c.epochs;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Sampler, SingleImageWithFiveCaptionsYieldsTenOrderingPairs) {
  Dataset d;
  d.image_feats = Matrix(1, 3, {1.0, 0.0, 0.0});
  d.text_feats = Matrix(5, 3, {1, 0.1, 0, 1, 0, 0.2, 1, 0.3, 0.3, 1, -0.2, 0, 1, 0, -0.4});
  d.image_of_text.assign(5, 0);
  d.deltas = {0.1, 0.3, 0.5, 0.7, 0.9};
  Rng rng(0);
  auto idx = sample_batch(d, 128, rng);
  EXPECT_EQ(idx.texts.size(), 5u);
  Rng mrng(1);
  ProjectionModel m = init_model(3, 3, 3, mrng);
  ForwardPass fwd = forward(m, d.image_feats, d.text_feats);
  auto out = losses::ordering_loss(embed_batch(d, idx, fwd), {});
  EXPECT_EQ(out.diagnostics.ordering_pairs, 10u);
}

TEST(Sampler, KeepsAllCaptionsOfAnImageTogether) {
  Dataset d = SynthDataset(30, 12);
  Rng rng(13);
  auto plan = plan_epoch(d, 16, rng);
  std::multiset<std::size_t> seen;
  for (const auto& imgs : plan) {
    auto idx = make_batch(d, imgs, 16);
    EXPECT_GE(idx.images.size(), 2u);
    for (std::size_t local = 0; local < idx.images.size(); ++local) {
      EXPECT_EQ(std::count(idx.image_of_text.begin(), idx.image_of_text.end(), local), 4);
    }
    seen.insert(imgs.begin(), imgs.end());
  }
  EXPECT_EQ(seen.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(seen.count(i), 1u);
}

TEST(Sampler, TrailingSingleImageIsMerged) {
  Dataset d = SynthDataset(9, 14);  // 4 images of 4 captions fit in 16 texts: 4 + 4 + 1
  Rng rng(15);
  auto plan = plan_epoch(d, 16, rng);
  ASSERT_EQ(plan.size(), 2u);
  EXPECT_EQ(plan.back().size(), 5u);
}

TEST(Sampler, DeterministicForASeed) {
  Dataset d = SynthDataset(20, 16);
  Rng a(17), b(17);
  EXPECT_EQ(plan_epoch(d, 16, a), plan_epoch(d, 16, b));
}

TEST(Train, ConstantDescriptivenessMatchesFixedMarginBaseline) {
  Dataset d = SynthDataset(24, 18, /*with_table=*/false);
  TrainConfig base = SmallConfig();
  base.objective = Objective::kTriplet;
  base.loss.alpha = 0.2;
  TrainConfig adaptive = base;
  adaptive.objective = Objective::kOverall;
  adaptive.loss.lambda = 0.0;
  adaptive.loss.tau = 5.0;
  TrainState sa = init_state(d, base), sb = init_state(d, adaptive);
  auto la = train(d, nullptr, base, sa);
  auto lb = train(d, nullptr, adaptive, sb);
  EXPECT_EQ(sa.model, sb.model);
  for (std::size_t e = 0; e < la.size(); ++e) EXPECT_EQ(la[e].loss, lb[e].loss);
}

TEST(Train, ReducesTheLoss) {
  Dataset d = SynthDataset(40, 19);
  TrainConfig c = SmallConfig();
  c.epochs = 8;
  c.lr_decay_epoch = 6;
  TrainState s = init_state(d, c);
  const double before = dataset_loss(s.model, d, c, true);
  train(d, nullptr, c, s);
  EXPECT_LT(dataset_loss(s.model, d, c, true), before);
}

TEST(Train, NoHardestMiningDuringWarmup) {
  Dataset d = SynthDataset(20, 20);
  TrainConfig c = SmallConfig();
  c.warmup_epochs = 2;
  TrainState s = init_state(d, c);
  auto log = train(d, nullptr, c, s);
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0].mining_calls, 0u);
  EXPECT_EQ(log[1].mining_calls, 0u);
  EXPECT_EQ(log[2].mining_calls, log[2].batches);
  EXPECT_DOUBLE_EQ(log[3].lr, c.lr * c.lr_decay_factor);
}

TEST(Train, ResumingFromACopiedStateMatchesAnUninterruptedRun) {
  Dataset d = SynthDataset(20, 21);
  TrainConfig c = SmallConfig();
  TrainState full = init_state(d, c);
  auto full_log = train(d, nullptr, c, full);

  TrainConfig first = c;
  TrainState part = init_state(d, c);
  std::optional<TrainState> snapshot;
  train(d, nullptr, c, part, [&](const TrainState& s, const EpochRecord& r) {
    if (r.epoch == 1) snapshot = s;
  });
  ASSERT_TRUE(snapshot.has_value());
  auto rest = train(d, nullptr, first, *snapshot);
  ASSERT_EQ(rest.size(), 2u);
  EXPECT_EQ(rest.back().loss, full_log.back().loss);
  EXPECT_EQ(snapshot->model, full.model);
}

TEST(Train, ReportsValidationRsum) {
  Dataset d = SynthDataset(20, 22);
  Dataset v = SynthDataset(10, 23);
  TrainConfig c = SmallConfig();
  c.epochs = 2;
  TrainState s = init_state(d, c);
  auto log = train(d, &v, c, s);
  ASSERT_TRUE(log[0].val_rsum.has_value());
  EXPECT_GE(*log[0].val_rsum, 0.0);
  EXPECT_LE(*log[0].val_rsum, 600.0);
}

TEST(Train, NonFiniteLossRaisesNumericalError) {
  Dataset d = SynthDataset(8, 24);
  d.text_feats(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c = SmallConfig();
  TrainState s = init_state(d, c);
  EXPECT_THROW(train(d, nullptr, c, s), NumericalError);
}

TEST(Train, NeedsTwoImages) {
  Dataset d = SynthDataset(1, 25);
  TrainConfig c = SmallConfig();
  TrainState s = init_state(d, c);
  EXPECT_THROW(train(d, nullptr, c, s), Error);
}

}  // namespace
}  // namespace ditm::trainer
