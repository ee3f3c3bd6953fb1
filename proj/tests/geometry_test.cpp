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

#include "ditm/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

namespace ditm::geometry {
namespace {

Matrix RandomMatrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = n(rng);
  return m;
}

TEST(L2Normalize, ThreeFourFive) {
  auto e = l2_normalize(Matrix(1, 2, {3.0, 4.0}));
  EXPECT_TRUE(e.normalized);
  EXPECT_DOUBLE_EQ(e.values(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(e.values(0, 1), 0.8);
}

TEST(L2Normalize, UnitRowUnchanged) {
  auto e = l2_normalize(Matrix(1, 3, {0.0, 1.0, 0.0}));
  EXPECT_EQ(e.values, Matrix(1, 3, {0.0, 1.0, 0.0}));
}

TEST(L2Normalize, AxisVector) {
  auto e = l2_normalize(Matrix(1, 3, {2.0, 0.0, 0.0}));
  EXPECT_EQ(e.values, Matrix(1, 3, {1.0, 0.0, 0.0}));
}

TEST(L2Normalize, ZeroRowNamesTheRow) {
  try {
    l2_normalize(Matrix(3, 2, {1.0, 0.0, 0.0, 0.0, 0.0, 1.0}));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(CosineSim, Extremes) {
  std::vector<double> u = {0.6, 0.8}, v = {-0.8, 0.6}, w = {-0.6, -0.8};
  EXPECT_DOUBLE_EQ(cosine_sim(u, u), 1.0);
  EXPECT_DOUBLE_EQ(cosine_sim(u, v), 0.0);
  EXPECT_DOUBLE_EQ(cosine_sim(u, w), -1.0);
}

TEST(CosineSim, DimensionMismatch) {
  std::vector<double> u = {1.0, 0.0}, v = {1.0, 0.0, 0.0};
  EXPECT_THROW(cosine_sim(u, v), Error);
  EXPECT_THROW(euclid_dist(u, v), Error);
}

TEST(EuclidDist, Extremes) {
  std::vector<double> u = {1.0, 0.0}, v = {0.0, 1.0}, w = {-1.0, 0.0};
  EXPECT_EQ(euclid_dist(u, u), 0.0);
  EXPECT_NEAR(euclid_dist(u, v), std::sqrt(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(euclid_dist(u, w), 2.0);
}

TEST(SimMatrix, SingleRow) {
  auto e = l2_normalize(Matrix(1, 3, {1.0, 2.0, 3.0}));
  auto s = sim_matrix(e, e);
  ASSERT_EQ(s.rows(), 1u);
  EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
}

TEST(SimMatrix, MatchesPerPairCalls) {
  std::mt19937_64 rng(3);
  auto a = l2_normalize(RandomMatrix(2, 5, rng));
  auto b = l2_normalize(RandomMatrix(3, 5, rng));
  auto s = sim_matrix(a, b);
  ASSERT_EQ(s.rows(), 2u);
  ASSERT_EQ(s.cols(), 3u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s(i, j), cosine_sim(a.row(i), b.row(j)));
}

TEST(SimMatrix, SelfSimilarityIsSymmetric) {
  std::mt19937_64 rng(4);
  auto a = l2_normalize(RandomMatrix(6, 4, rng));
  auto s = sim_matrix(a, a);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(s(i, i), 1.0, 1e-15);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(s(i, j), s(j, i));
  }
}

TEST(SimMatrix, DimensionMismatch) {
  std::mt19937_64 rng(5);
  auto a = l2_normalize(RandomMatrix(2, 4, rng));
  auto b = l2_normalize(RandomMatrix(2, 5, rng));
  EXPECT_THROW(sim_matrix(a, b), Error);
}

TEST(GeometryProperties, DistanceSimilarityIdentity) {
  std::mt19937_64 rng(6);
  auto a = l2_normalize(RandomMatrix(200, 16, rng));
  for (std::size_t i = 0; i + 1 < a.rows(); ++i) {
    const double d = euclid_dist(a.row(i), a.row(i + 1));
    const double s = cosine_sim(a.row(i), a.row(i + 1));
    EXPECT_LT(std::abs(d * d + 2.0 * s - 2.0), 1e-9);
  }
}

TEST(GeometryProperties, PositiveScalingDoesNotChangeNormalizedRows) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  Matrix raw = RandomMatrix(50, 8, rng);
  Matrix scaled = raw;
  for (std::size_t r = 0; r < scaled.rows(); ++r) {
    const double c = scale(rng);
    for (double& x : scaled.row(r)) x *= c;
  }
  auto a = l2_normalize(raw);
  auto b = l2_normalize(scaled);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values.data()[i], b.values.data()[i], 1e-9);
  auto sa = sim_matrix(a, a), sb = sim_matrix(b, b);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_NEAR(sa.data()[i], sb.data()[i], 1e-9);
}

TEST(GeometryProperties, SymmetryAndTriangleInequality) {
  std::mt19937_64 rng(8);
  auto a = l2_normalize(RandomMatrix(300, 6, rng));
  for (std::size_t i = 0; i + 2 < a.rows(); i += 3) {
    auto u = a.row(i), v = a.row(i + 1), w = a.row(i + 2);
    EXPECT_EQ(cosine_sim(u, v), cosine_sim(v, u));
    EXPECT_LE(euclid_dist(u, w), euclid_dist(u, v) + euclid_dist(v, w) + 1e-12);
  }
}

}  // namespace
}  // namespace ditm::geometry
