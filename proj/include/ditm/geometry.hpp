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
#include <span>
#include <string>
#include <vector>

#include "ditm/error.hpp"
#include "ditm/matrix.hpp"

namespace ditm {

// One modality's embeddings, one row per item.
struct EmbeddingMatrix {
  Matrix values;
  bool normalized = false;

  std::size_t rows() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
  std::span<const double> row(std::size_t r) const { return values.row(r); }
};

// Named feature or embedding rows, as stored in feature files.
struct FeatureSet {
  std::vector<std::string> ids;
  Matrix values;
};

namespace geometry {

inline constexpr double kMinRowNorm = 1e-12;

inline double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error("dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) s += u[k] * v[k];
  return s;
}

inline double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

inline EmbeddingMatrix l2_normalize(Matrix m) {
  if (m.cols() == 0) throw Error("l2_normalize: embedding dimension must be >= 1");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double n = norm(row);
    if (n < kMinRowNorm) {
      throw Error("l2_normalize: row " + std::to_string(r) + " has zero norm");
    }
    for (double& x : row) x /= n;
  }
  return {std::move(m), true};
}

inline EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) { return l2_normalize(m.values); }

// Dot product of unit vectors, clamped to [-1, 1].
inline double cosine_sim(std::span<const double> u, std::span<const double> v) {
  return std::clamp(dot(u, v), -1.0, 1.0);
}

inline double euclid_dist(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error("dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    double d = u[k] - v[k];
    s += d * d;
  }
  return std::sqrt(s);
}

// (i, j) = cosine_sim(images[i], texts[j])
inline Matrix sim_matrix(const EmbeddingMatrix& images, const EmbeddingMatrix& texts) {
  if (images.dim() != texts.dim()) throw Error("sim_matrix: dimension mismatch");
  Matrix out(images.rows(), texts.rows());
  for (std::size_t i = 0; i < images.rows(); ++i) {
    for (std::size_t j = 0; j < texts.rows(); ++j) {
      out(i, j) = cosine_sim(images.row(i), texts.row(j));
    }
  }
  return out;
}

inline Matrix dist_matrix(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.dim() != b.dim()) throw Error("dist_matrix: dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = euclid_dist(a.row(i), b.row(j));
  }
  return out;
}

}  // namespace geometry
}  // namespace ditm
