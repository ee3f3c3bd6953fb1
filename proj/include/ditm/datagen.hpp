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
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ditm/corpus.hpp"
#include "ditm/error.hpp"
#include "ditm/geometry.hpp"
#include "ditm/matrix.hpp"

// Synthetic hierarchical captions and features with a planted
// generic-to-specific structure.
//
// Level 1 captions use only a small shared vocabulary. Each deeper level
// repeats its parent caption and appends words from a rarer vocabulary
// stratum, so cumulative TF-IDF grows with depth. Text features of level l are
// normalize(latent + (L - l + 1) * sigma * gaussian), so deeper captions sit
// closer to their image.
namespace ditm::datagen {

struct SynthSpec {
  std::size_t n_images = 200;
  std::size_t levels = 4;
  std::size_t shared_vocab = 20;
  std::size_t rare_vocab = 3000;
  std::size_t words_per_level = 2;
  std::size_t feature_dim = 64;
  double noise_sigma = 0.15;
  // Draw rare words without replacement across images.
  bool unique_rare = false;
  double val_fraction = 0.0;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_images == 0 || levels == 0 || shared_vocab == 0 || words_per_level == 0 ||
        feature_dim == 0) {
      throw Error("synth: counts must be >= 1");
    }
    if (levels > 1 && rare_vocab == 0) throw Error("synth: rare_vocab must be >= 1");
    if (!(noise_sigma >= 0.0)) throw Error("synth: noise_sigma must be >= 0");
    if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) || val_fraction + test_fraction >= 1.0) {
      throw Error("synth: split fractions must be >= 0 and sum below 1");
    }
  }

  std::size_t val_images() const {
    return static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n_images)));
  }
  std::size_t test_images() const {
    return static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n_images)));
  }
};

// Sizes of the rare strata for levels 2..L, doubling with depth.
inline std::vector<std::size_t> stratum_sizes(const SynthSpec& spec) {
  std::vector<std::size_t> sizes;
  if (spec.levels < 2) return sizes;
  const std::size_t strata = spec.levels - 1;
  double weight_total = 0.0;
  for (std::size_t k = 0; k < strata; ++k) weight_total += std::ldexp(1.0, static_cast<int>(k));
  std::size_t used = 0;
  for (std::size_t k = 0; k < strata; ++k) {
    std::size_t s = static_cast<std::size_t>(
        std::floor(static_cast<double>(spec.rare_vocab) * std::ldexp(1.0, static_cast<int>(k)) /
                   weight_total));
    if (k + 1 == strata) s = spec.rare_vocab - used;
    sizes.push_back(s);
    used += s;
  }
  return sizes;
}

inline std::string image_id(std::size_t i) { return "img" + std::to_string(i); }
inline std::string sentence_id(std::size_t i, std::size_t level) {
  return "img" + std::to_string(i) + "_l" + std::to_string(level);
}

inline std::string split_of(const SynthSpec& spec, std::size_t image) {
  const std::size_t n_test = spec.test_images();
  const std::size_t n_val = spec.val_images();
  const std::size_t n_train = spec.n_images - n_test - n_val;
  if (image < n_train) return "train";
  if (image < n_train + n_val) return "val";
  return "test";
}

// Captions ordered by image, then level.
inline std::vector<corpus::Sentence> gen_corpus(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto sizes = stratum_sizes(spec);
  if (spec.shared_vocab < spec.words_per_level) {
    throw Error("synth: shared vocabulary smaller than words_per_level");
  }
  for (std::size_t s : sizes) {
    if (s < spec.words_per_level) throw Error("synth: rare vocabulary exhausted by its strata");
  }

  // For unique_rare, each stratum is a shuffled deck consumed front to back.
  std::vector<std::vector<std::size_t>> decks(sizes.size());
  std::vector<std::size_t> deck_pos(sizes.size(), 0);
  if (spec.unique_rare) {
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (sizes[k] < spec.n_images * spec.words_per_level) {
        throw Error("synth: rare vocabulary exhausted (stratum " + std::to_string(k + 2) +
                    " needs " + std::to_string(spec.n_images * spec.words_per_level) + " words)");
      }
      decks[k].resize(sizes[k]);
      std::iota(decks[k].begin(), decks[k].end(), std::size_t{0});
      std::shuffle(decks[k].begin(), decks[k].end(), rng);
    }
  }

  auto draw_distinct = [&](std::size_t pool) {
    std::vector<std::size_t> picked;
    std::uniform_int_distribution<std::size_t> dist(0, pool - 1);
    while (picked.size() < spec.words_per_level) {
      std::size_t w = dist(rng);
      if (std::find(picked.begin(), picked.end(), w) == picked.end()) picked.push_back(w);
    }
    return picked;
  };

  std::vector<corpus::Sentence> out;
  out.reserve(spec.n_images * spec.levels);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    std::string text;
    auto append = [&](const std::string& w) {
      if (!text.empty()) text.push_back(' ');
      text += w;
    };
    for (std::size_t w : draw_distinct(spec.shared_vocab)) append("g" + std::to_string(w));
    const std::string split = split_of(spec, i);
    out.push_back({sentence_id(i, 1), image_id(i), text, split, 1});
    for (std::size_t level = 2; level <= spec.levels; ++level) {
      const std::size_t k = level - 2;
      std::vector<std::size_t> words;
      if (spec.unique_rare) {
        for (std::size_t n = 0; n < spec.words_per_level; ++n) words.push_back(decks[k][deck_pos[k]++]);
      } else {
        words = draw_distinct(sizes[k]);
      }
      for (std::size_t w : words) append("s" + std::to_string(level) + "w" + std::to_string(w));
      out.push_back({sentence_id(i, level), image_id(i), text, split, static_cast<int>(level)});
    }
  }
  return out;
}

struct SynthFeatures {
  FeatureSet images;
  FeatureSet texts;
};

inline std::vector<double> gaussian_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = n(rng);
  return v;
}

inline void normalize_in_place(std::vector<double>& v) {
  const double n = geometry::norm(v);
  if (n < geometry::kMinRowNorm) throw Error("synth: degenerate zero vector");
  for (double& x : v) x /= n;
}

// Image features are the unit latents themselves.
inline SynthFeatures gen_features(const std::vector<corpus::Sentence>& sentences,
                                  const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t dim = spec.feature_dim;
  SynthFeatures out;
  out.images.values = Matrix(spec.n_images, dim);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    auto latent = gaussian_vector(dim, rng);
    normalize_in_place(latent);
    std::copy(latent.begin(), latent.end(), out.images.values.row(i).begin());
    out.images.ids.push_back(image_id(i));
  }

  out.texts.values = Matrix(sentences.size(), dim);
  std::vector<double> v(dim);
  for (std::size_t t = 0; t < sentences.size(); ++t) {
    const auto& s = sentences[t];
    const std::size_t img = std::stoul(s.image_id.substr(3));
    if (img >= spec.n_images) throw Error("synth: sentence refers to an unknown image");
    const int level = s.level.value_or(1);
    const double scale = static_cast<double>(spec.levels - static_cast<std::size_t>(level) + 1) *
                         spec.noise_sigma;
    auto g = gaussian_vector(dim, rng);
    auto latent = out.images.values.row(img);
    for (std::size_t k = 0; k < dim; ++k) v[k] = latent[k] + scale * g[k];
    normalize_in_place(v);
    std::copy(v.begin(), v.end(), out.texts.values.row(t).begin());
    out.texts.ids.push_back(s.id);
  }
  return out;
}

}  // namespace ditm::datagen
