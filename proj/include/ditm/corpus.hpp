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
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ditm/error.hpp"

// Sentence descriptiveness: cumulative TF-IDF of a caption against a
// document pool (normally the training split), min-max normalized to [0, 1].
//
// The logarithm is natural by default. Any other base only rescales raw
// scores by a constant factor, so normalized scores do not depend on it.
namespace ditm::corpus {

struct TokenSequence {
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

// One caption record as stored in corpus JSONL files.
struct Sentence {
  std::string id;
  std::string image_id;
  std::string text;
  std::string split = "train";
  std::optional<int> level = std::nullopt;
};

// Lowercases and splits on every non-alphanumeric character.
inline TokenSequence tokenize(std::string_view text) {
  TokenSequence out;
  std::string current;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.tokens.push_back(std::move(current));
  return out;
}

struct DocumentPool {
  std::size_t num_sentences = 0;
  // word -> number of pool sentences containing it at least once
  std::map<std::string, std::size_t> doc_freq;
  // Unseen words are scored as if they occurred in exactly one sentence.
  bool smoothing = true;

  std::size_t frequency(const std::string& word) const {
    auto it = doc_freq.find(word);
    return it == doc_freq.end() ? 0 : it->second;
  }

  friend bool operator==(const DocumentPool&, const DocumentPool&) = default;
};

inline DocumentPool build_pool(const std::vector<TokenSequence>& sentences,
                               bool smoothing = true) {
  DocumentPool pool;
  pool.smoothing = smoothing;
  pool.num_sentences = sentences.size();
  for (const auto& s : sentences) {
    std::set<std::string> distinct(s.tokens.begin(), s.tokens.end());
    for (const auto& w : distinct) ++pool.doc_freq[w];
  }
  return pool;
}

namespace detail {

inline double idf(const std::string& word, const DocumentPool& pool, double log_base) {
  std::size_t mw = pool.frequency(word);
  if (mw == 0) {
    if (!pool.smoothing) {
      throw Error("tfidf: word '" + word + "' is absent from the pool and smoothing is off");
    }
    mw = 1;
  }
  double v = std::log(static_cast<double>(pool.num_sentences) / static_cast<double>(mw));
  if (log_base != std::numbers::e) v /= std::log(log_base);
  return v;
}

inline void check_inputs(const TokenSequence& sentence, const DocumentPool& pool) {
  if (sentence.empty()) throw Error("descriptiveness: sentence has no tokens");
  if (pool.num_sentences == 0) throw Error("descriptiveness: document pool is empty");
}

}  // namespace detail

// (N_w / N) * log(M / M_w)
inline double tfidf(const std::string& word, const TokenSequence& sentence,
                    const DocumentPool& pool, double log_base = std::numbers::e) {
  detail::check_inputs(sentence, pool);
  auto count = std::count(sentence.tokens.begin(), sentence.tokens.end(), word);
  if (count == 0) return 0.0;
  double tf = static_cast<double>(count) / static_cast<double>(sentence.size());
  return tf * detail::idf(word, pool, log_base);
}

// Sum of TF-IDF over the distinct words of the sentence.
inline double raw_descriptiveness(const TokenSequence& sentence, const DocumentPool& pool,
                                  double log_base = std::numbers::e) {
  detail::check_inputs(sentence, pool);
  std::map<std::string, std::size_t> counts;
  for (const auto& t : sentence.tokens) ++counts[t];
  const double n = static_cast<double>(sentence.size());
  double total = 0.0;
  for (const auto& [word, c] : counts) {
    total += (static_cast<double>(c) / n) * detail::idf(word, pool, log_base);
  }
  return total;
}

struct ScoreEntry {
  double delta = 0.0;
  double raw = 0.0;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

struct DescriptivenessTable {
  std::map<std::string, ScoreEntry> scores;
  double raw_min = 0.0;
  double raw_max = 0.0;

  // Maps a raw score through the stored range, clamped into [0, 1].
  double normalize(double raw) const {
    if (raw_max == raw_min) return 0.5;
    return std::clamp((raw - raw_min) / (raw_max - raw_min), 0.0, 1.0);
  }

  double delta(const std::string& id) const {
    auto it = scores.find(id);
    if (it == scores.end()) throw Error("descriptiveness table has no entry for '" + id + "'");
    return it->second.delta;
  }

  friend bool operator==(const DescriptivenessTable&, const DescriptivenessTable&) = default;
};

// Min-max normalization; a degenerate range maps every score to 0.5.
inline DescriptivenessTable normalize_scores(const std::map<std::string, double>& raw) {
  if (raw.empty()) throw Error("normalize_scores: no scores given");
  DescriptivenessTable table;
  auto [lo, hi] = std::minmax_element(raw.begin(), raw.end(),
                                      [](const auto& a, const auto& b) { return a.second < b.second; });
  table.raw_min = lo->second;
  table.raw_max = hi->second;
  for (const auto& [id, r] : raw) {
    double d = table.raw_max == table.raw_min
                   ? 0.5
                   : (r - table.raw_min) / (table.raw_max - table.raw_min);
    table.scores[id] = {d, r};
  }
  return table;
}

// Scores a sentence outside the pool against the stored training range.
inline double score_out_of_pool(const TokenSequence& sentence, const DocumentPool& pool,
                                const DescriptivenessTable& table) {
  return table.normalize(raw_descriptiveness(sentence, pool));
}

// Builds the pool from the sentences of `pool_split`, normalizes their scores
// and adds every other sentence through score_out_of_pool.
inline std::pair<DocumentPool, DescriptivenessTable> score_corpus(
    const std::vector<Sentence>& corpus, const std::string& pool_split = "train") {
  std::vector<TokenSequence> tokens;
  tokens.reserve(corpus.size());
  std::vector<TokenSequence> pool_tokens;
  for (const auto& s : corpus) {
    tokens.push_back(tokenize(s.text));
    if (tokens.back().empty()) throw Error("sentence '" + s.id + "' has no tokens");
    if (s.split == pool_split) pool_tokens.push_back(tokens.back());
  }
  if (pool_tokens.empty()) throw Error("pool split '" + pool_split + "' has no sentences");

  DocumentPool pool = build_pool(pool_tokens);
  std::map<std::string, double> raw;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].split != pool_split) continue;
    if (!raw.emplace(corpus[i].id, raw_descriptiveness(tokens[i], pool)).second) {
      throw Error("duplicate sentence id '" + corpus[i].id + "'");
    }
  }
  DescriptivenessTable table = normalize_scores(raw);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].split == pool_split) continue;
    double r = raw_descriptiveness(tokens[i], pool);
    if (!table.scores.emplace(corpus[i].id, ScoreEntry{table.normalize(r), r}).second) {
      throw Error("duplicate sentence id '" + corpus[i].id + "'");
    }
  }
  return {std::move(pool), std::move(table)};
}

}  // namespace ditm::corpus
