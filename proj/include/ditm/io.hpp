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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ditm/corpus.hpp"
#include "ditm/error.hpp"
#include "ditm/geometry.hpp"
#include "ditm/trainer.hpp"

// File formats: corpus and descriptiveness JSONL, feature matrices (JSON
// manifest + little-endian binary, or JSONL), train configs, training logs
// and checkpoints.
namespace ditm::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// Non-empty lines of a JSONL file, parsed.
inline std::vector<json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::string to_jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out.push_back('\n');
  }
  return out;
}

// ---------------------------------------------------------------- corpus --

inline corpus::Sentence sentence_from_json(const json& j) {
  try {
    corpus::Sentence s;
    s.id = j.at("id").get<std::string>();
    s.image_id = j.at("image_id").get<std::string>();
    s.text = j.at("text").get<std::string>();
    s.split = j.value("split", std::string("train"));
    if (s.split != "train" && s.split != "val" && s.split != "test") {
      throw FormatError("sentence '" + s.id + "': unknown split '" + s.split + "'");
    }
    if (j.contains("level") && !j.at("level").is_null()) {
      int level = j.at("level").get<int>();
      if (level < 1 || level > 4) throw FormatError("sentence '" + s.id + "': level outside 1..4");
      s.level = level;
    }
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("corpus record: ") + e.what());
  }
}

inline json sentence_to_json(const corpus::Sentence& s) {
  json j = {{"id", s.id}, {"image_id", s.image_id}, {"text", s.text}, {"split", s.split}};
  if (s.level) j["level"] = *s.level;
  return j;
}

inline std::vector<corpus::Sentence> read_corpus(const fs::path& path) {
  std::vector<corpus::Sentence> out;
  for (const auto& j : read_jsonl(path)) out.push_back(sentence_from_json(j));
  return out;
}

inline void write_corpus(const fs::path& path, const std::vector<corpus::Sentence>& sentences) {
  std::vector<json> recs;
  for (const auto& s : sentences) recs.push_back(sentence_to_json(s));
  write_file(path, to_jsonl(recs));
}

// Header record first, then one record per sentence in id order.
inline void write_table(const fs::path& path, const corpus::DescriptivenessTable& table,
                        const std::string& pool_split = "train") {
  std::vector<json> recs;
  recs.push_back({{"header", true},
                  {"raw_min", table.raw_min},
                  {"raw_max", table.raw_max},
                  {"pool_split", pool_split}});
  for (const auto& [id, e] : table.scores) recs.push_back({{"id", id}, {"delta", e.delta}, {"raw", e.raw}});
  write_file(path, to_jsonl(recs));
}

inline corpus::DescriptivenessTable read_table(const fs::path& path) {
  corpus::DescriptivenessTable table;
  bool have_header = false;
  try {
    for (const auto& j : read_jsonl(path)) {
      if (j.value("header", false)) {
        table.raw_min = j.at("raw_min").get<double>();
        table.raw_max = j.at("raw_max").get<double>();
        have_header = true;
        continue;
      }
      corpus::ScoreEntry e{j.at("delta").get<double>(), j.at("raw").get<double>()};
      if (!(e.delta >= 0.0 && e.delta <= 1.0)) {
        throw FormatError(path.string() + ": delta outside [0, 1]");
      }
      table.scores[j.at("id").get<std::string>()] = e;
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!have_header) throw FormatError(path.string() + ": missing raw_min/raw_max header");
  if (table.raw_min > table.raw_max) throw FormatError(path.string() + ": raw_min > raw_max");
  return table;
}

// -------------------------------------------------------------- features --

enum class DType { kF32, kF64 };

// Writes `<stem>.json` (manifest) and `<stem>.bin` (row-major data).
inline void write_features(const fs::path& manifest_path, const FeatureSet& fs_,
                           DType dtype = DType::kF64) {
  if (fs_.ids.size() != fs_.values.rows()) throw Error("write_features: one id per row required");
  fs::path bin = manifest_path;
  bin.replace_extension(".bin");
  std::string data;
  const auto& v = fs_.values.data();
  if (dtype == DType::kF64) {
    data.resize(v.size() * sizeof(double));
    std::memcpy(data.data(), v.data(), data.size());
  } else {
    std::vector<float> f(v.begin(), v.end());
    data.resize(f.size() * sizeof(float));
    std::memcpy(data.data(), f.data(), data.size());
  }
  json manifest = {{"rows", fs_.values.rows()},
                   {"dim", fs_.values.cols()},
                   {"dtype", dtype == DType::kF64 ? "f64" : "f32"},
                   {"ids", fs_.ids},
                   {"data", bin.filename().string()}};
  write_file(bin, data);
  write_file(manifest_path, manifest.dump() + "\n");
}

inline FeatureSet read_features_jsonl(const fs::path& path) {
  FeatureSet out;
  std::vector<double> flat;
  std::size_t dim = 0;
  try {
    for (const auto& j : read_jsonl(path)) {
      auto vec = j.at("vec").get<std::vector<double>>();
      if (out.ids.empty()) dim = vec.size();
      if (vec.size() != dim || dim == 0) throw FormatError(path.string() + ": inconsistent vector length");
      out.ids.push_back(j.at("id").get<std::string>());
      flat.insert(flat.end(), vec.begin(), vec.end());
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  out.values = Matrix(out.ids.size(), dim, std::move(flat));
  return out;
}

inline void write_features_jsonl(const fs::path& path, const FeatureSet& fs_) {
  std::vector<json> recs;
  for (std::size_t r = 0; r < fs_.values.rows(); ++r) {
    auto row = fs_.values.row(r);
    recs.push_back({{"id", fs_.ids[r]}, {"vec", std::vector<double>(row.begin(), row.end())}});
  }
  write_file(path, to_jsonl(recs));
}

// Reads either a `.jsonl` file or a JSON manifest with its binary payload.
inline FeatureSet read_features(const fs::path& path) {
  if (path.extension() == ".jsonl") return read_features_jsonl(path);
  json manifest;
  try {
    manifest = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  FeatureSet out;
  std::size_t rows = 0, dim = 0;
  std::string dtype;
  fs::path bin;
  try {
    rows = manifest.at("rows").get<std::size_t>();
    dim = manifest.at("dim").get<std::size_t>();
    dtype = manifest.at("dtype").get<std::string>();
    out.ids = manifest.at("ids").get<std::vector<std::string>>();
    bin = path.parent_path() /
          manifest.value("data", fs::path(path).replace_extension(".bin").filename().string());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (out.ids.size() != rows) throw FormatError(path.string() + ": ids do not match rows");
  if (dtype != "f32" && dtype != "f64") throw FormatError(path.string() + ": unknown dtype " + dtype);
  const std::string data = read_file(bin);
  const std::size_t width = dtype == "f64" ? sizeof(double) : sizeof(float);
  if (data.size() != rows * dim * width) {
    throw FormatError(bin.string() + ": expected " + std::to_string(rows * dim * width) +
                      " bytes, found " + std::to_string(data.size()));
  }
  std::vector<double> values(rows * dim);
  if (dtype == "f64") {
    std::memcpy(values.data(), data.data(), data.size());
  } else {
    std::vector<float> f(rows * dim);
    std::memcpy(f.data(), data.data(), data.size());
    std::copy(f.begin(), f.end(), values.begin());
  }
  out.values = Matrix(rows, dim, std::move(values));
  return out;
}

// ---------------------------------------------------------------- config --

inline json loss_config_to_json(const losses::LossConfig& c) {
  return {{"alpha", c.alpha},         {"tau", c.tau},           {"lambda", c.lambda},
          {"eps_delta", c.eps_delta}, {"eps_dist", c.eps_dist}, {"use_hardest_mining", c.use_hardest_mining}};
}

inline json train_config_to_json(const trainer::TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"lr_decay_factor", c.lr_decay_factor},
          {"lr_decay_epoch", c.lr_decay_epoch},
          {"weight_decay", c.weight_decay},
          {"warmup_epochs", c.warmup_epochs},
          {"embed_dim", c.embed_dim},
          {"seed", c.seed},
          {"objective", trainer::objective_name(c.objective)},
          {"loss", loss_config_to_json(c.loss)}};
}

namespace detail {

template <typename T>
void assign_if_present(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw FormatError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_train_config(const json& j, trainer::TrainConfig& c) {
  using detail::assign_if_present;
  try {
    detail::reject_unknown(j,
                           {"batch_size", "epochs", "lr", "lr_decay_factor", "lr_decay_epoch", "weight_decay",
                            "warmup_epochs", "embed_dim", "seed", "objective", "loss"},
                           "config");
    assign_if_present(j, "batch_size", c.batch_size);
    assign_if_present(j, "epochs", c.epochs);
    assign_if_present(j, "lr", c.lr);
    assign_if_present(j, "lr_decay_factor", c.lr_decay_factor);
    assign_if_present(j, "lr_decay_epoch", c.lr_decay_epoch);
    assign_if_present(j, "weight_decay", c.weight_decay);
    assign_if_present(j, "warmup_epochs", c.warmup_epochs);
    assign_if_present(j, "embed_dim", c.embed_dim);
    assign_if_present(j, "seed", c.seed);
    if (j.contains("objective")) c.objective = trainer::parse_objective(j.at("objective").get<std::string>());
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      detail::reject_unknown(l, {"alpha", "tau", "lambda", "eps_delta", "eps_dist", "use_hardest_mining"},
                             "config.loss");
      assign_if_present(l, "alpha", c.loss.alpha);
      assign_if_present(l, "tau", c.loss.tau);
      assign_if_present(l, "lambda", c.loss.lambda);
      assign_if_present(l, "eps_delta", c.loss.eps_delta);
      assign_if_present(l, "eps_dist", c.loss.eps_dist);
      assign_if_present(l, "use_hardest_mining", c.loss.use_hardest_mining);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

inline std::string config_hash(const trainer::TrainConfig& c) {
  return hex64(fnv1a(train_config_to_json(c).dump()));
}

// ------------------------------------------------------------- train log --

inline json epoch_record_to_json(const trainer::EpochRecord& r) {
  json j = {{"epoch", r.epoch},     {"loss", r.loss}, {"triplet", r.triplet},
            {"ordering", r.ordering}, {"lr", r.lr},   {"batches", r.batches},
            {"mining_calls", r.mining_calls}};
  j["val_rsum"] = r.val_rsum ? json(*r.val_rsum) : json(nullptr);
  return j;
}

// ------------------------------------------------------------ checkpoint --

inline constexpr char kCheckpointMagic[8] = {'D', 'I', 'T', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  trainer::TrainState state;
  trainer::TrainConfig config;
};

namespace detail {

template <typename T>
void put_pod(std::string& out, const T& v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

inline void put_doubles(std::string& out, const std::vector<double>& v) {
  const std::size_t n = v.size() * sizeof(double);
  const std::size_t at = out.size();
  out.resize(at + n);
  std::memcpy(out.data() + at, v.data(), n);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::size_t n) {
    auto s = bytes(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), s.data(), s.size());
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("checkpoint: truncated file");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Layout: magic, u32 version, u64 header length, JSON header, raw f64
// payload (model blocks, then Adam first and second moments), u64 FNV-1a of
// everything before it.
inline std::string encode_checkpoint(const Checkpoint& ck) {
  const auto& m = ck.state.model;
  std::ostringstream rng;
  rng << ck.state.rng;
  json header = {{"format_version", kCheckpointVersion},
                 {"epoch", ck.state.epoch},
                 {"adam_step", ck.state.adam.step},
                 {"embed_dim", m.embed_dim()},
                 {"image_dim", m.image_input_dim()},
                 {"text_dim", m.text_input_dim()},
                 {"rng", rng.str()},
                 {"config", train_config_to_json(ck.config)},
                 {"config_hash", config_hash(ck.config)}};
  const std::string hdr = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_pod(out, kCheckpointVersion);
  detail::put_pod(out, static_cast<std::uint64_t>(hdr.size()));
  out += hdr;
  detail::put_doubles(out, m.w_img.data());
  detail::put_doubles(out, m.b_img);
  detail::put_doubles(out, m.w_txt.data());
  detail::put_doubles(out, m.b_txt);
  for (const auto& b : ck.state.adam.m) detail::put_doubles(out, b);
  for (const auto& b : ck.state.adam.v) detail::put_doubles(out, b);
  detail::put_pod(out, fnv1a(out));
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view data) {
  detail::Reader r(data);
  if (r.bytes(sizeof(kCheckpointMagic)) != std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  if (data.size() < sizeof(std::uint64_t)) throw FormatError("checkpoint: truncated file");
  const std::size_t body = data.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body, sizeof(stored));
  if (fnv1a(data.substr(0, body)) != stored) throw FormatError("checkpoint: checksum mismatch");

  const auto hdr_len = r.pod<std::uint64_t>();
  json header;
  Checkpoint ck;
  std::size_t e = 0, di = 0, dt = 0;
  try {
    header = json::parse(r.bytes(hdr_len));
    e = header.at("embed_dim").get<std::size_t>();
    di = header.at("image_dim").get<std::size_t>();
    dt = header.at("text_dim").get<std::size_t>();
    ck.state.epoch = header.at("epoch").get<std::size_t>();
    ck.state.adam.step = header.at("adam_step").get<std::uint64_t>();
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> ck.state.rng;
    if (!rng) throw FormatError("checkpoint: bad rng state");
    apply_train_config(header.at("config"), ck.config);
    if (header.at("config_hash").get<std::string>() != config_hash(ck.config)) {
      throw FormatError("checkpoint: config hash mismatch");
    }
  } catch (const json::exception& ex) {
    throw FormatError(std::string("checkpoint header: ") + ex.what());
  }
  auto& m = ck.state.model;
  m.w_img = Matrix(e, di, r.doubles(e * di));
  m.b_img = r.doubles(e);
  m.w_txt = Matrix(e, dt, r.doubles(e * dt));
  m.b_txt = r.doubles(e);
  const std::array<std::size_t, 4> sizes = {e * di, e, e * dt, e};
  for (std::size_t b = 0; b < 4; ++b) ck.state.adam.m[b] = r.doubles(sizes[b]);
  for (std::size_t b = 0; b < 4; ++b) ck.state.adam.v[b] = r.doubles(sizes[b]);
  if (r.pos() != body) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace ditm::io
