#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/serialize.hpp"
#include "mogo/rng.hpp"

#include "json.hpp"

namespace mogo {

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// N frames x D pose features, row-major.
struct MotionSequence {
  int frame_count = 0;
  int dim = 0;
  float fps = 20.0f;
  bool is_normalized = false;
  std::vector<float> frames;  // frame_count * dim

  float& at(int frame, int channel) { return frames[static_cast<size_t>(frame) * dim + channel]; }
  float at(int frame, int channel) const {
    return frames[static_cast<size_t>(frame) * dim + channel];
  }

  void validate(const std::string& where) const {
    if (frame_count < 1 || dim < 1) {
      throw ParseError(where + ": motion must have at least one frame and one channel");
    }
    if (frames.size() != static_cast<size_t>(frame_count) * dim) {
      throw ParseError(where + ": frame buffer size mismatch");
    }
    for (size_t i = 0; i < frames.size(); ++i) {
      if (!std::isfinite(frames[i])) {
        throw ParseError(where + ": non-finite value at frame " +
                         std::to_string(i / static_cast<size_t>(dim)) + " channel " +
                         std::to_string(i % static_cast<size_t>(dim)));
      }
    }
  }
};

// Per-channel z-scoring statistics. Zero-variance channels get std 1 so the
// channel normalizes to 0 instead of dividing by zero.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> std;

  int dim() const { return static_cast<int>(mean.size()); }

  static NormStats compute(const std::vector<const MotionSequence*>& seqs) {
    if (seqs.empty()) throw ParseError("norm stats: no sequences");
    const int d = seqs[0]->dim;
    NormStats s;
    s.mean.assign(static_cast<size_t>(d), 0.0f);
    s.std.assign(static_cast<size_t>(d), 0.0f);
    std::vector<double> acc(static_cast<size_t>(d), 0.0);
    std::vector<double> acc2(static_cast<size_t>(d), 0.0);
    int64_t total = 0;
    for (const auto* m : seqs) {
      if (m->dim != d) throw ParseError("norm stats: mixed channel counts");
      for (int f = 0; f < m->frame_count; ++f) {
        for (int c = 0; c < d; ++c) {
          const double v = m->at(f, c);
          acc[static_cast<size_t>(c)] += v;
          acc2[static_cast<size_t>(c)] += v * v;
        }
      }
      total += m->frame_count;
    }
    for (int c = 0; c < d; ++c) {
      const double mu = acc[static_cast<size_t>(c)] / static_cast<double>(total);
      double var = acc2[static_cast<size_t>(c)] / static_cast<double>(total) - mu * mu;
      var = std::max(var, 0.0);
      s.mean[static_cast<size_t>(c)] = static_cast<float>(mu);
      const double sd = std::sqrt(var);
      s.std[static_cast<size_t>(c)] = sd > 1e-8 ? static_cast<float>(sd) : 1.0f;
    }
    return s;
  }

  void save(const std::string& path) const {
    CheckpointWriter w(path, "NRM1", "");
    w.add_raw("mean", {dim()}, mean);
    w.add_raw("std", {dim()}, std);
    w.finish();
  }

  static NormStats load(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    if (ck.magic != "NRM1") throw IoError("not a norm stats file: " + path);
    NormStats s;
    s.mean = ck.at("mean").data;
    s.std = ck.at("std").data;
    return s;
  }
};

inline MotionSequence normalize(const MotionSequence& seq, const NormStats& stats) {
  if (seq.dim != stats.dim()) {
    throw ParseError("normalize: sequence has " + std::to_string(seq.dim) + " channels, stats " +
                     std::to_string(stats.dim()));
  }
  MotionSequence out = seq;
  for (int f = 0; f < out.frame_count; ++f) {
    for (int c = 0; c < out.dim; ++c) {
      out.at(f, c) = (out.at(f, c) - stats.mean[static_cast<size_t>(c)]) /
                     stats.std[static_cast<size_t>(c)];
    }
  }
  out.is_normalized = true;
  return out;
}

inline MotionSequence denormalize(const MotionSequence& seq, const NormStats& stats) {
  if (seq.dim != stats.dim()) {
    throw ParseError("denormalize: sequence has " + std::to_string(seq.dim) +
                     " channels, stats " + std::to_string(stats.dim()));
  }
  MotionSequence out = seq;
  for (int f = 0; f < out.frame_count; ++f) {
    for (int c = 0; c < out.dim; ++c) {
      out.at(f, c) = out.at(f, c) * stats.std[static_cast<size_t>(c)] +
                     stats.mean[static_cast<size_t>(c)];
    }
  }
  out.is_normalized = false;
  return out;
}

// ---- file formats ----
// MGO1: "MGO1" | u32 N | u32 D | f32 fps | N*D little-endian f32.

inline void save_motion_mgo1(const MotionSequence& seq, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("MGO1", 4);
  io::write_u32(os, static_cast<uint32_t>(seq.frame_count));
  io::write_u32(os, static_cast<uint32_t>(seq.dim));
  io::write_f32(os, seq.fps);
  io::write_f32_array(os, seq.frames.data(), seq.frames.size());
  if (!os) throw IoError("write failed: " + path);
}

inline MotionSequence load_motion_mgo1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open motion file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MGO1") {
    throw ParseError(path + ": bad MGO1 magic");
  }
  MotionSequence seq;
  seq.frame_count = static_cast<int>(io::read_u32(is));
  seq.dim = static_cast<int>(io::read_u32(is));
  seq.fps = io::read_f32(is);
  if (seq.frame_count < 1 || seq.dim < 1 || seq.frame_count > (1 << 24) || seq.dim > (1 << 20)) {
    throw ParseError(path + ": implausible header N=" + std::to_string(seq.frame_count) +
                     " D=" + std::to_string(seq.dim));
  }
  seq.frames.resize(static_cast<size_t>(seq.frame_count) * seq.dim);
  io::read_f32_array(is, seq.frames.data(), seq.frames.size());
  seq.validate(path);
  return seq;
}

// CSV: header row f0..f{D-1}, one frame per row.

inline void save_motion_csv(const MotionSequence& seq, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (int c = 0; c < seq.dim; ++c) os << (c ? "," : "") << 'f' << c;
  os << '\n';
  os.precision(9);
  for (int f = 0; f < seq.frame_count; ++f) {
    for (int c = 0; c < seq.dim; ++c) {
      os << (c ? "," : "");
      os << seq.at(f, c);
    }
    os << '\n';
  }
}

inline MotionSequence load_motion_csv(const std::string& path, float fps = 20.0f) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open motion file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ": empty file");
  int dim = 1;
  for (char ch : line) dim += ch == ',';
  MotionSequence seq;
  seq.dim = dim;
  seq.fps = fps;
  int row = 1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ++row;
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      try {
        size_t pos = 0;
        const float v = std::stof(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument("trailing characters");
        seq.frames.push_back(v);
      } catch (const std::exception&) {
        throw ParseError(path + ": non-numeric cell at row " + std::to_string(row) + " column " +
                         std::to_string(col));
      }
    }
    if (col != dim) {
      throw ParseError(path + ": ragged row " + std::to_string(row) + " has " +
                       std::to_string(col) + " cells, expected " + std::to_string(dim));
    }
    ++seq.frame_count;
  }
  seq.validate(path);
  return seq;
}

// JSON: {"fps": float, "frames": [[...], ...]}.

inline void save_motion_json(const MotionSequence& seq, const std::string& path) {
  nlohmann::json j;
  j["fps"] = seq.fps;
  auto& frames = j["frames"];
  frames = nlohmann::json::array();
  for (int f = 0; f < seq.frame_count; ++f) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < seq.dim; ++c) row.push_back(seq.at(f, c));
    frames.push_back(std::move(row));
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << j.dump();
}

inline MotionSequence load_motion_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open motion file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": JSON parse failure: " + e.what());
  }
  if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
    throw ParseError(path + ": missing or empty 'frames' array");
  }
  MotionSequence seq;
  seq.fps = j.value("fps", 20.0f);
  const auto& frames = j["frames"];
  seq.frame_count = static_cast<int>(frames.size());
  seq.dim = static_cast<int>(frames[0].size());
  seq.frames.reserve(static_cast<size_t>(seq.frame_count) * seq.dim);
  for (size_t f = 0; f < frames.size(); ++f) {
    if (static_cast<int>(frames[f].size()) != seq.dim) {
      throw ParseError(path + ": ragged row " + std::to_string(f));
    }
    for (const auto& v : frames[f]) {
      if (!v.is_number()) throw ParseError(path + ": non-numeric cell in row " + std::to_string(f));
      seq.frames.push_back(v.get<float>());
    }
  }
  seq.validate(path);
  return seq;
}

enum class MotionFormat { kMgo1, kCsv, kJson };

inline MotionSequence load_motion(const std::string& path, MotionFormat format) {
  switch (format) {
    case MotionFormat::kMgo1: return load_motion_mgo1(path);
    case MotionFormat::kCsv: return load_motion_csv(path);
    case MotionFormat::kJson: return load_motion_json(path);
  }
  throw ParseError("unknown motion format");
}

inline MotionFormat format_from_path(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "mgo1") return MotionFormat::kMgo1;
  if (ext == "csv") return MotionFormat::kCsv;
  if (ext == "json") return MotionFormat::kJson;
  throw ParseError("cannot infer motion format from path: " + path);
}

// ---- dataset ----

enum class Split { kTrain, kTest, kVal };

struct DatasetItem {
  MotionSequence motion;
  std::vector<std::string> captions;
};

// Parameters of one synthetic item; captions are a pure function of these.
struct SynthParams {
  float frequency = 0.0f;
  float amplitude = 0.0f;
  float phase = 0.0f;
  int direction = 0;  // 0..3: left, right, forward, backward
  int pattern = 0;    // 0..3: sways, bounces, twists, stretches
};

struct Dataset {
  std::vector<DatasetItem> items;
  std::vector<Split> split;          // parallel to items once assigned
  std::vector<SynthParams> synth;    // parallel to items for synthetic data
  NormStats norm_stats;
  bool has_norm_stats = false;

  std::vector<int> indices_of(Split s) const {
    std::vector<int> out;
    for (size_t i = 0; i < split.size(); ++i) {
      if (split[i] == s) out.push_back(static_cast<int>(i));
    }
    return out;
  }
};

// 0.8 / 0.15 / 0.05 split: floor(0.15 n) to test, floor(0.05 n) to val,
// remainder to train. Deterministic in the seed, disjoint and complete.
inline void split_dataset(Dataset& ds, uint64_t seed) {
  const int n = static_cast<int>(ds.items.size());
  if (n < 20) {
    throw std::invalid_argument("split requires at least 20 items, got " + std::to_string(n));
  }
  const int n_test = static_cast<int>(std::floor(0.15 * n));
  const int n_val = static_cast<int>(std::floor(0.05 * n));
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x517cc1b727220a95ull);
  for (int i = n - 1; i > 0; --i) {
    const int j = rng.below_int(i + 1);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  ds.split.assign(static_cast<size_t>(n), Split::kTrain);
  for (int i = 0; i < n_val; ++i) ds.split[static_cast<size_t>(order[static_cast<size_t>(i)])] = Split::kVal;
  for (int i = n_val; i < n_val + n_test; ++i) {
    ds.split[static_cast<size_t>(order[static_cast<size_t>(i)])] = Split::kTest;
  }
}

// Normalization statistics come from the train split only.
inline void compute_train_norm_stats(Dataset& ds) {
  std::vector<const MotionSequence*> train;
  for (size_t i = 0; i < ds.items.size(); ++i) {
    if (ds.split[i] == Split::kTrain) train.push_back(&ds.items[i].motion);
  }
  ds.norm_stats = NormStats::compute(train);
  ds.has_norm_stats = true;
}

}  // namespace mogo
