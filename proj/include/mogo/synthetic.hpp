#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/motion.hpp"
#include "mogo/rng.hpp"

namespace mogo {

// Sinusoidal limb-oscillation family used in place of a mocap dataset.
// Frequencies live in [0.5, 3.0]; the family median 1.75 separates "fast"
// from "slowly" in the captions. Amplitudes live in [0.4, 1.6] with 1.0
// separating "widely" from "slightly".
namespace synth {

constexpr float kFreqLo = 0.5f;
constexpr float kFreqHi = 3.0f;
constexpr float kFreqMedian = 0.5f * (kFreqLo + kFreqHi);
constexpr float kAmpLo = 0.4f;
constexpr float kAmpHi = 1.6f;
constexpr float kAmpMedian = 0.5f * (kAmpLo + kAmpHi);

inline const char* pattern_word(int pattern) {
  static const char* words[4] = {"sways", "bounces", "twists", "stretches"};
  return words[pattern & 3];
}

inline const char* direction_word(int direction) {
  static const char* words[4] = {"left", "right", "forward", "backward"};
  return words[direction & 3];
}

inline std::string caption(const SynthParams& p, const char* subject) {
  std::string s(subject);
  s += ' ';
  s += pattern_word(p.pattern);
  s += p.frequency > kFreqMedian ? " fast" : " slowly";
  s += " and drifts ";
  s += direction_word(p.direction);
  s += p.amplitude > kAmpMedian ? ", swinging widely" : ", swinging slightly";
  return s;
}

inline MotionSequence render(const SynthParams& p, int frames, int dim, float fps) {
  MotionSequence m;
  m.frame_count = frames;
  m.dim = dim;
  m.fps = fps;
  m.frames.resize(static_cast<size_t>(frames) * dim);
  const float drift_x = (p.direction == 0) ? -0.4f : (p.direction == 1) ? 0.4f : 0.0f;
  const float drift_z = (p.direction == 2) ? 0.4f : (p.direction == 3) ? -0.4f : 0.0f;
  const float w = 2.0f * 3.14159265f * p.frequency;
  for (int f = 0; f < frames; ++f) {
    const float t = static_cast<float>(f) / fps;
    m.at(f, 0) = drift_x * t;
    m.at(f, 1) = drift_z * t;
    for (int c = 2; c < dim; ++c) {
      const float channel_phase = p.phase + 0.7f * static_cast<float>(c);
      const float x = w * t + channel_phase;
      float v = 0.0f;
      switch (p.pattern) {
        case 0: v = std::sin(x); break;
        case 1: v = std::fabs(std::sin(x)) * 2.0f - 1.0f; break;
        case 2: v = (c % 2 == 0) ? std::sin(x) : std::cos(x); break;
        default: v = std::sin(x) + 0.3f * std::sin(3.0f * x); break;
      }
      m.at(f, c) = p.amplitude * v * (0.5f + 0.5f / (1.0f + 0.15f * static_cast<float>(c)));
    }
  }
  return m;
}

}  // namespace synth

// Procedural dataset: deterministic in the seed, captions are a pure
// function of the drawn parameters. With distinct_captions the discrete
// parameter cell (pattern, speed class, direction, amplitude class) is
// sampled without replacement so no two items share a caption (max 64).
inline Dataset make_synthetic_dataset(uint64_t seed, int count, int frames_min, int frames_max,
                                      int dim, float fps = 20.0f,
                                      bool distinct_captions = false) {
  if (count < 20) throw std::invalid_argument("synthetic dataset needs count >= 20");
  if (dim < 4) throw std::invalid_argument("synthetic dataset needs dim >= 4");
  if (frames_min < 1 || frames_max < frames_min) {
    throw std::invalid_argument("synthetic dataset: bad frame range");
  }
  if (distinct_captions && count > 64) {
    throw std::invalid_argument("distinct captions support at most 64 items");
  }
  Rng rng(seed);
  Dataset ds;
  ds.items.reserve(static_cast<size_t>(count));
  ds.synth.reserve(static_cast<size_t>(count));

  std::vector<int> cells;
  if (distinct_captions) {
    cells.resize(64);
    for (int i = 0; i < 64; ++i) cells[static_cast<size_t>(i)] = i;
    for (int i = 63; i > 0; --i) {
      const int j = rng.below_int(i + 1);
      std::swap(cells[static_cast<size_t>(i)], cells[static_cast<size_t>(j)]);
    }
  }

  for (int i = 0; i < count; ++i) {
    SynthParams p;
    if (distinct_captions) {
      const int cell = cells[static_cast<size_t>(i)];
      p.pattern = cell & 3;
      p.direction = (cell >> 2) & 3;
      const bool fast = (cell >> 4) & 1;
      const bool wide = (cell >> 5) & 1;
      p.frequency = fast ? rng.uniform(synth::kFreqMedian + 0.05f, synth::kFreqHi)
                         : rng.uniform(synth::kFreqLo, synth::kFreqMedian - 0.05f);
      p.amplitude = wide ? rng.uniform(synth::kAmpMedian + 0.05f, synth::kAmpHi)
                         : rng.uniform(synth::kAmpLo, synth::kAmpMedian - 0.05f);
    } else {
      p.pattern = rng.below_int(4);
      p.direction = rng.below_int(4);
      p.frequency = rng.uniform(synth::kFreqLo, synth::kFreqHi);
      p.amplitude = rng.uniform(synth::kAmpLo, synth::kAmpHi);
    }
    p.phase = rng.uniform(0.0f, 2.0f * 3.14159265f);
    const int frames = frames_min + rng.below_int(frames_max - frames_min + 1);

    DatasetItem item;
    item.motion = synth::render(p, frames, dim, fps);
    item.captions.push_back(synth::caption(p, "a figure"));
    item.captions.push_back(synth::caption(p, "a person"));
    ds.items.push_back(std::move(item));
    ds.synth.push_back(p);
  }
  return ds;
}

}  // namespace mogo
