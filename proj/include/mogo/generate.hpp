#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/gateway.hpp"
#include "mogo/hct.hpp"
#include "mogo/motion.hpp"
#include "mogo/rvq.hpp"
#include "mogo/text_embed.hpp"

namespace mogo {

enum class SamplePolicy { kGreedy, kTopK };

struct GenRequest {
  std::string prompt;
  int target_frames = 60;  // length restriction: generation stops here
  SamplePolicy policy = SamplePolicy::kGreedy;
  int top_k = 10;
  float temperature = 1.0f;
  uint64_t seed = 7;
  bool gateway_enabled = false;
  float fps = 20.0f;

  void validate() const {
    if (target_frames < 1) throw std::invalid_argument("generate: target_frames must be >= 1");
    if (policy == SamplePolicy::kTopK && temperature <= 0.0f) {
      throw std::invalid_argument("generate: temperature must be > 0 when sampling");
    }
    if (policy == SamplePolicy::kTopK && top_k < 1) {
      throw std::invalid_argument("generate: top_k must be >= 1");
    }
  }
};

struct GenResult {
  TokenGrid grid;
  MotionSequence motion;  // denormalized
  std::string final_prompt;
  std::string gateway_backend;
  bool prompt_rewritten = false;
  std::vector<double> frame_seconds;               // cumulative isn't stored; per-position cost
  std::vector<std::vector<double>> layer_seconds;  // [position][layer]
  std::vector<std::string> warnings;
};

// on_frame(position, ids for all layers at that position, decoded frame in
// denormalized units). Fires in position order before later positions exist.
using StreamCallback =
    std::function<void(int, const std::vector<int32_t>&, const std::vector<float>&)>;

// Greedy: argmax with lowest-index ties. Top-k: softmax at the given
// temperature over the k best logits (k clamps to K), renormalized.
inline int32_t sample_token(const std::vector<float>& logits, SamplePolicy policy, int top_k,
                            float temperature, Rng& rng) {
  const int k_total = static_cast<int>(logits.size());
  if (k_total < 1) throw std::invalid_argument("sample_token: empty logits");
  if (policy == SamplePolicy::kGreedy) {
    int best = 0;
    for (int c = 1; c < k_total; ++c) {
      if (logits[static_cast<size_t>(c)] > logits[static_cast<size_t>(best)]) best = c;
    }
    return best;
  }
  if (temperature <= 0.0f) throw std::invalid_argument("sample_token: temperature must be > 0");
  const int k = std::min(std::max(top_k, 1), k_total);
  std::vector<int> order(static_cast<size_t>(k_total));
  for (int i = 0; i < k_total; ++i) order[static_cast<size_t>(i)] = i;
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (logits[static_cast<size_t>(a)] != logits[static_cast<size_t>(b)]) {
      return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
    }
    return a < b;
  });
  double mx = logits[static_cast<size_t>(order[0])];
  std::vector<double> probs(static_cast<size_t>(k));
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    probs[static_cast<size_t>(i)] =
        std::exp((static_cast<double>(logits[static_cast<size_t>(order[static_cast<size_t>(i)])]) - mx) /
                 temperature);
    total += probs[static_cast<size_t>(i)];
  }
  const double draw = rng.uniform() * total;
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += probs[static_cast<size_t>(i)];
    if (draw < acc) return order[static_cast<size_t>(i)];
  }
  return order[static_cast<size_t>(k - 1)];
}

// Streaming per-position inference: for each position j, sub-transformers
// 0..V each consume the cumulative embeddings of positions < j and emit
// position j's token for their layer; all V+1 tokens exist before j+1
// starts. Decode happens on the causal decoder so streamed frames equal the
// final batch decode.
inline GenResult generate(const GenRequest& req, const HctModel& model, const RvqTokenizer& tok,
                          const NormStats& stats, PromptGateway* gateway = nullptr,
                          const StreamCallback* on_frame = nullptr) {
  req.validate();
  if (model.config().codebook_size != tok.config().codebook_size) {
    throw std::invalid_argument("generate: model and tokenizer codebook sizes differ");
  }
  if (model.config().num_quant_layers != tok.config().num_layers) {
    throw std::invalid_argument("generate: model and tokenizer quantization layers differ");
  }
  GenResult res;
  res.final_prompt = req.prompt;
  if (req.gateway_enabled && gateway) {
    PromptDecision d = gateway->process(req.prompt);
    res.gateway_backend = d.backend_used;
    if (!d.warning.empty()) res.warnings.push_back(d.warning);
    if (d.needs_rewrite) {
      res.final_prompt = d.rewritten_text;
      res.prompt_rewritten = true;
    }
  }
  const HctConfig& cfg = model.config();
  if (req.target_frames > cfg.max_relative_distance) {
    res.warnings.push_back("target_frames " + std::to_string(req.target_frames) +
                           " exceeds max_relative_distance " +
                           std::to_string(cfg.max_relative_distance) +
                           "; distances clamp to the table edge");
  }

  NoGrad ng;
  const TextEmbedding p = model.embed_prompt(res.final_prompt);
  Tensor p_proj = model.project_text(p);
  Rng rng(req.seed);

  res.grid.length = req.target_frames;
  res.grid.num_layers = cfg.num_quant_layers;
  res.grid.ids.assign(static_cast<size_t>(req.target_frames) * cfg.num_quant_layers, 0);
  res.layer_seconds.assign(static_cast<size_t>(req.target_frames),
                           std::vector<double>(static_cast<size_t>(cfg.num_quant_layers), 0.0));
  res.frame_seconds.assign(static_cast<size_t>(req.target_frames), 0.0);

  using Clock = std::chrono::steady_clock;
  for (int j = 0; j < req.target_frames; ++j) {
    const auto frame_start = Clock::now();
    std::vector<int32_t> ids_at_j(static_cast<size_t>(cfg.num_quant_layers));
    for (int v = 0; v < cfg.num_quant_layers; ++v) {
      const auto layer_start = Clock::now();
      Tensor input = model.build_layer_input(p_proj, v, res.grid, j);
      Tensor logits = model.forward_layer(v, input, false, nullptr);
      const int last = logits.dim(0) - 1;
      std::vector<float> row(logits.values().begin() + static_cast<size_t>(last) * logits.dim(1),
                             logits.values().begin() +
                                 static_cast<size_t>(last + 1) * logits.dim(1));
      const int32_t id = sample_token(row, req.policy, req.top_k, req.temperature, rng);
      res.grid.at(j, v) = id;
      ids_at_j[static_cast<size_t>(v)] = id;
      res.layer_seconds[static_cast<size_t>(j)][static_cast<size_t>(v)] =
          std::chrono::duration<double>(Clock::now() - layer_start).count();
    }
    if (on_frame && *on_frame) {
      // dequantize + decode the available prefix; the decoder is causal so
      // row j is final the moment it is produced
      TokenGrid prefix = res.grid;
      prefix.length = j + 1;
      prefix.ids.resize(static_cast<size_t>(j + 1) * cfg.num_quant_layers);
      const std::vector<float> lat = dequantize(prefix, tok.codebook());
      MotionSequence decoded = tok.decode(lat, j + 1, req.fps);
      MotionSequence denorm = denormalize(decoded, stats);
      std::vector<float> frame(denorm.frames.begin() + static_cast<size_t>(j) * denorm.dim,
                               denorm.frames.begin() + static_cast<size_t>(j + 1) * denorm.dim);
      (*on_frame)(j, ids_at_j, frame);
    }
    res.frame_seconds[static_cast<size_t>(j)] =
        std::chrono::duration<double>(Clock::now() - frame_start).count();
  }

  const std::vector<float> latent = dequantize(res.grid, tok.codebook());
  MotionSequence decoded = tok.decode(latent, req.target_frames, req.fps);
  res.motion = denormalize(decoded, stats);
  return res;
}

}  // namespace mogo
