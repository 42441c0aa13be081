#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/motion.hpp"
#include "mogo/nn.hpp"
#include "mogo/optim.hpp"
#include "mogo/rng.hpp"
#include "mogo/serialize.hpp"
#include "mogo/tensor.hpp"

namespace mogo {

struct RvqConfig {
  int num_layers = 3;      // V+1 quantization layers
  int codebook_size = 256; // K codes per layer
  int code_dim = 32;       // d
  int input_dim = 16;      // D motion channels
  float beta = 0.02f;      // commitment weight
  float ema_decay = 0.99f;
  int reset_window = 256;           // batches per dead-code sweep
  int reset_usage_threshold = 1;    // usage below this over a window -> reset
  int kernel = 3;
  int res_blocks = 2;
  int hidden = 0;  // conv width; 0 means code_dim
  float dropout = 0.2f;

  int width() const { return hidden > 0 ? hidden : code_dim; }

  void validate() const {
    if (num_layers < 1) throw std::invalid_argument("rvq: num_layers must be >= 1");
    if (codebook_size < 2) throw std::invalid_argument("rvq: codebook_size must be >= 2");
    if (code_dim < 1) throw std::invalid_argument("rvq: code_dim must be >= 1");
    if (input_dim < 1) throw std::invalid_argument("rvq: input_dim must be >= 1");
    if (beta <= 0.0f) throw std::invalid_argument("rvq: beta must be > 0");
    if (ema_decay <= 0.0f || ema_decay >= 1.0f) {
      throw std::invalid_argument("rvq: ema_decay must be in (0,1)");
    }
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("rvq: kernel must be odd");
  }
};

// n positions x (V+1) layers of token ids; layer 0 is the base sequence.
struct TokenGrid {
  int length = 0;
  int num_layers = 0;
  std::vector<int32_t> ids;  // position-major: ids[pos * num_layers + layer]

  int32_t& at(int pos, int layer) { return ids[static_cast<size_t>(pos) * num_layers + layer]; }
  int32_t at(int pos, int layer) const {
    return ids[static_cast<size_t>(pos) * num_layers + layer];
  }

  std::vector<int32_t> layer_ids(int layer, int upto_pos) const {
    std::vector<int32_t> out(static_cast<size_t>(upto_pos));
    for (int p = 0; p < upto_pos; ++p) out[static_cast<size_t>(p)] = at(p, layer);
    return out;
  }
};

// MGT1: "MGT1" | u32 n | u32 layers | n*layers little-endian u32 ids.
inline void save_token_grid(const TokenGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("MGT1", 4);
  io::write_u32(os, static_cast<uint32_t>(grid.length));
  io::write_u32(os, static_cast<uint32_t>(grid.num_layers));
  for (int32_t id : grid.ids) io::write_u32(os, static_cast<uint32_t>(id));
  if (!os) throw IoError("write failed: " + path);
}

inline TokenGrid load_token_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open token grid: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MGT1") throw ParseError(path + ": bad MGT1 magic");
  TokenGrid g;
  g.length = static_cast<int>(io::read_u32(is));
  g.num_layers = static_cast<int>(io::read_u32(is));
  if (g.length < 1 || g.num_layers < 1) throw ParseError(path + ": implausible MGT1 header");
  g.ids.resize(static_cast<size_t>(g.length) * g.num_layers);
  for (auto& id : g.ids) id = static_cast<int32_t>(io::read_u32(is));
  return g;
}

// Per-layer quantized values b^v and residuals r^v; residual[0] is the input
// latent, residual[V+1] the final remainder, all exactly as computed in f32
// so r^{v+1} == r^v - b^v reproduces bitwise.
struct ResidualStack {
  int length = 0;
  int dim = 0;
  int num_layers = 0;
  std::vector<std::vector<float>> quantized;  // num_layers entries of n*d
  std::vector<std::vector<float>> residual;   // num_layers+1 entries of n*d

  // sum of quantized layers 0..upto, ascending float order
  std::vector<float> cumulative(int upto) const {
    std::vector<float> out(quantized[0].size(), 0.0f);
    for (int v = 0; v <= upto; ++v) {
      for (size_t i = 0; i < out.size(); ++i) out[i] += quantized[static_cast<size_t>(v)][i];
    }
    return out;
  }
};

struct Codebook {
  int num_layers = 0;
  int size = 0;  // K
  int dim = 0;   // d
  std::vector<std::vector<float>> codes;     // per layer K*d
  std::vector<std::vector<float>> ema_size;  // per layer K
  std::vector<std::vector<float>> ema_sum;   // per layer K*d
  std::vector<std::vector<float>> usage_total;   // lifetime assignment counts
  std::vector<std::vector<float>> usage_window;  // assignments since last sweep
  int batches_since_sweep = 0;
  bool initialized = false;

  static Codebook make(int num_layers, int size, int dim) {
    Codebook cb;
    cb.num_layers = num_layers;
    cb.size = size;
    cb.dim = dim;
    cb.codes.assign(static_cast<size_t>(num_layers),
                    std::vector<float>(static_cast<size_t>(size) * dim, 0.0f));
    cb.ema_size.assign(static_cast<size_t>(num_layers),
                       std::vector<float>(static_cast<size_t>(size), 0.0f));
    cb.ema_sum.assign(static_cast<size_t>(num_layers),
                      std::vector<float>(static_cast<size_t>(size) * dim, 0.0f));
    cb.usage_total.assign(static_cast<size_t>(num_layers),
                          std::vector<float>(static_cast<size_t>(size), 0.0f));
    cb.usage_window.assign(static_cast<size_t>(num_layers),
                           std::vector<float>(static_cast<size_t>(size), 0.0f));
    return cb;
  }

  const float* code(int layer, int id) const {
    return codes[static_cast<size_t>(layer)].data() + static_cast<size_t>(id) * dim;
  }
};

// Nearest code by squared Euclidean distance, ties broken by lowest index.
// Distances accumulate left to right in f32 so an exhaustive oracle using the
// same order reproduces the argmin exactly.
inline int32_t nearest_code(const float* vec, const std::vector<float>& codes, int k, int d) {
  int32_t best = 0;
  float best_dist = 0.0f;
  for (int c = 0; c < k; ++c) {
    const float* code = codes.data() + static_cast<size_t>(c) * d;
    float dist = 0.0f;
    for (int i = 0; i < d; ++i) {
      const float diff = vec[i] - code[i];
      dist += diff * diff;
    }
    if (c == 0 || dist < best_dist) {
      best = c;
      best_dist = dist;
    }
  }
  return best;
}

struct QuantizeResult {
  TokenGrid grid;
  ResidualStack stack;
};

inline QuantizeResult residual_quantize(const std::vector<float>& latent, int length, int dim,
                                        const Codebook& cb) {
  if (dim != cb.dim) {
    throw ShapeError("residual_quantize: latent dim " + std::to_string(dim) +
                     " != codebook dim " + std::to_string(cb.dim));
  }
  if (latent.size() != static_cast<size_t>(length) * dim) {
    throw ShapeError("residual_quantize: latent buffer size mismatch");
  }
  QuantizeResult out;
  out.grid.length = length;
  out.grid.num_layers = cb.num_layers;
  out.grid.ids.assign(static_cast<size_t>(length) * cb.num_layers, 0);
  out.stack.length = length;
  out.stack.dim = dim;
  out.stack.num_layers = cb.num_layers;
  out.stack.quantized.assign(static_cast<size_t>(cb.num_layers),
                             std::vector<float>(latent.size()));
  out.stack.residual.assign(static_cast<size_t>(cb.num_layers) + 1,
                            std::vector<float>(latent.size()));
  out.stack.residual[0] = latent;
  for (int v = 0; v < cb.num_layers; ++v) {
    const auto& r = out.stack.residual[static_cast<size_t>(v)];
    auto& q = out.stack.quantized[static_cast<size_t>(v)];
    auto& r_next = out.stack.residual[static_cast<size_t>(v) + 1];
    const auto& layer_codes = cb.codes[static_cast<size_t>(v)];
    for (int p = 0; p < length; ++p) {
      const float* rv = r.data() + static_cast<size_t>(p) * dim;
      const int32_t id = nearest_code(rv, layer_codes, cb.size, dim);
      out.grid.at(p, v) = id;
      const float* code = layer_codes.data() + static_cast<size_t>(id) * dim;
      float* qv = q.data() + static_cast<size_t>(p) * dim;
      float* rn = r_next.data() + static_cast<size_t>(p) * dim;
      for (int i = 0; i < dim; ++i) {
        qv[i] = code[i];
        rn[i] = rv[i] - code[i];
      }
    }
  }
  return out;
}

// Sum of codebook rows over layers 0..up_to_layer (ascending).
inline std::vector<float> dequantize(const TokenGrid& grid, const Codebook& cb,
                                     int up_to_layer = -1) {
  if (up_to_layer < 0) up_to_layer = cb.num_layers - 1;
  if (up_to_layer >= cb.num_layers || grid.num_layers < up_to_layer + 1) {
    throw ShapeError("dequantize: up_to_layer " + std::to_string(up_to_layer) +
                     " out of range for " + std::to_string(cb.num_layers) + " layers");
  }
  std::vector<float> out(static_cast<size_t>(grid.length) * cb.dim, 0.0f);
  for (int v = 0; v <= up_to_layer; ++v) {
    for (int p = 0; p < grid.length; ++p) {
      const int32_t id = grid.at(p, v);
      if (id < 0 || id >= cb.size) {
        throw ShapeError("dequantize: token id " + std::to_string(id) + " out of range [0," +
                         std::to_string(cb.size) + ") at position " + std::to_string(p) +
                         " layer " + std::to_string(v));
      }
      const float* code = cb.code(v, id);
      float* dst = out.data() + static_cast<size_t>(p) * cb.dim;
      for (int i = 0; i < cb.dim; ++i) dst[i] += code[i];
    }
  }
  return out;
}

// EMA codebook update from one batch of assignments: sizes and sums decay,
// codes become ema_sum / max(ema_size, eps). Usage counters feed dead-code
// sweeps.
inline void ema_update(Codebook& cb, const TokenGrid& grid, const ResidualStack& stack,
                       float decay, float eps = 1e-5f) {
  for (int v = 0; v < cb.num_layers; ++v) {
    std::vector<float> count(static_cast<size_t>(cb.size), 0.0f);
    std::vector<float> sum(static_cast<size_t>(cb.size) * cb.dim, 0.0f);
    const auto& r = stack.residual[static_cast<size_t>(v)];
    for (int p = 0; p < grid.length; ++p) {
      const int32_t id = grid.at(p, v);
      count[static_cast<size_t>(id)] += 1.0f;
      const float* rv = r.data() + static_cast<size_t>(p) * cb.dim;
      float* dst = sum.data() + static_cast<size_t>(id) * cb.dim;
      for (int i = 0; i < cb.dim; ++i) dst[i] += rv[i];
    }
    auto& esize = cb.ema_size[static_cast<size_t>(v)];
    auto& esum = cb.ema_sum[static_cast<size_t>(v)];
    auto& codes = cb.codes[static_cast<size_t>(v)];
    for (int c = 0; c < cb.size; ++c) {
      esize[static_cast<size_t>(c)] =
          decay * esize[static_cast<size_t>(c)] + (1.0f - decay) * count[static_cast<size_t>(c)];
      const float denom = std::max(esize[static_cast<size_t>(c)], eps);
      for (int i = 0; i < cb.dim; ++i) {
        const size_t idx = static_cast<size_t>(c) * cb.dim + i;
        esum[idx] = decay * esum[idx] + (1.0f - decay) * sum[idx];
        codes[idx] = esum[idx] / denom;
      }
      cb.usage_total[static_cast<size_t>(v)][static_cast<size_t>(c)] +=
          count[static_cast<size_t>(c)];
      cb.usage_window[static_cast<size_t>(v)][static_cast<size_t>(c)] +=
          count[static_cast<size_t>(c)];
    }
  }
  cb.batches_since_sweep += 1;
}

// Same EMA step driven by a whole batch of assignments: counts and sums
// aggregate across items, decay applies once.
inline void ema_update_batch(Codebook& cb, const std::vector<QuantizeResult>& batch, float decay,
                             float eps = 1e-5f) {
  for (int v = 0; v < cb.num_layers; ++v) {
    std::vector<float> count(static_cast<size_t>(cb.size), 0.0f);
    std::vector<float> sum(static_cast<size_t>(cb.size) * cb.dim, 0.0f);
    for (const auto& q : batch) {
      const auto& r = q.stack.residual[static_cast<size_t>(v)];
      for (int p = 0; p < q.grid.length; ++p) {
        const int32_t id = q.grid.at(p, v);
        count[static_cast<size_t>(id)] += 1.0f;
        const float* rv = r.data() + static_cast<size_t>(p) * cb.dim;
        float* dst = sum.data() + static_cast<size_t>(id) * cb.dim;
        for (int i = 0; i < cb.dim; ++i) dst[i] += rv[i];
      }
    }
    auto& esize = cb.ema_size[static_cast<size_t>(v)];
    auto& esum = cb.ema_sum[static_cast<size_t>(v)];
    auto& codes = cb.codes[static_cast<size_t>(v)];
    for (int c = 0; c < cb.size; ++c) {
      esize[static_cast<size_t>(c)] =
          decay * esize[static_cast<size_t>(c)] + (1.0f - decay) * count[static_cast<size_t>(c)];
      const float denom = std::max(esize[static_cast<size_t>(c)], eps);
      for (int i = 0; i < cb.dim; ++i) {
        const size_t idx = static_cast<size_t>(c) * cb.dim + i;
        esum[idx] = decay * esum[idx] + (1.0f - decay) * sum[idx];
        codes[idx] = esum[idx] / denom;
      }
      cb.usage_total[static_cast<size_t>(v)][static_cast<size_t>(c)] +=
          count[static_cast<size_t>(c)];
      cb.usage_window[static_cast<size_t>(v)][static_cast<size_t>(c)] +=
          count[static_cast<size_t>(c)];
    }
  }
  cb.batches_since_sweep += 1;
}

// Dead-code reset: once reset_window batches have accumulated, any code whose
// window usage fell below the threshold is replaced by a random row of the
// most recent encoder outputs and its EMA stats are reinitialized. Returns
// the number of codes reset (0 between sweeps).
inline int reset_dead_codes(Codebook& cb, Rng& rng, const std::vector<float>& recent_latents,
                            int window, float usage_threshold) {
  if (cb.batches_since_sweep < window) return 0;
  const int rows = static_cast<int>(recent_latents.size()) / cb.dim;
  if (rows < 1) return 0;
  int resets = 0;
  for (int v = 0; v < cb.num_layers; ++v) {
    auto& usage = cb.usage_window[static_cast<size_t>(v)];
    for (int c = 0; c < cb.size; ++c) {
      if (usage[static_cast<size_t>(c)] < usage_threshold) {
        const int pick = rng.below_int(rows);
        const float* src = recent_latents.data() + static_cast<size_t>(pick) * cb.dim;
        float* dst = cb.codes[static_cast<size_t>(v)].data() + static_cast<size_t>(c) * cb.dim;
        float* esum = cb.ema_sum[static_cast<size_t>(v)].data() + static_cast<size_t>(c) * cb.dim;
        for (int i = 0; i < cb.dim; ++i) {
          dst[i] = src[i];
          esum[i] = src[i];
        }
        cb.ema_size[static_cast<size_t>(v)][static_cast<size_t>(c)] = 1.0f;
        ++resets;
      }
      usage[static_cast<size_t>(c)] = 0.0f;
    }
  }
  cb.batches_since_sweep = 0;
  return resets;
}

// Stride-1 convolutional encoder/decoder around the residual quantizer.
// Encoder pads symmetrically; the decoder is causal (left padding only) so a
// decoded frame never depends on later latents and streaming prefix decodes
// match the full decode bit for bit.
class RvqTokenizer {
 public:
  RvqTokenizer() = default;

  RvqTokenizer(const RvqConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int h = cfg_.width();
    const int k = cfg_.kernel;
    enc_in_w_ = init_conv(h, cfg_.input_dim, k, rng);
    enc_in_b_ = Tensor::zeros({h}, true);
    for (int i = 0; i < cfg_.res_blocks; ++i) {
      enc_blocks_.push_back(make_block(h, k, rng));
    }
    for (int i = 0; i < cfg_.res_blocks; ++i) {
      dec_blocks_.push_back(make_block(h, k, rng));
    }
    dec_out_w_ = init_conv(cfg_.input_dim, h, k, rng);
    dec_out_b_ = Tensor::zeros({cfg_.input_dim}, true);
    codebook_ = Codebook::make(cfg_.num_layers, cfg_.codebook_size, cfg_.code_dim);
  }

  const RvqConfig& config() const { return cfg_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("enc.in.w", enc_in_w_);
    out.emplace_back("enc.in.b", enc_in_b_);
    for (size_t i = 0; i < enc_blocks_.size(); ++i) {
      const std::string p = "enc.block" + std::to_string(i) + ".";
      out.emplace_back(p + "c1.w", enc_blocks_[i].c1_w);
      out.emplace_back(p + "c1.b", enc_blocks_[i].c1_b);
      out.emplace_back(p + "c2.w", enc_blocks_[i].c2_w);
      out.emplace_back(p + "c2.b", enc_blocks_[i].c2_b);
    }
    for (size_t i = 0; i < dec_blocks_.size(); ++i) {
      const std::string p = "dec.block" + std::to_string(i) + ".";
      out.emplace_back(p + "c1.w", dec_blocks_[i].c1_w);
      out.emplace_back(p + "c1.b", dec_blocks_[i].c1_b);
      out.emplace_back(p + "c2.w", dec_blocks_[i].c2_w);
      out.emplace_back(p + "c2.b", dec_blocks_[i].c2_b);
    }
    out.emplace_back("dec.out.w", dec_out_w_);
    out.emplace_back("dec.out.b", dec_out_b_);
    return out;
  }

  // (N, D) normalized motion -> (n == N, d) latent rows.
  Tensor encode(const MotionSequence& seq, bool training = false, Rng* rng = nullptr) const {
    if (!seq.is_normalized) {
      throw std::invalid_argument("encode: motion must be normalized first");
    }
    if (seq.dim != cfg_.input_dim) {
      throw ShapeError("encode: motion has " + std::to_string(seq.dim) + " channels, expected " +
                       std::to_string(cfg_.input_dim));
    }
    Tensor x = Tensor::of({seq.frame_count, seq.dim}, seq.frames);
    return encode_rows(x, training, rng);
  }

  Tensor encode_rows(const Tensor& rows, bool training, Rng* rng) const {
    const int pad = (cfg_.kernel - 1) / 2;
    Tensor x = transpose(rows);  // (D, N)
    x = conv1d(x, enc_in_w_, enc_in_b_, 1, pad, pad);
    x = relu(x);
    for (const auto& b : enc_blocks_) {
      x = run_block(b, x, pad, pad, training, rng);
    }
    return transpose(x);  // (N, d)
  }

  // (n, d) latent rows -> (n, D) normalized motion rows. Causal convs.
  Tensor decode_rows(const Tensor& latent, bool training = false, Rng* rng = nullptr) const {
    const int pad = cfg_.kernel - 1;
    Tensor x = transpose(latent);  // (d, n)
    for (const auto& b : dec_blocks_) {
      x = run_block(b, x, pad, 0, training, rng);
    }
    x = conv1d(x, dec_out_w_, dec_out_b_, 1, pad, 0);
    return transpose(x);
  }

  MotionSequence decode(const std::vector<float>& latent, int length, float fps) const {
    NoGrad ng;
    Tensor lt = Tensor::of({length, cfg_.code_dim}, latent);
    Tensor rows = decode_rows(lt, false, nullptr);
    MotionSequence m;
    m.frame_count = length;
    m.dim = cfg_.input_dim;
    m.fps = fps;
    m.is_normalized = true;
    m.frames = rows.values();
    return m;
  }

  QuantizeResult quantize(const Tensor& latent) const {
    return residual_quantize(latent.values(), latent.dim(0), latent.dim(1), codebook_);
  }

  // Codebooks start from rows of the first training batch's encoder outputs,
  // layer by layer on the running residual.
  void init_codebook_from(const std::vector<float>& latents, Rng& rng) {
    const int rows = static_cast<int>(latents.size()) / cfg_.code_dim;
    if (rows < 1) throw std::invalid_argument("codebook init needs at least one latent row");
    std::vector<float> residual = latents;
    for (int v = 0; v < cfg_.num_layers; ++v) {
      auto& codes = codebook_.codes[static_cast<size_t>(v)];
      for (int c = 0; c < cfg_.codebook_size; ++c) {
        const int pick = rng.below_int(rows);
        const float* src = residual.data() + static_cast<size_t>(pick) * cfg_.code_dim;
        float* dst = codes.data() + static_cast<size_t>(c) * cfg_.code_dim;
        float* esum =
            codebook_.ema_sum[static_cast<size_t>(v)].data() + static_cast<size_t>(c) * cfg_.code_dim;
        for (int i = 0; i < cfg_.code_dim; ++i) {
          dst[i] = src[i];
          esum[i] = src[i];
        }
        codebook_.ema_size[static_cast<size_t>(v)][static_cast<size_t>(c)] = 1.0f;
      }
      // advance the residual past this freshly initialized layer
      for (int p = 0; p < rows; ++p) {
        float* rv = residual.data() + static_cast<size_t>(p) * cfg_.code_dim;
        const int32_t id = nearest_code(rv, codes, cfg_.codebook_size, cfg_.code_dim);
        const float* code = codes.data() + static_cast<size_t>(id) * cfg_.code_dim;
        for (int i = 0; i < cfg_.code_dim; ++i) rv[i] -= code[i];
      }
    }
    codebook_.initialized = true;
  }

  // L1 reconstruction plus beta-weighted commitment pulling the encoder
  // latent toward the code partial sums (layers 1..V of the residual terms);
  // gradients cross the quantizer by the straight-through estimator.
  static Tensor rvq_loss(const Tensor& target_rows, const Tensor& decoded_rows,
                         const Tensor& latent, const ResidualStack& stack, float beta) {
    if (target_rows.shape() != decoded_rows.shape()) {
      throw ShapeError("rvq_loss: target " + shape_str(target_rows.shape()) + " vs decoded " +
                       shape_str(decoded_rows.shape()));
    }
    Tensor loss = l1_loss(decoded_rows, target_rows);
    for (int v = 1; v < stack.num_layers; ++v) {
      Tensor cum = Tensor::of({stack.length, stack.dim}, stack.cumulative(v));
      loss = add(loss, mul_scalar(mse_loss(latent, cum), beta));
    }
    return loss;
  }

  // Decoder input with the straight-through connection: forward value is the
  // quantized sum, gradient flows to the encoder latent unchanged.
  static Tensor straight_through(const Tensor& latent, const ResidualStack& stack) {
    std::vector<float> offset = stack.cumulative(stack.num_layers - 1);
    const auto& lv = latent.values();
    for (size_t i = 0; i < offset.size(); ++i) offset[i] -= lv[i];
    return add(latent, Tensor::of({stack.length, stack.dim}, std::move(offset)));
  }

  void save(const std::string& path, const std::string& extra_header = "") const {
    std::ostringstream header;
    header << "rvq.num_layers = " << cfg_.num_layers << "\n"
           << "rvq.codebook_size = " << cfg_.codebook_size << "\n"
           << "rvq.code_dim = " << cfg_.code_dim << "\n"
           << "rvq.input_dim = " << cfg_.input_dim << "\n"
           << "rvq.beta = " << cfg_.beta << "\n"
           << "rvq.ema_decay = " << cfg_.ema_decay << "\n"
           << "rvq.reset_window = " << cfg_.reset_window << "\n"
           << "rvq.reset_usage_threshold = " << cfg_.reset_usage_threshold << "\n"
           << "rvq.kernel = " << cfg_.kernel << "\n"
           << "rvq.res_blocks = " << cfg_.res_blocks << "\n"
           << "rvq.hidden = " << cfg_.hidden << "\n"
           << "rvq.dropout = " << cfg_.dropout << "\n"
           << extra_header;
    CheckpointWriter w(path, "RVQ1", header.str());
    for (auto& [name, t] : const_cast<RvqTokenizer*>(this)->named_parameters()) w.add(name, t);
    for (int v = 0; v < cfg_.num_layers; ++v) {
      const std::string p = "codebook." + std::to_string(v) + ".";
      w.add_raw(p + "codes", {cfg_.codebook_size, cfg_.code_dim}, codebook_.codes[static_cast<size_t>(v)]);
      w.add_raw(p + "ema_size", {cfg_.codebook_size}, codebook_.ema_size[static_cast<size_t>(v)]);
      w.add_raw(p + "ema_sum", {cfg_.codebook_size, cfg_.code_dim}, codebook_.ema_sum[static_cast<size_t>(v)]);
      w.add_raw(p + "usage_total", {cfg_.codebook_size}, codebook_.usage_total[static_cast<size_t>(v)]);
      w.add_raw(p + "usage_window", {cfg_.codebook_size}, codebook_.usage_window[static_cast<size_t>(v)]);
    }
    w.add_raw("codebook.state", {2},
              {static_cast<float>(codebook_.batches_since_sweep),
               codebook_.initialized ? 1.0f : 0.0f});
    w.finish();
  }

  static RvqTokenizer load(const std::string& path, std::string* header_out = nullptr) {
    const Checkpoint ck = Checkpoint::load(path);
    if (ck.magic != "RVQ1") throw IoError("not a tokenizer checkpoint: " + path);
    RunConfigLike hdr(ck.header);
    RvqConfig cfg;
    cfg.num_layers = hdr.geti("rvq.num_layers");
    cfg.codebook_size = hdr.geti("rvq.codebook_size");
    cfg.code_dim = hdr.geti("rvq.code_dim");
    cfg.input_dim = hdr.geti("rvq.input_dim");
    cfg.beta = hdr.getf("rvq.beta");
    cfg.ema_decay = hdr.getf("rvq.ema_decay");
    cfg.reset_window = hdr.geti("rvq.reset_window");
    cfg.reset_usage_threshold = hdr.geti("rvq.reset_usage_threshold");
    cfg.kernel = hdr.geti("rvq.kernel");
    cfg.res_blocks = hdr.geti("rvq.res_blocks");
    cfg.hidden = hdr.geti("rvq.hidden");
    cfg.dropout = hdr.getf("rvq.dropout");
    Rng tmp(1);
    RvqTokenizer tok(cfg, tmp);
    for (auto& [name, t] : tok.named_parameters()) {
      const TensorRecord& rec = ck.at(name);
      if (rec.shape != t.shape()) {
        throw IoError("checkpoint tensor '" + name + "' has shape mismatch");
      }
      t.values() = rec.data;
    }
    for (int v = 0; v < cfg.num_layers; ++v) {
      const std::string p = "codebook." + std::to_string(v) + ".";
      tok.codebook_.codes[static_cast<size_t>(v)] = ck.at(p + "codes").data;
      tok.codebook_.ema_size[static_cast<size_t>(v)] = ck.at(p + "ema_size").data;
      tok.codebook_.ema_sum[static_cast<size_t>(v)] = ck.at(p + "ema_sum").data;
      tok.codebook_.usage_total[static_cast<size_t>(v)] = ck.at(p + "usage_total").data;
      tok.codebook_.usage_window[static_cast<size_t>(v)] = ck.at(p + "usage_window").data;
    }
    const auto& st = ck.at("codebook.state").data;
    tok.codebook_.batches_since_sweep = static_cast<int>(st[0]);
    tok.codebook_.initialized = st[1] != 0.0f;
    if (header_out) *header_out = ck.header;
    return tok;
  }

 private:
  // minimal key=value reader for checkpoint headers (kept independent of
  // RunConfig's key registry)
  struct RunConfigLike {
    explicit RunConfigLike(const std::string& text) {
      std::istringstream is(text);
      std::string line;
      while (std::getline(is, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
          const auto b = s.find_first_not_of(" \t\r");
          const auto e = s.find_last_not_of(" \t\r");
          return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
      }
    }
    int geti(const std::string& k) const { return std::stoi(at(k)); }
    float getf(const std::string& k) const { return std::stof(at(k)); }
    const std::string& at(const std::string& k) const {
      auto it = kv.find(k);
      if (it == kv.end()) throw IoError("checkpoint header is missing key '" + k + "'");
      return it->second;
    }
    std::map<std::string, std::string> kv;
  };

  struct ConvBlock {
    Tensor c1_w, c1_b;  // k-wide conv
    Tensor c2_w, c2_b;  // pointwise conv
  };

  static Tensor init_conv(int c_out, int c_in, int k, Rng& rng) {
    const float stddev = std::sqrt(2.0f / static_cast<float>(c_in * k));
    return Tensor::randn({c_out, c_in, k}, rng, stddev, true);
  }

  ConvBlock make_block(int h, int k, Rng& rng) {
    ConvBlock b;
    b.c1_w = init_conv(h, h, k, rng);
    b.c1_b = Tensor::zeros({h}, true);
    b.c2_w = init_conv(h, h, 1, rng);
    b.c2_b = Tensor::zeros({h}, true);
    return b;
  }

  Tensor run_block(const ConvBlock& b, const Tensor& x, int pad_left, int pad_right,
                   bool training, Rng* rng) const {
    Tensor t = relu(conv1d(x, b.c1_w, b.c1_b, 1, pad_left, pad_right));
    if (training && cfg_.dropout > 0.0f) {
      if (!rng) throw std::invalid_argument("training forward needs an rng for dropout");
      t = dropout(t, cfg_.dropout, *rng, true);
    }
    t = conv1d(t, b.c2_w, b.c2_b, 1, 0, 0);
    return add(x, t);
  }

  RvqConfig cfg_;
  Tensor enc_in_w_, enc_in_b_;
  std::vector<ConvBlock> enc_blocks_;
  std::vector<ConvBlock> dec_blocks_;
  Tensor dec_out_w_, dec_out_b_;
  Codebook codebook_;
};

}  // namespace mogo
