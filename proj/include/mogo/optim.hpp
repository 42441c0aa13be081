#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/tensor.hpp"

namespace mogo {

struct CosineSchedule {
  float lr_max = 2.5e-5f;
  float lr_min = 3e-6f;
  int64_t total_steps = 1;
};

// lr_min + 0.5*(lr_max-lr_min)*(1+cos(pi*step/total_steps)); steps outside
// [0, total_steps] clamp to the endpoints.
inline float cosine_lr(const CosineSchedule& s, int64_t step) {
  if (s.total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be > 0");
  if (s.lr_min > s.lr_max) throw std::invalid_argument("cosine_lr: lr_min > lr_max");
  const int64_t t = std::max<int64_t>(0, std::min(step, s.total_steps));
  const double phase = 3.14159265358979323846 * static_cast<double>(t) / s.total_steps;
  return static_cast<float>(s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(phase)));
}

// AdamW with decoupled weight decay. Moment buffers are lazily shaped to the
// parameter list on the first step and must match thereafter.
struct AdamW {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;
  int64_t step_count = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  void step(std::vector<Tensor>& params) {
    if (m.empty()) {
      m.resize(params.size());
      v.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].values().size(), 0.0f);
        v[i].assign(params[i].values().size(), 0.0f);
      }
    }
    if (m.size() != params.size()) {
      throw std::invalid_argument("adamw: parameter count changed between steps");
    }
    step_count += 1;
    const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step_count));
    const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step_count));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i];
      if (!p.requires_grad()) {
        throw std::invalid_argument("adamw: parameter " + std::to_string(i) + " has no grad");
      }
      auto& pv = p.values();
      const auto& pg = p.grad();
      if (m[i].size() != pv.size()) {
        throw std::invalid_argument("adamw: moment buffer shape mismatch at parameter " +
                                    std::to_string(i));
      }
      float* mi = m[i].data();
      float* vi = v[i].data();
      for (size_t j = 0; j < pv.size(); ++j) {
        const float g = pg[j];
        mi[j] = beta1 * mi[j] + (1.0f - beta1) * g;
        vi[j] = beta2 * vi[j] + (1.0f - beta2) * g * g;
        const float mhat = mi[j] / bc1;
        const float vhat = vi[j] / bc2;
        pv[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * pv[j]);
      }
    }
  }
};

// Scales all grads so their global L2 norm is at most max_norm. Returns the
// pre-clip norm.
inline float clip_grad_norm(std::vector<Tensor>& params, float max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const float norm = static_cast<float>(std::sqrt(sq));
  if (norm > max_norm && norm > 0.0f) {
    const float scale = max_norm / norm;
    for (auto& p : params) {
      for (float& g : p.grad()) g *= scale;
    }
  }
  return norm;
}

inline void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace mogo
