#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mogo/tensor.hpp"

namespace mogo {

// Row-wise softmax over the last dimension of (n, d).
inline Tensor softmax(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("softmax: expected rank 2, got " + shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<float> out(a.values());
  for (int r = 0; r < rows; ++r) {
    float* row = out.data() + static_cast<size_t>(r) * cols;
    float mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      denom += row[c];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int c = 0; c < cols; ++c) row[c] *= inv;
  }
  return make_op("softmax", a.shape(), std::move(out), {a}, [rows, cols](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    for (int r = 0; r < rows; ++r) {
      const float* y = nd.values.data() + static_cast<size_t>(r) * cols;
      const float* g = nd.grad.data() + static_cast<size_t>(r) * cols;
      float dot = 0.0f;
      for (int c = 0; c < cols; ++c) dot += y[c] * g[c];
      float* dx = p->grad.data() + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) dx[c] += y[c] * (g[c] - dot);
    }
  });
}

// Causal masked softmax over an (n, n) score matrix: row i distributes weight
// over columns 0..i only; future columns get exactly zero weight.
inline Tensor masked_softmax_causal(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ShapeError("masked_softmax_causal: expected square matrix, got " + shape_str(a.shape()));
  }
  const int n = a.dim(0);
  std::vector<float> out(static_cast<size_t>(n) * n, 0.0f);
  const auto& av = a.values();
  for (int r = 0; r < n; ++r) {
    const float* row = av.data() + static_cast<size_t>(r) * n;
    float mx = row[0];
    for (int c = 1; c <= r; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    float* orow = out.data() + static_cast<size_t>(r) * n;
    for (int c = 0; c <= r; ++c) {
      orow[c] = std::exp(row[c] - mx);
      denom += orow[c];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int c = 0; c <= r; ++c) orow[c] *= inv;
  }
  return make_op("masked_softmax_causal", a.shape(), std::move(out), {a}, [n](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    for (int r = 0; r < n; ++r) {
      const float* y = nd.values.data() + static_cast<size_t>(r) * n;
      const float* g = nd.grad.data() + static_cast<size_t>(r) * n;
      float dot = 0.0f;
      for (int c = 0; c <= r; ++c) dot += y[c] * g[c];
      float* dx = p->grad.data() + static_cast<size_t>(r) * n;
      for (int c = 0; c <= r; ++c) dx[c] += y[c] * (g[c] - dot);
    }
  });
}

// Per-row layer normalization of (n, d) with learned gain/bias.
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        float eps = 1e-5f) {
  if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.dim(1) ||
      beta.dim(0) != x.dim(1)) {
    throw ShapeError("layernorm: incompatible shapes " + shape_str(x.shape()) + " / " +
                     shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
  }
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<float> out(static_cast<size_t>(rows) * cols);
  std::vector<float> mean_cache(static_cast<size_t>(rows));
  std::vector<float> inv_std_cache(static_cast<size_t>(rows));
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (int r = 0; r < rows; ++r) {
    const float* row = xv.data() + static_cast<size_t>(r) * cols;
    double m = 0.0;
    for (int c = 0; c < cols; ++c) m += row[c];
    m /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = row[c] - m;
      var += d * d;
    }
    var /= cols;
    const float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps));
    mean_cache[static_cast<size_t>(r)] = static_cast<float>(m);
    inv_std_cache[static_cast<size_t>(r)] = inv_std;
    float* orow = out.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      const float xhat = (row[c] - static_cast<float>(m)) * inv_std;
      orow[c] = xhat * gv[static_cast<size_t>(c)] + bv[static_cast<size_t>(c)];
    }
  }
  return make_op(
      "layernorm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, cols, mean_cache, inv_std_cache](detail::Node& nd) {
        auto& px = nd.parents[0];
        auto& pg = nd.parents[1];
        auto& pb = nd.parents[2];
        for (int r = 0; r < rows; ++r) {
          const float m = mean_cache[static_cast<size_t>(r)];
          const float is = inv_std_cache[static_cast<size_t>(r)];
          const float* xrow = px->values.data() + static_cast<size_t>(r) * cols;
          const float* g = nd.grad.data() + static_cast<size_t>(r) * cols;
          // dxhat = g * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
          float sum_dxhat = 0.0f, sum_dxhat_xhat = 0.0f;
          for (int c = 0; c < cols; ++c) {
            const float xhat = (xrow[c] - m) * is;
            const float dxhat = g[c] * pg->values[static_cast<size_t>(c)];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            if (pg->requires_grad) pg->grad[static_cast<size_t>(c)] += g[c] * xhat;
            if (pb->requires_grad) pb->grad[static_cast<size_t>(c)] += g[c];
          }
          if (px->requires_grad) {
            const float inv_n = 1.0f / cols;
            float* dx = px->grad.data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) {
              const float xhat = (xrow[c] - m) * is;
              const float dxhat = g[c] * pg->values[static_cast<size_t>(c)];
              dx[c] += (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat) * is;
            }
          }
        }
      });
}

// 1-D convolution on (channels_in, length) with weight (c_out, c_in, k).
// pad_left/pad_right are zero padding; stride 1 with symmetric padding
// (k-1)/2 preserves length.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                     int pad_left, int pad_right) {
  if (x.rank() != 2 || w.rank() != 3 || x.dim(0) != w.dim(1)) {
    throw ShapeError("conv1d: incompatible shapes input " + shape_str(x.shape()) + " weight " +
                     shape_str(w.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != w.dim(0)) {
    throw ShapeError("conv1d: bias shape " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
  const int c_in = x.dim(0), len = x.dim(1);
  const int c_out = w.dim(0), k = w.dim(2);
  const int padded = len + pad_left + pad_right;
  if (padded < k) throw ShapeError("conv1d: kernel longer than padded input");
  const int out_len = (padded - k) / stride + 1;
  std::vector<float> out(static_cast<size_t>(c_out) * out_len);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = bias.values();
  for (int o = 0; o < c_out; ++o) {
    float* orow = out.data() + static_cast<size_t>(o) * out_len;
    for (int t = 0; t < out_len; ++t) orow[t] = bv[static_cast<size_t>(o)];
    for (int i = 0; i < c_in; ++i) {
      const float* xrow = xv.data() + static_cast<size_t>(i) * len;
      const float* wrow = wv.data() + (static_cast<size_t>(o) * c_in + i) * k;
      for (int dk = 0; dk < k; ++dk) {
        const float wgt = wrow[dk];
        if (wgt == 0.0f) continue;
        for (int t = 0; t < out_len; ++t) {
          const int src = t * stride + dk - pad_left;
          if (src >= 0 && src < len) orow[t] += wgt * xrow[src];
        }
      }
    }
  }
  return make_op("conv1d", {c_out, out_len}, std::move(out), {x, w, bias},
                 [c_in, len, c_out, k, stride, pad_left, out_len](detail::Node& nd) {
                   auto& px = nd.parents[0];
                   auto& pw = nd.parents[1];
                   auto& pb = nd.parents[2];
                   for (int o = 0; o < c_out; ++o) {
                     const float* g = nd.grad.data() + static_cast<size_t>(o) * out_len;
                     if (pb->requires_grad) {
                       float acc = 0.0f;
                       for (int t = 0; t < out_len; ++t) acc += g[t];
                       pb->grad[static_cast<size_t>(o)] += acc;
                     }
                     for (int i = 0; i < c_in; ++i) {
                       const float* xrow = px->values.data() + static_cast<size_t>(i) * len;
                       const float* wrow =
                           pw->values.data() + (static_cast<size_t>(o) * c_in + i) * k;
                       float* dxrow =
                           px->requires_grad ? px->grad.data() + static_cast<size_t>(i) * len
                                             : nullptr;
                       float* dwrow =
                           pw->requires_grad
                               ? pw->grad.data() + (static_cast<size_t>(o) * c_in + i) * k
                               : nullptr;
                       for (int dk = 0; dk < k; ++dk) {
                         float wacc = 0.0f;
                         const float wgt = wrow[dk];
                         for (int t = 0; t < out_len; ++t) {
                           const int src = t * stride + dk - pad_left;
                           if (src < 0 || src >= len) continue;
                           wacc += g[t] * xrow[src];
                           if (dxrow) dxrow[src] += g[t] * wgt;
                         }
                         if (dwrow) dwrow[dk] += wacc;
                       }
                     }
                   }
                 });
}

// table (K, d) indexed by ids -> (n, d); backward scatter-adds into the table.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  }
  const int k = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  std::vector<float> out(static_cast<size_t>(n) * d);
  const auto& tv = table.values();
  for (int r = 0; r < n; ++r) {
    const int32_t id = ids[static_cast<size_t>(r)];
    if (id < 0 || id >= k) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(k) + ")");
    }
    std::copy_n(tv.data() + static_cast<size_t>(id) * d, d, out.data() + static_cast<size_t>(r) * d);
  }
  return make_op("embedding_lookup", {n, d}, std::move(out), {table}, [ids, d](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    for (size_t r = 0; r < ids.size(); ++r) {
      const float* g = nd.grad.data() + r * static_cast<size_t>(d);
      float* dst = p->grad.data() + static_cast<size_t>(ids[r]) * d;
      for (int c = 0; c < d; ++c) dst[c] += g[c];
    }
  });
}

enum class Reduction { kMean, kSum };

// Cross entropy from logits (n, K) against integer targets. weights[r]==0
// masks row r out entirely (its gradient is exactly zero).
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                            Reduction reduction = Reduction::kMean,
                            const std::vector<float>& weights = {}) {
  if (logits.rank() != 2 || static_cast<int>(targets.size()) != logits.dim(0)) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (!weights.empty() && weights.size() != targets.size()) {
    throw ShapeError("cross_entropy: weights length mismatch");
  }
  const int n = logits.dim(0), k = logits.dim(1);
  const auto& lv = logits.values();
  std::vector<float> log_probs(static_cast<size_t>(n) * k);
  double total = 0.0;
  double weight_sum = 0.0;
  for (int r = 0; r < n; ++r) {
    const int32_t t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= k) {
      throw ShapeError("cross_entropy: target " + std::to_string(t) + " out of range [0," +
                       std::to_string(k) + ")");
    }
    const float wr = weights.empty() ? 1.0f : weights[static_cast<size_t>(r)];
    const float* row = lv.data() + static_cast<size_t>(r) * k;
    float mx = row[0];
    for (int c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < k; ++c) denom += std::exp(static_cast<double>(row[c]) - mx);
    const double log_denom = std::log(denom) + mx;
    float* lp = log_probs.data() + static_cast<size_t>(r) * k;
    for (int c = 0; c < k; ++c) lp[c] = static_cast<float>(row[c] - log_denom);
    total += wr * -lp[t];
    weight_sum += wr;
  }
  const float norm = reduction == Reduction::kMean
                         ? (weight_sum > 0.0 ? static_cast<float>(1.0 / weight_sum) : 0.0f)
                         : 1.0f;
  return make_op(
      "cross_entropy", {1}, {static_cast<float>(total) * norm}, {logits},
      [targets, weights, log_probs, n, k, norm](detail::Node& nd) {
        auto& p = nd.parents[0];
        if (!p->requires_grad) return;
        const float g = nd.grad[0] * norm;
        for (int r = 0; r < n; ++r) {
          const float wr = weights.empty() ? 1.0f : weights[static_cast<size_t>(r)];
          if (wr == 0.0f) continue;
          const float* lp = log_probs.data() + static_cast<size_t>(r) * k;
          float* dst = p->grad.data() + static_cast<size_t>(r) * k;
          const int32_t t = targets[static_cast<size_t>(r)];
          for (int c = 0; c < k; ++c) {
            const float softmax_c = std::exp(lp[c]);
            dst[c] += g * wr * (softmax_c - (c == t ? 1.0f : 0.0f));
          }
        }
      });
}

// Inverted dropout; identity when not training or rate == 0. The mask is
// drawn from the caller's rng so training stays reproducible.
inline Tensor dropout(const Tensor& x, float rate, Rng& rng, bool training) {
  if (rate < 0.0f || rate >= 1.0f) throw ShapeError("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0f) return x;
  std::vector<float> mask(x.values().size());
  const float scale = 1.0f / (1.0f - rate);
  for (auto& m : mask) m = (rng.uniform() < rate) ? 0.0f : scale;
  std::vector<float> out(x.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op("dropout", x.shape(), std::move(out), {x}, [mask](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    for (size_t i = 0; i < nd.grad.size(); ++i) p->grad[i] += nd.grad[i] * mask[i];
  });
}

// Relative-position score term: S[i][j] = q[i] . p[min(i-j, rows(p)-1)] for
// j <= i, 0 elsewhere (future entries are masked downstream). q is (n, dh),
// p holds per-distance key projections, distance 0 first.
inline Tensor rel_pos_scores(const Tensor& q, const Tensor& p) {
  if (q.rank() != 2 || p.rank() != 2 || q.dim(1) != p.dim(1)) {
    throw ShapeError("rel_pos_scores: incompatible shapes " + shape_str(q.shape()) + " vs " +
                     shape_str(p.shape()));
  }
  const int n = q.dim(0), dh = q.dim(1), dist_rows = p.dim(0);
  std::vector<float> out(static_cast<size_t>(n) * n, 0.0f);
  const auto& qv = q.values();
  const auto& pv = p.values();
  for (int i = 0; i < n; ++i) {
    const float* qi = qv.data() + static_cast<size_t>(i) * dh;
    float* orow = out.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j <= i; ++j) {
      const int delta = std::min(i - j, dist_rows - 1);
      const float* pd = pv.data() + static_cast<size_t>(delta) * dh;
      float acc = 0.0f;
      for (int c = 0; c < dh; ++c) acc += qi[c] * pd[c];
      orow[j] = acc;
    }
  }
  return make_op("rel_pos_scores", {n, n}, std::move(out), {q, p},
                 [n, dh, dist_rows](detail::Node& nd) {
                   auto& pq = nd.parents[0];
                   auto& pp = nd.parents[1];
                   for (int i = 0; i < n; ++i) {
                     const float* g = nd.grad.data() + static_cast<size_t>(i) * n;
                     const float* qi = pq->values.data() + static_cast<size_t>(i) * dh;
                     float* dq = pq->requires_grad
                                     ? pq->grad.data() + static_cast<size_t>(i) * dh
                                     : nullptr;
                     for (int j = 0; j <= i; ++j) {
                       const float gij = g[j];
                       if (gij == 0.0f) continue;
                       const int delta = std::min(i - j, dist_rows - 1);
                       const float* pd = pp->values.data() + static_cast<size_t>(delta) * dh;
                       if (dq) {
                         for (int c = 0; c < dh; ++c) dq[c] += gij * pd[c];
                       }
                       if (pp->requires_grad) {
                         float* dp = pp->grad.data() + static_cast<size_t>(delta) * dh;
                         for (int c = 0; c < dh; ++c) dp[c] += gij * qi[c];
                       }
                     }
                   }
                 });
}

}  // namespace mogo
