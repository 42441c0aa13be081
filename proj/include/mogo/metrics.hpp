#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/motion.hpp"
#include "mogo/nn.hpp"
#include "mogo/optim.hpp"
#include "mogo/rvq.hpp"
#include "mogo/tensor.hpp"

#include "json.hpp"

namespace mogo {

// ---- symmetric eigen-decomposition (cyclic Jacobi, double precision) ----

namespace linalg {

// A is d x d symmetric, row-major. Fills eigenvalues and (optionally)
// eigenvectors as columns.
inline void sym_eigen(std::vector<double> a, int d, std::vector<double>& eigvals,
                      std::vector<double>* eigvecs = nullptr) {
  std::vector<double> v;
  if (eigvecs) {
    v.assign(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;
  }
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        off += a[static_cast<size_t>(p) * d + q] * a[static_cast<size_t>(p) * d + q];
      }
    }
    if (off < 1e-24) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = a[static_cast<size_t>(p) * d + q];
        if (std::fabs(apq) < 1e-300) continue;
        const double app = a[static_cast<size_t>(p) * d + p];
        const double aqq = a[static_cast<size_t>(q) * d + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < d; ++k) {
          const double akp = a[static_cast<size_t>(k) * d + p];
          const double akq = a[static_cast<size_t>(k) * d + q];
          a[static_cast<size_t>(k) * d + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * d + q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = a[static_cast<size_t>(p) * d + k];
          const double aqk = a[static_cast<size_t>(q) * d + k];
          a[static_cast<size_t>(p) * d + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * d + k] = s * apk + c * aqk;
        }
        if (eigvecs) {
          for (int k = 0; k < d; ++k) {
            const double vkp = v[static_cast<size_t>(k) * d + p];
            const double vkq = v[static_cast<size_t>(k) * d + q];
            v[static_cast<size_t>(k) * d + p] = c * vkp - s * vkq;
            v[static_cast<size_t>(k) * d + q] = s * vkp + c * vkq;
          }
        }
      }
    }
  }
  eigvals.resize(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) eigvals[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * d + i];
  if (eigvecs) *eigvecs = std::move(v);
}

inline std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b,
                                     int d) {
  std::vector<double> out(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k) {
      const double s = a[static_cast<size_t>(i) * d + k];
      for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] += s * b[static_cast<size_t>(k) * d + j];
    }
  }
  return out;
}

}  // namespace linalg

struct GaussianStats {
  std::vector<double> mean;
  std::vector<double> cov;  // d x d
  int dim = 0;
  int count = 0;
};

// Sample mean and covariance (1/(n-1)) of n x d feature rows.
inline GaussianStats gaussian_stats(const std::vector<float>& feats, int n, int d) {
  if (n < 2) throw std::invalid_argument("gaussian_stats: need at least 2 samples");
  GaussianStats s;
  s.dim = d;
  s.count = n;
  s.mean.assign(static_cast<size_t>(d), 0.0);
  s.cov.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) s.mean[static_cast<size_t>(j)] += feats[static_cast<size_t>(i) * d + j];
  }
  for (auto& m : s.mean) m /= n;
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a) {
      const double da = feats[static_cast<size_t>(i) * d + a] - s.mean[static_cast<size_t>(a)];
      for (int b = a; b < d; ++b) {
        const double db = feats[static_cast<size_t>(i) * d + b] - s.mean[static_cast<size_t>(b)];
        s.cov[static_cast<size_t>(a) * d + b] += da * db;
      }
    }
  }
  const double norm = 1.0 / (n - 1);
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      s.cov[static_cast<size_t>(a) * d + b] *= norm;
      s.cov[static_cast<size_t>(b) * d + a] = s.cov[static_cast<size_t>(a) * d + b];
    }
  }
  return s;
}

// Frechet distance between two Gaussians:
// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with the square-root
// trace computed from the eigenvalues of sqrt(Sa) Sb sqrt(Sa). Eigenvalues in
// (-1e-6 * scale, 0) clamp to zero; anything more negative is a hard error.
inline double frechet_from_stats(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim != b.dim) throw std::invalid_argument("frechet: feature dims differ");
  const int d = a.dim;
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
    mean_term += diff * diff;
  }
  // sqrt(Sa) via eigen-decomposition
  std::vector<double> eigvals, eigvecs;
  linalg::sym_eigen(a.cov, d, eigvals, &eigvecs);
  double scale = 1.0;
  for (int i = 0; i < d; ++i) {
    scale = std::max(scale, std::fabs(eigvals[static_cast<size_t>(i)]));
  }
  std::vector<double> sqrt_a(static_cast<size_t>(d) * d, 0.0);
  for (int k = 0; k < d; ++k) {
    double lam = eigvals[static_cast<size_t>(k)];
    if (lam < 0.0) {
      if (lam < -1e-6 * scale) {
        throw std::runtime_error("frechet: covariance not PSD (eigenvalue " +
                                 std::to_string(lam) + ", scale " + std::to_string(scale) + ")");
      }
      lam = 0.0;
    }
    const double s = std::sqrt(lam);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        sqrt_a[static_cast<size_t>(i) * d + j] +=
            s * eigvecs[static_cast<size_t>(i) * d + k] * eigvecs[static_cast<size_t>(j) * d + k];
      }
    }
  }
  std::vector<double> m = linalg::matmul_sq(linalg::matmul_sq(sqrt_a, b.cov, d), sqrt_a, d);
  // symmetrize against rounding before the second decomposition
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (m[static_cast<size_t>(i) * d + j] + m[static_cast<size_t>(j) * d + i]);
      m[static_cast<size_t>(i) * d + j] = avg;
      m[static_cast<size_t>(j) * d + i] = avg;
    }
  }
  std::vector<double> prod_eigs;
  linalg::sym_eigen(m, d, prod_eigs);
  double prod_scale = 1.0;
  for (double e : prod_eigs) prod_scale = std::max(prod_scale, std::fabs(e));
  double sqrt_trace = 0.0;
  for (double e : prod_eigs) {
    if (e < 0.0) {
      if (e < -1e-6 * prod_scale) {
        throw std::runtime_error("frechet: product square root failed (eigenvalue " +
                                 std::to_string(e) + ", scale " + std::to_string(prod_scale) +
                                 ")");
      }
      e = 0.0;
    }
    sqrt_trace += std::sqrt(e);
  }
  double trace_a = 0.0, trace_b = 0.0;
  for (int i = 0; i < d; ++i) {
    trace_a += a.cov[static_cast<size_t>(i) * d + i];
    trace_b += b.cov[static_cast<size_t>(i) * d + i];
  }
  return mean_term + trace_a + trace_b - 2.0 * sqrt_trace;
}

inline double frechet_distance(const std::vector<float>& feats_a, int n_a,
                               const std::vector<float>& feats_b, int n_b, int d) {
  return frechet_from_stats(gaussian_stats(feats_a, n_a, d), gaussian_stats(feats_b, n_b, d));
}

// ---- feature extraction ----

// Identity pooling: per-channel mean, per-channel std, per-channel mean
// absolute first difference -> 3*D features.
inline std::vector<float> identity_pool_features(const MotionSequence& m) {
  const int d = m.dim;
  std::vector<float> out(static_cast<size_t>(3) * d, 0.0f);
  for (int c = 0; c < d; ++c) {
    double mean = 0.0;
    for (int f = 0; f < m.frame_count; ++f) mean += m.at(f, c);
    mean /= m.frame_count;
    double var = 0.0;
    for (int f = 0; f < m.frame_count; ++f) {
      const double dv = m.at(f, c) - mean;
      var += dv * dv;
    }
    var /= m.frame_count;
    double diff = 0.0;
    for (int f = 1; f < m.frame_count; ++f) diff += std::fabs(m.at(f, c) - m.at(f - 1, c));
    if (m.frame_count > 1) diff /= (m.frame_count - 1);
    out[static_cast<size_t>(c)] = static_cast<float>(mean);
    out[static_cast<size_t>(d + c)] = static_cast<float>(std::sqrt(var));
    out[static_cast<size_t>(2 * d + c)] = static_cast<float>(diff);
  }
  return out;
}

// Maps motions to fixed-length feature vectors: either the identity pooling
// above or the bottleneck of a small autoencoder trained on the pooled
// features of the train split.
class FeatureExtractor {
 public:
  enum class Mode { kIdentityPool, kTrained };

  FeatureExtractor() = default;
  explicit FeatureExtractor(int motion_dim)
      : mode_(Mode::kIdentityPool), in_dim_(3 * motion_dim) {}

  Mode mode() const { return mode_; }
  int feature_dim() const { return mode_ == Mode::kIdentityPool ? in_dim_ : bottleneck_; }

  std::vector<float> extract(const MotionSequence& m) const {
    std::vector<float> pooled = identity_pool_features(m);
    if (static_cast<int>(pooled.size()) != in_dim_) {
      throw std::invalid_argument("feature extractor: motion dim mismatch");
    }
    if (mode_ == Mode::kIdentityPool) return pooled;
    for (int i = 0; i < in_dim_; ++i) {
      pooled[static_cast<size_t>(i)] = (pooled[static_cast<size_t>(i)] -
                                        feat_mean_[static_cast<size_t>(i)]) /
                                       feat_std_[static_cast<size_t>(i)];
    }
    NoGrad ng;
    Tensor x = Tensor::of({1, in_dim_}, pooled);
    Tensor z = add_rowvec(matmul(relu(add_rowvec(matmul(x, w1_), b1_)), w2_), b2_);
    return z.values();
  }

  std::vector<float> extract_all(const std::vector<const MotionSequence*>& seqs) const {
    std::vector<float> out;
    out.reserve(seqs.size() * static_cast<size_t>(feature_dim()));
    for (const auto* m : seqs) {
      const auto f = extract(*m);
      out.insert(out.end(), f.begin(), f.end());
    }
    return out;
  }

  // Trains the pooled-feature autoencoder on the given motions and switches
  // to trained mode.
  void train(const std::vector<const MotionSequence*>& train_split, int bottleneck, int steps,
             uint64_t seed) {
    if (train_split.empty()) throw std::invalid_argument("feature extractor: empty train split");
    bottleneck_ = bottleneck;
    const int hidden = std::max(bottleneck * 2, in_dim_ / 2);
    Rng rng(seed);
    w1_ = Tensor::randn({in_dim_, hidden}, rng, 1.0f / std::sqrt(static_cast<float>(in_dim_)), true);
    b1_ = Tensor::zeros({hidden}, true);
    w2_ = Tensor::randn({hidden, bottleneck}, rng, 1.0f / std::sqrt(static_cast<float>(hidden)),
                        true);
    b2_ = Tensor::zeros({bottleneck}, true);
    Tensor dw1 = Tensor::randn({bottleneck, hidden}, rng,
                               1.0f / std::sqrt(static_cast<float>(bottleneck)), true);
    Tensor db1 = Tensor::zeros({hidden}, true);
    Tensor dw2 = Tensor::randn({hidden, in_dim_}, rng, 1.0f / std::sqrt(static_cast<float>(hidden)),
                               true);
    Tensor db2 = Tensor::zeros({in_dim_}, true);

    const int n = static_cast<int>(train_split.size());
    std::vector<float> pooled;
    pooled.reserve(static_cast<size_t>(n) * in_dim_);
    for (const auto* m : train_split) {
      const auto f = identity_pool_features(*m);
      pooled.insert(pooled.end(), f.begin(), f.end());
    }
    // per-feature standardization fitted on the train split; without it the
    // bottleneck is dominated by duration- and amplitude-scaled features
    feat_mean_.assign(static_cast<size_t>(in_dim_), 0.0f);
    feat_std_.assign(static_cast<size_t>(in_dim_), 0.0f);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < in_dim_; ++c) {
        feat_mean_[static_cast<size_t>(c)] += pooled[static_cast<size_t>(i) * in_dim_ + c];
      }
    }
    for (auto& v : feat_mean_) v /= static_cast<float>(n);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < in_dim_; ++c) {
        const float d = pooled[static_cast<size_t>(i) * in_dim_ + c] - feat_mean_[static_cast<size_t>(c)];
        feat_std_[static_cast<size_t>(c)] += d * d;
      }
    }
    for (auto& v : feat_std_) {
      v = std::sqrt(v / static_cast<float>(n));
      if (v < 1e-6f) v = 1.0f;
    }
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < in_dim_; ++c) {
        auto& cell = pooled[static_cast<size_t>(i) * in_dim_ + c];
        cell = (cell - feat_mean_[static_cast<size_t>(c)]) / feat_std_[static_cast<size_t>(c)];
      }
    }
    Tensor data = Tensor::of({n, in_dim_}, pooled);
    std::vector<Tensor> params = {w1_, b1_, w2_, b2_, dw1, db1, dw2, db2};
    AdamW adam;
    adam.lr = 1e-2f;
    adam.weight_decay = 0.0f;
    for (int step = 0; step < steps; ++step) {
      Tensor z = add_rowvec(matmul(relu(add_rowvec(matmul(data, w1_), b1_)), w2_), b2_);
      Tensor recon = add_rowvec(matmul(relu(add_rowvec(matmul(z, dw1), db1)), dw2), db2);
      Tensor loss = mse_loss(recon, data);
      zero_grads(params);
      loss.backward();
      adam.step(params);
    }
    mode_ = Mode::kTrained;
  }

 private:
  Mode mode_ = Mode::kIdentityPool;
  int in_dim_ = 0;
  int bottleneck_ = 0;
  std::vector<float> feat_mean_, feat_std_;
  Tensor w1_, b1_, w2_, b2_;
};

// ---- reports ----

struct EvalReport {
  double recon_l1 = 0.0;
  double recon_mse = 0.0;
  double fid = 0.0;
  double mmodality = 0.0;
  bool has_mmodality = false;
  int sample_count = 0;
  int feature_dim = 0;

  std::string to_json() const {
    nlohmann::json j = {{"recon_l1", recon_l1},     {"recon_mse", recon_mse},
                        {"fid", fid},               {"sample_count", sample_count},
                        {"feature_dim", feature_dim}};
    if (has_mmodality) j["mmodality"] = mmodality;
    return j.dump(2);
  }

  std::string to_table() const {
    std::ostringstream os;
    os << "metric        value\n"
       << "recon_l1      " << recon_l1 << "\n"
       << "recon_mse     " << recon_mse << "\n"
       << "fid           " << fid << "\n";
    if (has_mmodality) os << "mmodality     " << mmodality << "\n";
    os << "samples       " << sample_count << "\n";
    return os.str();
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "metric,value\nrecon_l1," << recon_l1 << "\nrecon_mse," << recon_mse << "\nfid," << fid
       << "\n";
    if (has_mmodality) os << "mmodality," << mmodality << "\n";
    os << "samples," << sample_count << "\n";
    return os.str();
  }
};

// Tokenize -> dequantize -> decode round trip over a split: per-element L1
// and MSE plus the identity-pool FID between originals and reconstructions.
inline EvalReport reconstruction_report(const RvqTokenizer& tok, const NormStats& stats,
                                        const std::vector<const MotionSequence*>& split,
                                        int up_to_layer = -1) {
  if (split.empty()) throw std::invalid_argument("reconstruction_report: empty split");
  NoGrad ng;
  EvalReport rep;
  rep.sample_count = static_cast<int>(split.size());
  double l1 = 0.0, mse = 0.0;
  std::vector<float> orig_feats, recon_feats;
  const int fdim = 3 * split[0]->dim;
  rep.feature_dim = fdim;
  for (const auto* m : split) {
    MotionSequence norm = m->is_normalized ? *m : normalize(*m, stats);
    Tensor latent = tok.encode(norm, false, nullptr);
    QuantizeResult q = tok.quantize(latent);
    const std::vector<float> lat = dequantize(q.grid, tok.codebook(), up_to_layer);
    MotionSequence recon = tok.decode(lat, norm.frame_count, norm.fps);
    double il1 = 0.0, imse = 0.0;
    for (size_t i = 0; i < recon.frames.size(); ++i) {
      const double d = static_cast<double>(recon.frames[i]) - norm.frames[i];
      il1 += std::fabs(d);
      imse += d * d;
    }
    l1 += il1 / static_cast<double>(recon.frames.size());
    mse += imse / static_cast<double>(recon.frames.size());
    const auto of = identity_pool_features(norm);
    const auto rf = identity_pool_features(recon);
    orig_feats.insert(orig_feats.end(), of.begin(), of.end());
    recon_feats.insert(recon_feats.end(), rf.begin(), rf.end());
  }
  rep.recon_l1 = l1 / rep.sample_count;
  rep.recon_mse = mse / rep.sample_count;
  rep.fid = rep.sample_count >= 2
                ? frechet_distance(orig_feats, rep.sample_count, recon_feats, rep.sample_count,
                                   fdim)
                : 0.0;
  return rep;
}

// Mean pairwise feature distance among repeated stochastic generations of
// the same prompt, averaged over prompts. The generator closure owns model
// and sampling policy; stochastic must be true (greedy sampling has zero
// diversity by construction).
inline double mmodality(const std::function<MotionSequence(const std::string&, uint64_t)>& gen,
                        const std::vector<std::string>& prompts, int repeats, bool stochastic,
                        const FeatureExtractor& extractor, uint64_t base_seed = 1000) {
  if (!stochastic) {
    throw std::invalid_argument("mmodality requires a stochastic sampling policy");
  }
  if (repeats < 2) throw std::invalid_argument("mmodality requires repeats >= 2");
  double total = 0.0;
  for (size_t pi = 0; pi < prompts.size(); ++pi) {
    std::vector<std::vector<float>> feats;
    feats.reserve(static_cast<size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
      const MotionSequence m = gen(prompts[pi], base_seed + pi * 1000 + static_cast<uint64_t>(r));
      feats.push_back(extractor.extract(m));
    }
    double pair_sum = 0.0;
    int pairs = 0;
    for (int i = 0; i < repeats; ++i) {
      for (int j = i + 1; j < repeats; ++j) {
        double sq = 0.0;
        for (size_t c = 0; c < feats[static_cast<size_t>(i)].size(); ++c) {
          const double d = static_cast<double>(feats[static_cast<size_t>(i)][c]) -
                           feats[static_cast<size_t>(j)][c];
          sq += d * d;
        }
        pair_sum += std::sqrt(sq);
        ++pairs;
      }
    }
    total += pair_sum / pairs;
  }
  return prompts.empty() ? 0.0 : total / static_cast<double>(prompts.size());
}

}  // namespace mogo
