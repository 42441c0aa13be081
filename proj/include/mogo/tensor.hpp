#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mogo/rng.hpp"

namespace mogo {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an op produces NaN/Inf; non-finite values are an error state.
class NumericFault : public std::runtime_error {
 public:
  explicit NumericFault(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<float> values;
  std::vector<float> grad;  // sized like values iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  int64_t seq = 0;  // creation order; a valid topological order of the graph
};

inline std::atomic<int64_t> node_seq{0};
inline thread_local bool grad_mode = true;

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

}  // namespace detail

// Disables graph recording in scope (inference / frozen-model passes).
class NoGrad {
 public:
  NoGrad() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGrad() { detail::grad_mode = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

// Dense row-major f32 tensor with reverse-mode autodiff. Value semantics over
// a shared node; ops build the graph while grad mode is on.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return from(std::move(shape), {}, requires_grad, 0.0f);
  }

  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false) {
    return from(std::move(shape), {}, requires_grad, value);
  }

  static Tensor of(std::vector<int> shape, std::vector<float> data, bool requires_grad = false) {
    const int64_t n = detail::shape_numel(shape);
    if (static_cast<int64_t>(data.size()) != n) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->values.size(), 0.0f);
    node->seq = detail::node_seq.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(node));
  }

  static Tensor scalar(float v) { return of({1}, {v}); }

  static Tensor randn(std::vector<int> shape, Rng& rng, float stddev = 1.0f,
                      bool requires_grad = false) {
    const int64_t n = detail::shape_numel(shape);
    std::vector<float> data(static_cast<size_t>(n));
    for (auto& v : data) v = rng.normal(0.0f, stddev);
    return of(std::move(shape), std::move(data), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<float>& values() { return node_->values; }
  const std::vector<float>& values() const { return node_->values; }

  std::vector<float>& grad() {
    if (!node_->requires_grad) throw ShapeError("tensor has no grad buffer");
    return node_->grad;
  }
  const std::vector<float>& grad() const {
    if (!node_->requires_grad) throw ShapeError("tensor has no grad buffer");
    return node_->grad;
  }

  float item() const {
    if (numel() != 1) {
      throw ShapeError("item() requires a scalar tensor, got shape " + shape_str(node_->shape));
    }
    return node_->values[0];
  }

  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
  }

  // Reverse-mode sweep from a scalar loss. Grads accumulate (+=) so repeated
  // calls without zeroing add up.
  void backward() const {
    if (numel() != 1) {
      throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(node_->shape));
    }
    if (!node_->requires_grad) return;
    // Collect the reachable subgraph; creation order is a topological order.
    std::vector<detail::Node*> nodes;
    std::vector<detail::Node*> stack{node_.get()};
    std::vector<detail::Node*> seen;
    auto mark = [&](detail::Node* n) {
      // seq-keyed membership check via sorted insert on small graphs would be
      // O(n^2); use a sorted vector of pointers instead.
      auto it = std::lower_bound(seen.begin(), seen.end(), n);
      if (it != seen.end() && *it == n) return false;
      seen.insert(it, n);
      return true;
    };
    mark(node_.get());
    while (!stack.empty()) {
      detail::Node* n = stack.back();
      stack.pop_back();
      nodes.push_back(n);
      for (auto& p : n->parents) {
        if (p->requires_grad && mark(p.get())) stack.push_back(p.get());
      }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });
    // intermediate grads are per-pass buffers; only leaf grads accumulate
    for (detail::Node* n : nodes) {
      if (n->backward_fn) std::fill(n->grad.begin(), n->grad.end(), 0.0f);
    }
    node_->grad[0] += 1.0f;
    for (detail::Node* n : nodes) {
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

  // Detached copy of the current values (constant leaf, no grad).
  Tensor detach_copy() const { return of(node_->shape, node_->values, false); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor from(std::vector<int> shape, std::vector<float>, bool requires_grad, float fill) {
    const int64_t n = detail::shape_numel(shape);
    std::vector<float> data(static_cast<size_t>(n), fill);
    return of(std::move(shape), std::move(data), requires_grad);
  }

  friend Tensor make_op(const char*, std::vector<int>, std::vector<float>, std::vector<Tensor>,
                        std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

// Builds an op result node: finite-checks the output, wires parents and the
// backward closure when grad mode is on and any input needs gradients.
inline Tensor make_op(const char* op_name, std::vector<int> shape, std::vector<float> values,
                      std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward_fn) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw NumericFault(std::string(op_name) + " produced a non-finite value");
    }
  }
  bool rg = false;
  if (detail::grad_mode) {
    for (const auto& t : inputs) rg = rg || t.requires_grad();
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = rg;
  if (rg) {
    node->grad.assign(node->values.size(), 0.0f);
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  node->seq = detail::node_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

namespace detail {
inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}
inline void add_into(std::vector<float>& dst, const std::vector<float>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}
}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<float> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    for (auto& p : n.parents) {
      if (p->requires_grad) detail::add_into(p->grad, n.grad);
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<float> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) detail::add_into(pa->grad, n.grad);
    if (pb->requires_grad) {
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<float> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->values[i];
    }
    if (pb->requires_grad) {
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->values[i];
    }
  });
}

inline Tensor mul_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.values());
  for (auto& v : out) v *= s;
  return make_op("mul_scalar", a.shape(), std::move(out), {a}, [s](detail::Node& n) {
    auto& p = n.parents[0];
    if (p->requires_grad) {
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * s;
    }
  });
}

inline Tensor add_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.values());
  for (auto& v : out) v += s;
  return make_op("add_scalar", a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& p = n.parents[0];
    if (p->requires_grad) detail::add_into(p->grad, n.grad);
  });
}

// (n, d) + (d): broadcast a row vector over every row.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (a.rank() != 2 || v.rank() != 1 || a.dim(1) != v.dim(0)) {
    throw ShapeError("add_rowvec: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(v.shape()));
  }
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<float> out(a.values());
  const auto& vv = v.values();
  for (int r = 0; r < rows; ++r) {
    float* dst = out.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) dst[c] += vv[static_cast<size_t>(c)];
  }
  return make_op("add_rowvec", a.shape(), std::move(out), {a, v}, [rows, cols](detail::Node& n) {
    auto& pa = n.parents[0];
    auto& pv = n.parents[1];
    if (pa->requires_grad) detail::add_into(pa->grad, n.grad);
    if (pv->requires_grad) {
      for (int r = 0; r < rows; ++r) {
        const float* g = n.grad.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) pv->grad[static_cast<size_t>(c)] += g[c];
      }
    }
  });
}

// ---- matmul / transpose ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(static_cast<size_t>(m) * n, 0.0f);
  const float* av = a.values().data();
  const float* bv = b.values().data();
  for (int i = 0; i < m; ++i) {
    float* orow = out.data() + static_cast<size_t>(i) * n;
    const float* arow = av + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const float s = arow[kk];
      const float* brow = bv + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
  return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& nd) {
    auto& pa = nd.parents[0];
    auto& pb = nd.parents[1];
    const float* g = nd.grad.data();
    if (pa->requires_grad) {
      // dA = dY * B^T
      const float* bv = pb->values.data();
      for (int i = 0; i < m; ++i) {
        float* da = pa->grad.data() + static_cast<size_t>(i) * k;
        const float* grow = g + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const float* brow = bv + static_cast<size_t>(kk) * n;
          float acc = 0.0f;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          da[kk] += acc;
        }
      }
    }
    if (pb->requires_grad) {
      // dB = A^T * dY
      const float* av = pa->values.data();
      for (int i = 0; i < m; ++i) {
        const float* arow = av + static_cast<size_t>(i) * k;
        const float* grow = g + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const float s = arow[kk];
          float* db = pb->grad.data() + static_cast<size_t>(kk) * n;
          for (int j = 0; j < n; ++j) db[j] += s * grow[j];
        }
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  std::vector<float> out(static_cast<size_t>(m) * n);
  const auto& av = a.values();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
    }
  }
  return make_op("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        p->grad[static_cast<size_t>(i) * n + j] += nd.grad[static_cast<size_t>(j) * m + i];
      }
    }
  });
}

inline Tensor reshape(const Tensor& a, std::vector<int> new_shape) {
  if (detail::shape_numel(new_shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  }
  std::vector<float> out(a.values());
  return make_op("reshape", std::move(new_shape), std::move(out), {a}, [](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (p->requires_grad) detail::add_into(p->grad, nd.grad);
  });
}

// ---- slicing / concatenation ----

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (a.rank() != 2 || r0 < 0 || r1 > a.dim(0) || r0 >= r1) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") for shape " + shape_str(a.shape()));
  }
  const int cols = a.dim(1);
  std::vector<float> out(a.values().begin() + static_cast<size_t>(r0) * cols,
                         a.values().begin() + static_cast<size_t>(r1) * cols);
  return make_op("slice_rows", {r1 - r0, cols}, std::move(out), {a}, [r0, cols](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    const size_t off = static_cast<size_t>(r0) * cols;
    for (size_t i = 0; i < nd.grad.size(); ++i) p->grad[off + i] += nd.grad[i];
  });
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2 || c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for shape " + shape_str(a.shape()));
  }
  const int rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  std::vector<float> out(static_cast<size_t>(rows) * w);
  const auto& av = a.values();
  for (int r = 0; r < rows; ++r) {
    std::copy_n(av.data() + static_cast<size_t>(r) * cols + c0, w,
                out.data() + static_cast<size_t>(r) * w);
  }
  return make_op("slice_cols", {rows, w}, std::move(out), {a},
                 [rows, cols, c0, w](detail::Node& nd) {
                   auto& p = nd.parents[0];
                   if (!p->requires_grad) return;
                   for (int r = 0; r < rows; ++r) {
                     const float* g = nd.grad.data() + static_cast<size_t>(r) * w;
                     float* dst = p->grad.data() + static_cast<size_t>(r) * cols + c0;
                     for (int c = 0; c < w; ++c) dst[c] += g[c];
                   }
                 });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int cols = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(static_cast<size_t>(rows) * cols);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<int> row_counts;
  row_counts.reserve(parts.size());
  for (const auto& p : parts) row_counts.push_back(p.dim(0));
  return make_op("concat_rows", {rows, cols}, std::move(out), parts,
                 [row_counts, cols](detail::Node& nd) {
                   size_t off = 0;
                   for (size_t k = 0; k < nd.parents.size(); ++k) {
                     auto& p = nd.parents[k];
                     const size_t len = static_cast<size_t>(row_counts[k]) * cols;
                     if (p->requires_grad) {
                       for (size_t i = 0; i < len; ++i) p->grad[i] += nd.grad[off + i];
                     }
                     off += len;
                   }
                 });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  int cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    cols += p.dim(1);
  }
  std::vector<float> out(static_cast<size_t>(rows) * cols);
  int c_off = 0;
  std::vector<int> widths;
  widths.reserve(parts.size());
  for (const auto& p : parts) {
    const int w = p.dim(1);
    widths.push_back(w);
    for (int r = 0; r < rows; ++r) {
      std::copy_n(p.values().data() + static_cast<size_t>(r) * w, w,
                  out.data() + static_cast<size_t>(r) * cols + c_off);
    }
    c_off += w;
  }
  return make_op("concat_cols", {rows, cols}, std::move(out), parts,
                 [rows, cols, widths](detail::Node& nd) {
                   int off = 0;
                   for (size_t k = 0; k < nd.parents.size(); ++k) {
                     auto& p = nd.parents[k];
                     const int w = widths[k];
                     if (p->requires_grad) {
                       for (int r = 0; r < rows; ++r) {
                         const float* g = nd.grad.data() + static_cast<size_t>(r) * cols + off;
                         float* dst = p->grad.data() + static_cast<size_t>(r) * w;
                         for (int c = 0; c < w; ++c) dst[c] += g[c];
                       }
                     }
                     off += w;
                   }
                 });
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  return make_op("sum", {1}, {static_cast<float>(acc)}, {a}, [](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    const float g = nd.grad[0];
    for (auto& d : p->grad) d += g;
  });
}

inline Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  const float inv = 1.0f / static_cast<float>(a.numel());
  return make_op("mean", {1}, {static_cast<float>(acc) * inv}, {a}, [inv](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    const float g = nd.grad[0] * inv;
    for (auto& d : p->grad) d += g;
  });
}

// mean |a - b|
inline Tensor l1_loss(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("l1_loss", a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += std::fabs(static_cast<double>(av[i]) - bv[i]);
  const float inv = 1.0f / static_cast<float>(a.numel());
  return make_op("l1_loss", {1}, {static_cast<float>(acc) * inv}, {a, b},
                 [inv](detail::Node& nd) {
                   auto& pa = nd.parents[0];
                   auto& pb = nd.parents[1];
                   const float g = nd.grad[0] * inv;
                   for (size_t i = 0; i < pa->values.size(); ++i) {
                     const float s = (pa->values[i] > pb->values[i])   ? 1.0f
                                     : (pa->values[i] < pb->values[i]) ? -1.0f
                                                                       : 0.0f;
                     if (pa->requires_grad) pa->grad[i] += g * s;
                     if (pb->requires_grad) pb->grad[i] -= g * s;
                   }
                 });
}

// mean (a - b)^2
inline Tensor mse_loss(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mse_loss", a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  const float inv = 1.0f / static_cast<float>(a.numel());
  return make_op("mse_loss", {1}, {static_cast<float>(acc) * inv}, {a, b},
                 [inv](detail::Node& nd) {
                   auto& pa = nd.parents[0];
                   auto& pb = nd.parents[1];
                   const float g = 2.0f * nd.grad[0] * inv;
                   for (size_t i = 0; i < pa->values.size(); ++i) {
                     const float d = pa->values[i] - pb->values[i];
                     if (pa->requires_grad) pa->grad[i] += g * d;
                     if (pb->requires_grad) pb->grad[i] -= g * d;
                   }
                 });
}

// ---- activations ----

inline Tensor relu(const Tensor& a) {
  std::vector<float> out(a.values());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  return make_op("relu", a.shape(), std::move(out), {a}, [](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    for (size_t i = 0; i < nd.grad.size(); ++i) {
      if (p->values[i] > 0.0f) p->grad[i] += nd.grad[i];
    }
  });
}

inline Tensor gelu(const Tensor& a) {
  // tanh approximation
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kA = 0.044715f;
  std::vector<float> out(a.values());
  for (auto& v : out) {
    const float x = v;
    v = 0.5f * x * (1.0f + std::tanh(kC * (x + kA * x * x * x)));
  }
  return make_op("gelu", a.shape(), std::move(out), {a}, [](detail::Node& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    for (size_t i = 0; i < nd.grad.size(); ++i) {
      const float x = p->values[i];
      const float inner = kC * (x + kA * x * x * x);
      const float t = std::tanh(inner);
      const float dinner = kC * (1.0f + 3.0f * kA * x * x);
      const float d = 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * dinner;
      p->grad[i] += nd.grad[i] * d;
    }
  });
}

}  // namespace mogo
