#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "magex/common.hpp"
#include "magex/rng.hpp"

namespace magex {

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline thread_local int g_no_grad_depth = 0;

}  // namespace detail

inline bool grad_enabled() { return detail::g_no_grad_depth == 0; }

// Scoped switch that disables tape recording; rollout workers run forward
// passes under this so frozen parameter snapshots are never touched.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::g_no_grad_depth; }
  ~NoGradGuard() { --detail::g_no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major tensor of doubles (rank 1 or 2; numel-1 tensors act as
// scalars). Values are written once at construction; the optimizer is the
// only code that mutates a leaf in place, between graph builds.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<double> value,
         bool requires_grad = false) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != value.size())
      throw ShapeError("tensor: shape does not match value count");
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  static Tensor identity(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(v));
  }

  static Tensor randn(std::vector<std::size_t> shape, Rng& rng,
                      double stddev = 1.0, bool requires_grad = false) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->numel(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->value; }
  // In-place access for the optimizer; never use on a non-leaf.
  std::vector<double>& values_mut() { return node_->value; }

  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not a scalar");
    return node_->value[0];
  }
  double at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t i, std::size_t j) const {
    return node_->value[i * node_->shape[1] + j];
  }

  const std::vector<double>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
  void drop_grad() { node_->grad.clear(); }

  // Reverse-mode sweep from a scalar root.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward: root must be a scalar");
    // iterative topological order (graphs can hold thousands of nodes)
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::TensorNode* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (auto* n : order) n->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  void check_finite(const std::string& context) const {
    for (double v : node_->value)
      if (!std::isfinite(v))
        throw NumericError("non-finite value in " + context);
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  // Value-only copy, detached from any graph.
  Tensor detach_copy(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->value, requires_grad);
  }

 private:
  friend Tensor make_op(std::vector<std::size_t> shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::TensorNode&)> backward_fn);
  std::shared_ptr<detail::TensorNode> node_;
};

// Builds an op result node. Tape bookkeeping is attached only when gradients
// are both globally enabled and needed by some parent.
inline Tensor make_op(std::vector<std::size_t> shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backward_fn) {
  Tensor out(std::move(shape), std::move(value));
  bool track = grad_enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    track = any;
  }
  if (track) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward_fn = std::move(backward_fn);
  }
  return out;
}

namespace detail {
inline void accumulate(const std::shared_ptr<TensorNode>& p,
                       const std::vector<double>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}
}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
    return make_op(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& n) {
      for (auto& p : n.parents) detail::accumulate(p, n.grad);
    });
  }
  // row broadcast: [r x m] + [m]
  if (a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0)) {
    const std::size_t r = a.dim(0), m = a.dim(1);
    std::vector<double> v(r * m);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < m; ++j) v[i * m + j] = a.at(i, j) + b.at(j);
    return make_op(a.shape(), std::move(v), {a, b}, [r, m](detail::TensorNode& n) {
      auto& pa = n.parents[0];
      auto& pb = n.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < r * m; ++i) pa->grad[i] += n.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < m; ++j) pb->grad[j] += n.grad[i * m + j];
      }
    });
  }
  throw ShapeError("add: incompatible shapes");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
  return make_op(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  return make_op(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        pa->grad[i] += n.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        pb->grad[i] += n.grad[i] * pa->value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * a.at(i);
  return make_op(a.shape(), std::move(v), {a}, [c](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += c * n.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + c;
  return make_op(a.shape(), std::move(v), {a}, [](detail::TensorNode& n) {
    detail::accumulate(n.parents[0], n.grad);
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2) throw ShapeError("matmul: rhs must be a matrix");
  const bool vec = a.rank() == 1;
  const std::size_t n = vec ? 1 : a.dim(0);
  const std::size_t k = vec ? a.dim(0) : a.dim(1);
  if (k != b.dim(0)) throw ShapeError("matmul: inner dimensions differ");
  const std::size_t m = b.dim(1);
  std::vector<double> v(n * m, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const double ait = av[i * k + t];
      if (ait == 0.0) continue;
      const double* brow = bv.data() + t * m;
      double* orow = v.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += ait * brow[j];
    }
  std::vector<std::size_t> oshape = vec ? std::vector<std::size_t>{m}
                                        : std::vector<std::size_t>{n, m};
  return make_op(std::move(oshape), std::move(v), {a, b},
                 [n, k, m](detail::TensorNode& nd) {
                   auto& pa = nd.parents[0];
                   auto& pb = nd.parents[1];
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     // dA = dOut * B^T
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t t = 0; t < k; ++t) {
                         double s = 0.0;
                         const double* grow = nd.grad.data() + i * m;
                         const double* brow = pb->value.data() + t * m;
                         for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
                         pa->grad[i * k + t] += s;
                       }
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     // dB = A^T * dOut
                     for (std::size_t t = 0; t < k; ++t)
                       for (std::size_t i = 0; i < n; ++i) {
                         const double ait = pa->value[i * k + t];
                         if (ait == 0.0) continue;
                         const double* grow = nd.grad.data() + i * m;
                         double* brow = pb->grad.data() + t * m;
                         for (std::size_t j = 0; j < m; ++j) brow[j] += ait * grow[j];
                       }
                   }
                 });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank-2 only");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> v(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) v[j * n + i] = a.at(i, j);
  return make_op({m, n}, std::move(v), {a}, [n, m](detail::TensorNode& nd) {
    auto& p = nd.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) p->grad[i * m + j] += nd.grad[j * n + i];
  });
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  if (n != a.numel()) throw ShapeError("reshape: numel mismatch");
  return make_op(std::move(shape), a.values(), {a}, [](detail::TensorNode& nd) {
    detail::accumulate(nd.parents[0], nd.grad);
  });
}

// ---- elementwise nonlinearities -------------------------------------------

namespace detail {
template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a.at(i));
  return make_op(a.shape(), std::move(v), {a}, [df](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      p->grad[i] += n.grad[i] * df(p->value[i], n.value[i]);
  });
}
}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                          [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                          [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_op(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::tanh(x); },
                          [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp_op(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::exp(x); },
                          [](double, double y) { return y; });
}

inline Tensor log_op(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::log(x); },
                          [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt_op(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::sqrt(x); },
                          [](double, double y) { return 0.5 / y; });
}

inline Tensor rsqrt(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return 1.0 / std::sqrt(x); },
                          [](double x, double y) { return -0.5 * y / x; });
}

// ---- reductions and selections ---------------------------------------------

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
  return make_op({1}, {s}, {a}, [](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (auto& g : p->grad) g += n.grad[0];
  });
}

inline Tensor mean_all(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
  return make_op({1}, {s * inv}, {a}, [inv](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (auto& g : p->grad) g += inv * n.grad[0];
  });
}

inline Tensor row_sums(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("row_sums: rank-2 only");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) v[i] += a.at(i, j);
  return make_op({n}, std::move(v), {a}, [n, m](detail::TensorNode& nd) {
    auto& p = nd.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) p->grad[i * m + j] += nd.grad[i];
  });
}

inline Tensor take(const Tensor& a, std::size_t i) {
  if (i >= a.numel()) throw ShapeError("take: index out of range");
  return make_op({1}, {a.at(i)}, {a}, [i](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    p->grad[i] += n.grad[0];
  });
}

inline Tensor take_row(const Tensor& a, std::size_t i) {
  if (a.rank() != 2 || i >= a.dim(0)) throw ShapeError("take_row: bad index");
  const std::size_t m = a.dim(1);
  std::vector<double> v(a.values().begin() + i * m, a.values().begin() + (i + 1) * m);
  return make_op({m}, std::move(v), {a}, [i, m](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (std::size_t j = 0; j < m; ++j) p->grad[i * m + j] += n.grad[j];
  });
}

inline Tensor slice_vec(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.rank() != 1 || start + len > a.numel()) throw ShapeError("slice_vec: bad range");
  std::vector<double> v(a.values().begin() + start, a.values().begin() + start + len);
  return make_op({len}, std::move(v), {a}, [start, len](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (std::size_t j = 0; j < len; ++j) p->grad[start + j] += n.grad[j];
  });
}

inline Tensor concat_vec(const std::vector<Tensor>& parts) {
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 1) throw ShapeError("concat_vec: rank-1 parts only");
    total += p.numel();
  }
  std::vector<double> v;
  v.reserve(total);
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  std::vector<std::size_t> sizes;
  sizes.reserve(parts.size());
  for (const auto& p : parts) sizes.push_back(p.numel());
  return make_op({total}, std::move(v), parts, [sizes](detail::TensorNode& n) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto& p = n.parents[k];
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t j = 0; j < sizes[k]; ++j) p->grad[j] += n.grad[off + j];
      }
      off += sizes[k];
    }
  });
}

inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty");
  const std::size_t m = rows[0].numel();
  for (const auto& r : rows)
    if (r.rank() != 1 || r.numel() != m) throw ShapeError("stack_rows: ragged rows");
  std::vector<double> v;
  v.reserve(rows.size() * m);
  for (const auto& r : rows) v.insert(v.end(), r.values().begin(), r.values().end());
  return make_op({rows.size(), m}, std::move(v), rows, [m](detail::TensorNode& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto& p = n.parents[k];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t j = 0; j < m; ++j) p->grad[j] += n.grad[k * m + j];
    }
  });
}

// Sum of many same-shape tensors as a single node.
inline Tensor add_n(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("add_n: empty");
  std::vector<double> v(parts[0].numel(), 0.0);
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) throw ShapeError("add_n: shape mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += p.at(i);
  }
  return make_op(parts[0].shape(), std::move(v), parts, [](detail::TensorNode& n) {
    for (auto& p : n.parents) detail::accumulate(p, n.grad);
  });
}

// ---- softmax family ---------------------------------------------------------

namespace detail {
inline void softmax_inplace(const double* x, double* y, std::size_t m) {
  double mx = x[0];
  for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    y[j] = std::exp(x[j] - mx);
    s += y[j];
  }
  const double inv = 1.0 / s;
  for (std::size_t j = 0; j < m; ++j) y[j] *= inv;
}
}  // namespace detail

// Row-wise stable softmax; rank-1 input is treated as one row.
inline Tensor softmax(const Tensor& a) {
  const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t m = a.rank() == 2 ? a.dim(1) : a.dim(0);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < rows; ++i)
    detail::softmax_inplace(a.values().data() + i * m, v.data() + i * m, m);
  return make_op(a.shape(), std::move(v), {a}, [rows, m](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* y = n.value.data() + i * m;
      const double* g = n.grad.data() + i * m;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < m; ++j) p->grad[i * m + j] += y[j] * (g[j] - dot);
    }
  });
}

inline Tensor log_softmax(const Tensor& a) {
  const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t m = a.rank() == 2 ? a.dim(1) : a.dim(0);
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = a.values().data() + i * m;
    double mx = x[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < m; ++j) v[i * m + j] = x[j] - lse;
  }
  return make_op(a.shape(), std::move(v), {a}, [rows, m](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* lp = n.value.data() + i * m;
      const double* g = n.grad.data() + i * m;
      double gs = 0.0;
      for (std::size_t j = 0; j < m; ++j) gs += g[j];
      for (std::size_t j = 0; j < m; ++j)
        p->grad[i * m + j] += g[j] - std::exp(lp[j]) * gs;
    }
  });
}

// log(sum_j in mask exp(x_j)) over a rank-1 tensor; empty mask is an error.
inline Tensor masked_logsumexp(const Tensor& a, const std::vector<char>& mask) {
  if (a.rank() != 1 || mask.size() != a.numel())
    throw ShapeError("masked_logsumexp: bad mask");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) mx = std::max(mx, a.at(j));
  if (!std::isfinite(mx)) throw ShapeError("masked_logsumexp: empty mask");
  double s = 0.0;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) s += std::exp(a.at(j) - mx);
  const double lse = mx + std::log(s);
  return make_op({1}, {lse}, {a}, [mask, lse](detail::TensorNode& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (std::size_t j = 0; j < mask.size(); ++j)
      if (mask[j]) p->grad[j] += n.grad[0] * std::exp(p->value[j] - lse);
  });
}

inline Tensor logsumexp(const Tensor& a) {
  return masked_logsumexp(a, std::vector<char>(a.numel(), 1));
}

// ---- special ops ------------------------------------------------------------

// Forward emits `hard_value`; the gradient passes through unchanged to `soft`.
inline Tensor straight_through(const Tensor& soft, std::vector<double> hard_value) {
  if (hard_value.size() != soft.numel())
    throw ShapeError("straight_through: size mismatch");
  return make_op(soft.shape(), std::move(hard_value), {soft},
                 [](detail::TensorNode& n) { detail::accumulate(n.parents[0], n.grad); });
}

// Mean elementwise Huber loss: quadratic inside |e| <= delta, linear outside.
inline Tensor huber_mean(const Tensor& pred, const Tensor& target, double delta) {
  if (pred.shape() != target.shape()) throw ShapeError("huber: shape mismatch");
  const std::size_t n = pred.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred.at(i) - target.at(i);
    const double ae = std::fabs(e);
    total += ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
  }
  const double inv = 1.0 / static_cast<double>(n);
  return make_op({1}, {total * inv}, {pred, target},
                 [delta, inv, n](detail::TensorNode& nd) {
                   auto& pp = nd.parents[0];
                   auto& pt = nd.parents[1];
                   for (std::size_t i = 0; i < n; ++i) {
                     const double e = pp->value[i] - pt->value[i];
                     const double de = std::clamp(e, -delta, delta) * inv * nd.grad[0];
                     if (pp->requires_grad) {
                       pp->ensure_grad();
                       pp->grad[i] += de;
                     }
                     if (pt->requires_grad) {
                       pt->ensure_grad();
                       pt->grad[i] -= de;
                     }
                   }
                 });
}

}  // namespace magex
