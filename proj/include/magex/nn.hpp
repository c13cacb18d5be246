#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "magex/common.hpp"
#include "magex/rng.hpp"
#include "magex/tensor.hpp"

namespace magex {

// ---- parameters -------------------------------------------------------------

struct LayerParams {
  std::string name;
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
};
using ParamRefs = std::vector<NamedParam>;

// Orthogonal [rows x cols] matrix: orthonormal columns when rows >= cols,
// orthonormal rows otherwise. Modified Gram-Schmidt with one
// re-orthogonalization pass is plenty at these sizes.
inline std::vector<double> orthogonal_matrix(std::size_t rows, std::size_t cols,
                                             Rng& rng, double gain = 1.0) {
  const bool tall = rows >= cols;
  const std::size_t n = tall ? rows : cols;  // vector length
  const std::size_t k = tall ? cols : rows;  // number of vectors
  std::vector<std::vector<double>> q(k, std::vector<double>(n));
  for (auto& col : q)
    for (auto& x : col) x = rng.normal();
  for (std::size_t j = 0; j < k; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t t = 0; t < j; ++t) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += q[j][i] * q[t][i];
        for (std::size_t i = 0; i < n; ++i) q[j][i] -= dot * q[t][i];
      }
    }
    double norm = 0.0;
    for (double x : q[j]) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // degenerate draw, retry this vector
      for (auto& x : q[j]) x = rng.normal();
      --j;
      continue;
    }
    for (auto& x : q[j]) x /= norm;
  }
  std::vector<double> w(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      w[r * cols + c] = gain * (tall ? q[c][r] : q[r][c]);
  return w;
}

// Orthogonal weight, zero bias.
inline LayerParams make_layer(std::string name, std::size_t in, std::size_t out,
                              Rng& rng, double gain = 1.0) {
  LayerParams lp;
  lp.name = std::move(name);
  lp.weight = Tensor({in, out}, orthogonal_matrix(in, out, rng, gain), true);
  lp.bias = Tensor({out}, std::vector<double>(out, 0.0), true);
  return lp;
}

inline Tensor linear(const LayerParams& lp, const Tensor& x) {
  const std::size_t last = x.rank() == 2 ? x.dim(1) : x.dim(0);
  if (last != lp.in_dim())
    throw ShapeError("layer '" + lp.name + "': input dim " + std::to_string(last) +
                     " != expected " + std::to_string(lp.in_dim()));
  return add(matmul(x, lp.weight), lp.bias);
}

// Linear chain with ReLU between layers; the final layer output stays
// pre-activation so heads can be used directly.
inline Tensor mlp_forward(std::span<const LayerParams> layers, const Tensor& x) {
  if (layers.empty()) throw ShapeError("mlp_forward: no layers");
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = linear(layers[i], h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

inline Tensor mlp_forward(const std::vector<LayerParams>& layers, const Tensor& x) {
  return mlp_forward(std::span<const LayerParams>(layers.data(), layers.size()), x);
}

// ---- graph convolution --------------------------------------------------------

enum class Activation { Identity, Relu };

inline Tensor apply_activation(const Tensor& t, Activation act) {
  return act == Activation::Relu ? relu(t) : t;
}

// One symmetric-normalized graph convolution: act(D^-1/2 (A+I) D^-1/2 H W + b)
// with degrees taken as row sums of A+I. Gradients flow through H, A and the
// layer parameters.
inline Tensor gcn_layer(const Tensor& H, const Tensor& A, const LayerParams& lp,
                        Activation act = Activation::Relu) {
  if (A.rank() != 2 || A.dim(0) != A.dim(1))
    throw ShapeError("gcn_layer: adjacency must be square");
  if (H.rank() != 2 || H.dim(0) != A.dim(0))
    throw ShapeError("gcn_layer: node count mismatch");
  const std::size_t n = A.dim(0);
  for (std::size_t i = 0; i < A.numel(); ++i)
    if (A.at(i) < 0.0) throw ShapeError("gcn_layer: adjacency must be non-negative");
  Tensor with_loops = add(A, Tensor::identity(n));
  Tensor dinv = rsqrt(row_sums(with_loops));
  Tensor outer = matmul(reshape(dinv, {n, 1}), reshape(dinv, {1, n}));
  Tensor norm_adj = mul(with_loops, outer);
  return apply_activation(linear(lp, matmul(norm_adj, H)), act);
}

// ---- recurrent cell -------------------------------------------------------------

// Single GRU cell; gate order along the packed dimension is (reset, update,
// candidate).
struct GruCell {
  LayerParams input;   // [in x 3h] + bias [3h]
  LayerParams hidden;  // [h x 3h] + bias [3h]
  std::size_t hidden_size = 0;
};

inline GruCell make_gru(const std::string& name, std::size_t in, std::size_t hidden,
                        Rng& rng) {
  GruCell cell;
  cell.hidden_size = hidden;
  // orthogonal per gate block
  std::vector<double> wi(in * 3 * hidden), wh(hidden * 3 * hidden);
  for (int g = 0; g < 3; ++g) {
    auto bi = orthogonal_matrix(in, hidden, rng);
    auto bh = orthogonal_matrix(hidden, hidden, rng);
    for (std::size_t r = 0; r < in; ++r)
      for (std::size_t c = 0; c < hidden; ++c)
        wi[r * 3 * hidden + g * hidden + c] = bi[r * hidden + c];
    for (std::size_t r = 0; r < hidden; ++r)
      for (std::size_t c = 0; c < hidden; ++c)
        wh[r * 3 * hidden + g * hidden + c] = bh[r * hidden + c];
  }
  cell.input.name = name + ".input";
  cell.input.weight = Tensor({in, 3 * hidden}, std::move(wi), true);
  cell.input.bias = Tensor({3 * hidden}, std::vector<double>(3 * hidden, 0.0), true);
  cell.hidden.name = name + ".hidden";
  cell.hidden.weight = Tensor({hidden, 3 * hidden}, std::move(wh), true);
  cell.hidden.bias = Tensor({3 * hidden}, std::vector<double>(3 * hidden, 0.0), true);
  return cell;
}

inline Tensor recurrent_step(const GruCell& cell, const Tensor& x, const Tensor& h_prev) {
  const std::size_t h = cell.hidden_size;
  if (h_prev.rank() != 1 || h_prev.numel() != h)
    throw ShapeError("recurrent_step: hidden size mismatch");
  Tensor gi = linear(cell.input, x);
  Tensor gh = linear(cell.hidden, h_prev);
  Tensor r = sigmoid(add(slice_vec(gi, 0, h), slice_vec(gh, 0, h)));
  Tensor z = sigmoid(add(slice_vec(gi, h, h), slice_vec(gh, h, h)));
  Tensor cand = tanh_op(add(slice_vec(gi, 2 * h, h), mul(r, slice_vec(gh, 2 * h, h))));
  // h' = cand + z * (h_prev - cand)
  return add(cand, mul(z, sub(h_prev, cand)));
}

// ---- gumbel softmax ---------------------------------------------------------------

struct GumbelSample {
  Tensor soft;  // row-stochastic relaxation, on the tape
  Tensor hard;  // exact one-hot rows; straight-through gradient via soft
};

inline std::vector<double> onehot_rows_of_argmax(const std::vector<double>& v,
                                                 std::size_t rows, std::size_t m) {
  std::vector<double> hard(rows * m, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (v[i * m + j] > v[i * m + best]) best = j;
    hard[i * m + best] = 1.0;
  }
  return hard;
}

// Relaxed one-hot with explicit noise (one Gumbel(0,1) draw per logit).
inline GumbelSample gumbel_softmax_with_noise(const Tensor& logits, double temperature,
                                              const Tensor& noise) {
  if (temperature <= 0.0)
    throw InputError("gumbel_softmax: temperature must be positive");
  if (noise.shape() != logits.shape())
    throw ShapeError("gumbel_softmax: noise shape mismatch");
  const std::size_t rows = logits.rank() == 2 ? logits.dim(0) : 1;
  const std::size_t m = logits.rank() == 2 ? logits.dim(1) : logits.dim(0);
  Tensor soft = softmax(scale(add(logits, noise), 1.0 / temperature));
  GumbelSample out;
  out.hard = straight_through(soft, onehot_rows_of_argmax(soft.values(), rows, m));
  out.soft = std::move(soft);
  return out;
}

inline Tensor draw_gumbel_noise(const std::vector<std::size_t>& shape, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.gumbel();
  return Tensor(shape, std::move(v));
}

inline GumbelSample gumbel_softmax(const Tensor& logits, double temperature, Rng& rng) {
  return gumbel_softmax_with_noise(logits, temperature,
                                   draw_gumbel_noise(logits.shape(), rng));
}

// Noise-free variant used at evaluation: hard rows are the argmax of the raw
// logits, the soft path is the tempered softmax.
inline GumbelSample gumbel_softmax_greedy(const Tensor& logits, double temperature) {
  if (temperature <= 0.0)
    throw InputError("gumbel_softmax: temperature must be positive");
  const std::size_t rows = logits.rank() == 2 ? logits.dim(0) : 1;
  const std::size_t m = logits.rank() == 2 ? logits.dim(1) : logits.dim(0);
  Tensor soft = softmax(scale(logits, 1.0 / temperature));
  GumbelSample out;
  out.hard = straight_through(soft, onehot_rows_of_argmax(logits.values(), rows, m));
  out.soft = std::move(soft);
  return out;
}

// ---- losses -----------------------------------------------------------------------

inline Tensor huber_loss(const Tensor& pred, const Tensor& target, double delta) {
  return huber_mean(pred, target, delta);
}

// Entropy of the categorical defined by `logits` (rank-1).
inline Tensor categorical_entropy(const Tensor& logits) {
  Tensor lp = log_softmax(logits);
  Tensor p = softmax(logits);
  return scale(sum_all(mul(p, lp)), -1.0);
}

// log pi(index) for a categorical over rank-1 logits.
inline Tensor categorical_log_prob(const Tensor& logits, std::size_t index) {
  return sub(take(logits, index), logsumexp(logits));
}

// ---- optimizer -----------------------------------------------------------------------

// Scales all gradients so their global L2 norm is at most `max_norm`.
// Returns the pre-clip norm.
inline double clip_gradients(const ParamRefs& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) continue;
    for (double g : p.tensor->grad()) {
      if (!std::isfinite(g))
        throw NumericError("NaN/Inf gradient in parameter '" + p.name + "'");
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.tensor->has_grad()) continue;
      auto node = p.tensor->node();
      for (double& g : node->grad) g *= s;
    }
  }
  return norm;
}

// Bias-corrected Adam without weight decay. Gradients are clipped to a global
// norm bound before every step.
class Adam {
 public:
  Adam(double lr, double max_grad_norm = 10.0, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-5)
      : lr_(lr), max_grad_norm_(max_grad_norm), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  int64_t step_count() const { return step_; }
  double learning_rate() const { return lr_; }

  void step(const ParamRefs& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].tensor->numel(), 0.0);
        v_[i].assign(params[i].tensor->numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw InputError("adam: parameter set changed");
    clip_gradients(params, max_grad_norm_);
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = *params[i].tensor;
      if (m_[i].size() != t.numel()) throw ShapeError("adam: moment shape mismatch");
      const bool has = t.has_grad();
      auto& value = t.values_mut();
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = has ? t.grad()[j] : 0.0;
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_, max_grad_norm_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline void zero_gradients(const ParamRefs& params) {
  for (const auto& p : params) p.tensor->drop_grad();
}

}  // namespace magex
