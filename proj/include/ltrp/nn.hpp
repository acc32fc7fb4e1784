#pragma once

// Minimal transformer building blocks with hand-written backward passes.
//
// Sequences are (tokens x features) row-major matrices. Every layer exposes
// `forward`, which optionally records what backward needs into a cache, and
// `backward`, which accumulates parameter gradients and returns the gradient
// with respect to the layer input. Layers are templated on the scalar type so
// the float models used for training can be gradient-checked in double.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ltrp/errors.hpp"
#include "ltrp/rng.hpp"

namespace ltrp::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// 1 = token may be attended to. An empty mask allows every key.
using KeyMask = std::vector<std::uint8_t>;

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool decay = false;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool apply_decay = false)
      : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)),
        decay(apply_decay) {}
};

template <typename T>
void xavier_uniform(Mat<T>& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
void normal_init(Mat<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    // truncated at two standard deviations
    double v;
    do {
      v = rng.normal();
    } while (std::abs(v) > 2.0);
    m.data()[i] = static_cast<T>(v * stddev);
  }
}

template <typename T>
struct Linear {
  Param<T> weight;
  Param<T> bias;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng)
      : weight(name + ".weight", in, out, true), bias(name + ".bias", 1, out) {
    xavier_uniform(weight.value, rng);
  }

  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  template <class F>
  void for_each_param(F&& f) {
    f(weight);
    f(bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f(weight);
    f(bias);
  }
};

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  Vec<T> rstd;
};

template <typename T>
struct LayerNorm {
  Param<T> gamma;
  Param<T> beta;
  T eps = static_cast<T>(1e-6);

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim) : gamma(name + ".weight", 1, dim), beta(name + ".bias", 1, dim) {
    gamma.value.setOnes();
  }

  Mat<T> forward(const Mat<T>& x, LayerNormCache<T>* cache) const {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    Mat<T> xhat(n, d);
    Vec<T> rstd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mean = x.row(i).mean();
      const T var = (x.row(i).array() - mean).square().mean();
      rstd(i) = T(1) / std::sqrt(var + eps);
      xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
    }
    Mat<T> y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
    y.rowwise() += beta.value.row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->rstd = std::move(rstd);
    }
    return y;
  }

  Mat<T> backward(const LayerNormCache<T>& cache, const Mat<T>& dy) {
    gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    const Mat<T> dxhat = (dy.array().rowwise() * gamma.value.row(0).array()).matrix();
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const T m1 = dxhat.row(i).mean();
      const T m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
      dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
    }
    return dx;
  }

  template <class F>
  void for_each_param(F&& f) {
    f(gamma);
    f(beta);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f(gamma);
    f(beta);
  }
};

template <typename T>
inline T gelu(T x) {
  return static_cast<T>(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
inline T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
struct AttentionCache {
  Mat<T> x;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;
  Mat<T> context;
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> qkv;
  Linear<T> proj;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int dim, int num_heads, Rng& rng)
      : qkv(name + ".qkv", dim, 3 * dim, rng), proj(name + ".proj", dim, dim, rng), heads(num_heads) {
    if (num_heads < 1 || dim % num_heads != 0)
      throw InvalidInput("attention width must be divisible by the head count");
  }

  int dim() const { return proj.in_features(); }

  /// `attention_out`, when given, receives one (queries x keys) weight matrix per head.
  Mat<T> forward(const Mat<T>& x, const KeyMask& mask, AttentionCache<T>* cache,
                 std::vector<Mat<T>>* attention_out = nullptr) const {
    const Eigen::Index n = x.rows();
    const int d = dim();
    const int hd = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Mat<T> qkv_out = qkv.forward(x);
    Mat<T> context(n, d);
    std::vector<Mat<T>> probs;
    if (cache) probs.reserve(heads);
    if (attention_out) attention_out->clear();
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv_out.middleCols(h * hd, hd);
      const auto k = qkv_out.middleCols(d + h * hd, hd);
      const auto v = qkv_out.middleCols(2 * d + h * hd, hd);
      Mat<T> s = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
          if (!mask.empty() && !mask[j]) continue;
          mx = std::max(mx, s(i, j));
        }
        T sum = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
          if (!mask.empty() && !mask[j]) {
            s(i, j) = 0;
          } else {
            s(i, j) = std::exp(s(i, j) - mx);
            sum += s(i, j);
          }
        }
        s.row(i) /= sum;
      }
      context.middleCols(h * hd, hd).noalias() = s * v;
      if (attention_out) attention_out->push_back(s);
      if (cache) probs.push_back(std::move(s));
    }
    Mat<T> y = proj.forward(context);
    if (cache) {
      cache->x = x;
      cache->qkv = std::move(qkv_out);
      cache->probs = std::move(probs);
      cache->context = std::move(context);
    }
    return y;
  }

  Mat<T> backward(const AttentionCache<T>& cache, const Mat<T>& dy) {
    const int d = dim();
    const int hd = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const Mat<T> dcontext = proj.backward(cache.context, dy);
    Mat<T> dqkv(cache.qkv.rows(), cache.qkv.cols());
    for (int h = 0; h < heads; ++h) {
      const auto q = cache.qkv.middleCols(h * hd, hd);
      const auto k = cache.qkv.middleCols(d + h * hd, hd);
      const auto v = cache.qkv.middleCols(2 * d + h * hd, hd);
      const Mat<T>& p = cache.probs[h];
      const auto dout = dcontext.middleCols(h * hd, hd);
      const Mat<T> dp = dout * v.transpose();
      dqkv.middleCols(2 * d + h * hd, hd).noalias() = p.transpose() * dout;
      const Vec<T> row_dot = (dp.array() * p.array()).rowwise().sum();
      const Mat<T> ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix() * scale;
      dqkv.middleCols(h * hd, hd).noalias() = ds * k;
      dqkv.middleCols(d + h * hd, hd).noalias() = ds.transpose() * q;
    }
    return qkv.backward(cache.x, dqkv);
  }

  template <class F>
  void for_each_param(F&& f) {
    qkv.for_each_param(f);
    proj.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    qkv.for_each_param(f);
    proj.for_each_param(f);
  }
};

template <typename T>
struct BlockCache {
  LayerNormCache<T> ln1;
  Mat<T> h1;
  AttentionCache<T> attn;
  LayerNormCache<T> ln2;
  Mat<T> h2;
  Mat<T> pre_act;
  Mat<T> act;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
template <typename T>
struct Block {
  LayerNorm<T> ln1;
  MultiHeadAttention<T> attn;
  LayerNorm<T> ln2;
  Linear<T> fc1;
  Linear<T> fc2;

  Block() = default;
  Block(const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng)
      : ln1(name + ".norm1", dim),
        attn(name + ".attn", dim, heads, rng),
        ln2(name + ".norm2", dim),
        fc1(name + ".mlp.fc1", dim, dim * mlp_ratio, rng),
        fc2(name + ".mlp.fc2", dim * mlp_ratio, dim, rng) {}

  Mat<T> forward(const Mat<T>& x, const KeyMask& mask, BlockCache<T>* cache,
                 std::vector<Mat<T>>* attention_out = nullptr) const {
    LayerNormCache<T>* ln1c = cache ? &cache->ln1 : nullptr;
    LayerNormCache<T>* ln2c = cache ? &cache->ln2 : nullptr;
    Mat<T> h1 = ln1.forward(x, ln1c);
    Mat<T> mid = x + attn.forward(h1, mask, cache ? &cache->attn : nullptr, attention_out);
    Mat<T> h2 = ln2.forward(mid, ln2c);
    Mat<T> pre = fc1.forward(h2);
    Mat<T> act = pre.unaryExpr([](T v) { return gelu(v); });
    Mat<T> out = mid + fc2.forward(act);
    if (cache) {
      cache->h1 = std::move(h1);
      cache->h2 = std::move(h2);
      cache->pre_act = std::move(pre);
      cache->act = std::move(act);
    }
    return out;
  }

  Mat<T> backward(const BlockCache<T>& cache, const Mat<T>& dy) {
    const Mat<T> dact = fc2.backward(cache.act, dy);
    const Mat<T> dpre = (dact.array() * cache.pre_act.unaryExpr([](T v) { return gelu_grad(v); }).array()).matrix();
    const Mat<T> dh2 = fc1.backward(cache.h2, dpre);
    const Mat<T> dmid = dy + ln2.backward(cache.ln2, dh2);
    const Mat<T> dh1 = attn.backward(cache.attn, dmid);
    return dmid + ln1.backward(cache.ln1, dh1);
  }

  template <class F>
  void for_each_param(F&& f) {
    ln1.for_each_param(f);
    attn.for_each_param(f);
    ln2.for_each_param(f);
    fc1.for_each_param(f);
    fc2.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    ln1.for_each_param(f);
    attn.for_each_param(f);
    ln2.for_each_param(f);
    fc1.for_each_param(f);
    fc2.for_each_param(f);
  }
};

template <typename T>
struct StackCache {
  std::vector<BlockCache<T>> blocks;
  LayerNormCache<T> norm;
};

struct StackShape {
  int depth = 1;
  int width = 64;
  int heads = 4;
  int mlp_ratio = 4;
};

/// Blocks followed by a final layer norm.
template <typename T>
struct TransformerStack {
  std::vector<Block<T>> blocks;
  LayerNorm<T> norm;

  TransformerStack() = default;
  TransformerStack(const std::string& name, const StackShape& shape, Rng& rng) : norm(name + ".norm", shape.width) {
    blocks.reserve(shape.depth);
    for (int b = 0; b < shape.depth; ++b)
      blocks.emplace_back(name + ".blocks." + std::to_string(b), shape.width, shape.heads, shape.mlp_ratio, rng);
  }

  /// `attention_out` receives depth x heads matrices, layer-major.
  Mat<T> forward(const Mat<T>& x, const KeyMask& mask, StackCache<T>* cache,
                 std::vector<std::vector<Mat<T>>>* attention_out = nullptr) const {
    if (cache) cache->blocks.resize(blocks.size());
    if (attention_out) attention_out->assign(blocks.size(), {});
    Mat<T> h = x;
    for (std::size_t b = 0; b < blocks.size(); ++b)
      h = blocks[b].forward(h, mask, cache ? &cache->blocks[b] : nullptr,
                            attention_out ? &(*attention_out)[b] : nullptr);
    return norm.forward(h, cache ? &cache->norm : nullptr);
  }

  Mat<T> backward(const StackCache<T>& cache, const Mat<T>& dy) {
    Mat<T> g = norm.backward(cache.norm, dy);
    for (std::size_t b = blocks.size(); b-- > 0;) g = blocks[b].backward(cache.blocks[b], g);
    return g;
  }

  template <class F>
  void for_each_param(F&& f) {
    for (auto& b : blocks) b.for_each_param(f);
    norm.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    for (const auto& b : blocks) b.for_each_param(f);
    norm.for_each_param(f);
  }
};

/// Fixed 2-D sine-cosine embedding: the first half of the width encodes the
/// row, the second half the column. Width must be divisible by 4.
template <typename T>
Mat<T> sincos_position_embedding(int rows, int cols, int width) {
  if (width % 4 != 0) throw InvalidInput("sin-cos position embedding needs a width divisible by 4");
  const int quarter = width / 4;
  Mat<T> out(rows * cols, width);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int idx = r * cols + c;
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        out(idx, i) = static_cast<T>(std::sin(r * omega));
        out(idx, quarter + i) = static_cast<T>(std::cos(r * omega));
        out(idx, 2 * quarter + i) = static_cast<T>(std::sin(c * omega));
        out(idx, 3 * quarter + i) = static_cast<T>(std::cos(c * omega));
      }
    }
  }
  return out;
}

/// Collects raw pointers to every parameter of a module, in visitation order.
template <typename T, typename Module>
std::vector<Param<T>*> collect_params(Module& module) {
  std::vector<Param<T>*> out;
  module.for_each_param([&](Param<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
void zero_grad(const std::vector<Param<T>*>& params) {
  for (auto* p : params) p->grad.setZero();
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

/// AdamW with global-norm gradient clipping. Decay applies to parameters
/// flagged `decay` (linear weights).
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Param<T>*> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (auto* p : params_) {
      m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  /// Scales accumulated gradients by `grad_scale`, then updates with learning rate `lr`.
  void step(double lr, double grad_scale = 1.0) {
    ++t_;
    double sq = 0.0;
    for (auto* p : params_) sq += static_cast<double>(p->grad.squaredNorm());
    const double norm = std::sqrt(sq) * grad_scale;
    double scale = grad_scale;
    if (options_.clip_norm > 0.0 && norm > options_.clip_norm) scale *= options_.clip_norm / norm;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param<T>& p = *params_[i];
      const Mat<T> g = p.grad * static_cast<T>(scale);
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      const T step_size = static_cast<T>(lr / bc1);
      const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
      if (p.decay && options_.weight_decay > 0.0) p.value *= static_cast<T>(1.0 - lr * options_.weight_decay);
      p.value.array() -= step_size * m_[i].array() /
                         (v_[i].array().sqrt() * denom_scale + static_cast<T>(options_.eps));
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Param<T>*> params_;
  AdamOptions options_;
  std::vector<Mat<T>> m_;
  std::vector<Mat<T>> v_;
  std::uint64_t t_ = 0;
};

/// Linear warmup followed by cosine decay to 10% of the base rate.
inline double warmup_cosine_lr(double base_lr, std::size_t step, std::size_t warmup_steps, std::size_t total_steps) {
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress))));
}

/// FLOPs of a transformer stack under the multiply-accumulate convention used
/// throughout the project: 12*n*d^2 (at MLP ratio 4) plus 2*n^2*d per block.
struct StackFlops {
  double attention = 0.0;  // n^2 terms (scores and weighted values)
  double projections = 0.0;  // QKV + output projection
  double mlp = 0.0;
  double total() const { return attention + projections + mlp; }
};

inline StackFlops stack_flops(const StackShape& shape, double tokens) {
  const double d = shape.width;
  StackFlops f;
  f.projections = shape.depth * 4.0 * tokens * d * d;
  f.mlp = shape.depth * 2.0 * shape.mlp_ratio * tokens * d * d;
  f.attention = shape.depth * 2.0 * tokens * tokens * d;
  return f;
}

}  // namespace ltrp::nn
