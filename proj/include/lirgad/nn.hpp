// SPDX-License-Identifier: Apache-2.0
//
// Small neural-network building blocks over the autodiff ops.
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lirgad/ops.hpp"

namespace lirgad {

using Rng = std::mt19937_64;

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Flat, ordered list of a model's parameters; order defines checkpoint and
/// optimizer layout.
class ParamList {
 public:
  void add(std::string name, const Tensor& t) { items_.push_back({std::move(name), t}); }
  const std::vector<NamedParam>& items() const { return items_; }
  std::vector<NamedParam>& items() { return items_; }

  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out;
    for (const auto& p : items_)
      if (p.tensor.requires_grad()) out.push_back(p.tensor);
    return out;
  }
  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::vector<NamedParam> items_;
};

inline Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor ones(Shape shape, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = 1.0;
  return t;
}

/// W + A·B with W: d_out×d_in, A: d_out×r, B: r×d_in.
inline Tensor apply_low_rank_adapter(const Tensor& w, const Tensor& a, const Tensor& b) {
  detail::require_matrix(w, "low_rank_adapter");
  detail::require_matrix(a, "low_rank_adapter");
  detail::require_matrix(b, "low_rank_adapter");
  const std::size_t d_out = w.shape()[0], d_in = w.shape()[1], r = a.shape()[1];
  if (r >= std::min(d_out, d_in)) {
    throw ConfigError("low-rank adapter rank " + std::to_string(r) +
                      " must be below min(" + std::to_string(d_out) + "," +
                      std::to_string(d_in) + ")");
  }
  if (a.shape()[0] != d_out || b.shape()[0] != r || b.shape()[1] != d_in) {
    throw DimensionError("low-rank adapter: W " + shape_str(w.shape()) + ", A " +
                         shape_str(a.shape()) + ", B " + shape_str(b.shape()));
  }
  return add(w, matmul(a, b));
}

/// y = x Wᵀ + b, optionally with a rank-r adapter on W.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true)
      : weight_(randn({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {
    if (bias) bias_ = Tensor::zeros({out}, true);
  }

  /// Adds adapter factors; A starts at zero so W + A·B == W.
  void add_adapter(std::size_t rank, Rng& rng) {
    const std::size_t out = weight_.shape()[0], in = weight_.shape()[1];
    if (rank < 1 || rank >= std::min(out, in)) {
      throw ConfigError("adapter rank " + std::to_string(rank) + " invalid for " +
                        shape_str(weight_.shape()));
    }
    adapter_a_ = Tensor::zeros({out, rank}, true);
    adapter_b_ = randn({rank, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  }

  void zero_init() {
    for (double& v : weight_.data()) v = 0.0;
    if (bias_.defined())
      for (double& v : bias_.data()) v = 0.0;
  }

  /// Freezes W and b; adapter factors stay trainable.
  void freeze_body() {
    weight_.set_requires_grad(false);
    if (bias_.defined()) bias_.set_requires_grad(false);
  }

  Tensor effective_weight() const {
    return adapter_a_.defined() ? apply_low_rank_adapter(weight_, adapter_a_, adapter_b_)
                                : weight_;
  }

  Tensor operator()(const Tensor& x) const {
    const Tensor x2 = x.dim() == 2 ? x : reshape(x, {1, x.numel()});
    Tensor y = matmul_nt(x2, effective_weight());
    if (bias_.defined()) y = add_row(y, bias_);
    return x.dim() == 2 ? y : reshape(y, {y.numel()});
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.add(prefix + ".weight", weight_);
    if (bias_.defined()) out.add(prefix + ".bias", bias_);
    if (adapter_a_.defined()) {
      out.add(prefix + ".adapter_a", adapter_a_);
      out.add(prefix + ".adapter_b", adapter_b_);
    }
  }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  const Tensor& adapter_a() const { return adapter_a_; }
  const Tensor& adapter_b() const { return adapter_b_; }
  std::size_t in_features() const { return weight_.shape()[1]; }
  std::size_t out_features() const { return weight_.shape()[0]; }

 private:
  Tensor weight_;
  Tensor bias_;
  Tensor adapter_a_;
  Tensor adapter_b_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gain_(ones({d})), bias_(Tensor::zeros({d}, true)) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain_, bias_); }
  void freeze() {
    gain_.set_requires_grad(false);
    bias_.set_requires_grad(false);
  }
  void collect(ParamList& out, const std::string& prefix) const {
    out.add(prefix + ".gain", gain_);
    out.add(prefix + ".bias", bias_);
  }

 private:
  Tensor gain_;
  Tensor bias_;
};

/// Projected multi-head attention: out = Wo · attn(Wq x, Wk c, Wv c).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d, std::size_t heads, Rng& rng)
      : heads_(heads),
        q_(d, d, rng),
        k_(d, d, rng),
        v_(d, d, rng),
        o_(d, d, rng) {
    if (heads == 0 || d % heads != 0) {
      throw ConfigError("attention width " + std::to_string(d) +
                        " not divisible by " + std::to_string(heads) + " heads");
    }
  }

  /// Attention output before the output projection.
  Tensor mix(const Tensor& query, const Tensor& context, const AttentionMask* mask = nullptr) const {
    return attention(q_(query), k_(context), v_(context), mask, heads_);
  }

  Tensor operator()(const Tensor& query, const Tensor& context,
                    const AttentionMask* mask = nullptr) const {
    return o_(mix(query, context, mask));
  }

  Linear& out_proj() { return o_; }
  Linear& value_proj() { return v_; }
  const Linear& value_proj() const { return v_; }

  void add_adapters(std::size_t rank, Rng& rng) {
    for (Linear* l : {&q_, &k_, &v_, &o_}) l->add_adapter(rank, rng);
  }
  void freeze_body() {
    for (Linear* l : {&q_, &k_, &v_, &o_}) l->freeze_body();
  }
  void collect(ParamList& out, const std::string& prefix) const {
    q_.collect(out, prefix + ".q");
    k_.collect(out, prefix + ".k");
    v_.collect(out, prefix + ".v");
    o_.collect(out, prefix + ".o");
  }

 private:
  std::size_t heads_ = 1;
  Linear q_, k_, v_, o_;
};

/// Two-layer GELU MLP.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t d_in, std::size_t hidden, std::size_t d_out, Rng& rng)
      : fc1_(d_in, hidden, rng), fc2_(hidden, d_out, rng) {}

  Tensor operator()(const Tensor& x) const { return fc2_(gelu(fc1_(x))); }
  Linear& second() { return fc2_; }
  void freeze_body() {
    fc1_.freeze_body();
    fc2_.freeze_body();
  }
  void collect(ParamList& out, const std::string& prefix) const {
    fc1_.collect(out, prefix + ".fc1");
    fc2_.collect(out, prefix + ".fc2");
  }

 private:
  Linear fc1_, fc2_;
};

}  // namespace lirgad
