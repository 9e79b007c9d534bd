// SPDX-License-Identifier: Apache-2.0
//
// Group queries, cascaded grouping-transformer stacks and prediction heads.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lirgad/nn.hpp"

namespace lirgad {

struct GroupingStackConfig {
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t width = 64;
  std::size_t ffn_width = 256;

  void validate() const {
    if (heads == 0 || width % heads != 0) {
      throw ConfigError("grouping stack: width " + std::to_string(width) +
                        " not divisible by " + std::to_string(heads) + " heads");
    }
    if (layers == 0) throw ConfigError("grouping stack: needs at least one layer");
  }
};

/// One pre-norm layer over the token set [group tokens; actor tokens]:
/// self-attention, cross-attention to frame features, then an FFN, each
/// wrapped as x + f(LN(x)).
class GroupingLayer {
 public:
  GroupingLayer() = default;
  GroupingLayer(const GroupingStackConfig& cfg, Rng& rng)
      : ln_self_(cfg.width),
        self_attn_(cfg.width, cfg.heads, rng),
        ln_cross_(cfg.width),
        ln_frames_(cfg.width),
        cross_attn_(cfg.width, cfg.heads, rng),
        ln_ffn_(cfg.width),
        ffn_(cfg.width, cfg.ffn_width, cfg.width, rng) {}

  Tensor operator()(const Tensor& tokens, const Tensor& frames) const {
    const Tensor n1 = ln_self_(tokens);
    Tensor x = add(tokens, self_attn_(n1, n1));
    x = add(x, cross_attn_(ln_cross_(x), ln_frames_(frames)));
    return add(x, ffn_(ln_ffn_(x)));
  }

  void collect(ParamList& out, const std::string& prefix) const {
    ln_self_.collect(out, prefix + ".ln_self");
    self_attn_.collect(out, prefix + ".self_attn");
    ln_cross_.collect(out, prefix + ".ln_cross");
    ln_frames_.collect(out, prefix + ".ln_frames");
    cross_attn_.collect(out, prefix + ".cross_attn");
    ln_ffn_.collect(out, prefix + ".ln_ffn");
    ffn_.collect(out, prefix + ".ffn");
  }

 private:
  LayerNorm ln_self_;
  MultiHeadAttention self_attn_;
  LayerNorm ln_cross_;
  LayerNorm ln_frames_;
  MultiHeadAttention cross_attn_;
  LayerNorm ln_ffn_;
  FeedForward ffn_;
};

struct GroupActorFeatures {
  Tensor groups;  // K×D
  Tensor actors;  // A×D
};

/// N grouping layers followed by a closing layer norm.
class GroupingStack {
 public:
  GroupingStack() = default;
  GroupingStack(const GroupingStackConfig& cfg, Rng& rng) : cfg_(cfg), final_ln_(cfg.width) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.layers; ++i) layers_.emplace_back(cfg, rng);
  }

  GroupActorFeatures operator()(const Tensor& groups, const Tensor& actors,
                                const Tensor& frames) const {
    const std::size_t d = cfg_.width;
    for (const Tensor* t : {&groups, &frames}) {
      if (t->cols() != d) {
        throw DimensionError("grouping stack: feature width " + std::to_string(t->cols()) +
                             " vs configured " + std::to_string(d));
      }
    }
    const std::size_t k = groups.rows();
    const bool has_actors = actors.defined() && actors.numel() > 0;
    if (has_actors && actors.cols() != d) {
      throw DimensionError("grouping stack: actor width " + std::to_string(actors.cols()) +
                           " vs configured " + std::to_string(d));
    }
    Tensor x = has_actors ? concat_rows({groups, actors}) : groups;
    for (const auto& layer : layers_) x = layer(x, frames);
    x = final_ln_(x);
    GroupActorFeatures out;
    out.groups = slice_rows(x, 0, k);
    out.actors = slice_rows(x, k, x.rows());
    return out;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(out, prefix + ".layer" + std::to_string(i));
    final_ln_.collect(out, prefix + ".final_ln");
  }

 private:
  GroupingStackConfig cfg_;
  std::vector<GroupingLayer> layers_;
  LayerNorm final_ln_;
};

struct PredictionSet {
  Tensor group_logits;       // K×(C_g+1); last column is the no-group class
  Tensor membership_logits;  // A×(K+1); last column is the outlier slot
  Tensor action_logits;      // A×C_ind
  Tensor act_logits;         // C (multi-label)
};

struct HeadsConfig {
  std::size_t width = 64;       // D_vis
  std::size_t text_width = 64;  // D_text
  std::size_t group_classes = 6;
  std::size_t actions = 7;
  std::size_t act_classes = 7;
};

/// Prediction heads. Membership logits are scaled dot products between
/// projected actor and group features, with an extra outlier column scored
/// by a linear map of the actor feature.
class PredictionHeads {
 public:
  PredictionHeads() = default;
  PredictionHeads(const HeadsConfig& cfg, Rng& rng)
      : cfg_(cfg),
        group_(cfg.width, cfg.group_classes + 1, rng),
        member_actor_(cfg.width, cfg.width, rng),
        member_group_(cfg.width, cfg.width, rng),
        outlier_(cfg.width, 1, rng),
        action_(cfg.width, cfg.actions, rng),
        act_text_(cfg.text_width, cfg.text_width, cfg.act_classes, rng),
        act_visual_(cfg.width, cfg.width, cfg.act_classes, rng) {}

  /// `h_act` may be undefined, in which case the multi-label logits come
  /// from mean-pooled group features.
  PredictionSet operator()(const Tensor& v_g, const Tensor& v_a, const Tensor& h_act) const {
    PredictionSet p;
    const std::size_t a = v_a.defined() ? v_a.rows() : 0;
    const std::size_t k = v_g.rows();
    p.group_logits = group_(v_g);
    if (a > 0) {
      const Tensor dots = scale(matmul_nt(member_actor_(v_a), member_group_(v_g)),
                                1.0 / std::sqrt(static_cast<double>(cfg_.width)));
      p.membership_logits = concat_cols({dots, outlier_(v_a)});
      p.action_logits = action_(v_a);
    } else {
      p.membership_logits = Tensor::zeros({0, k + 1});
      p.action_logits = Tensor::zeros({0, cfg_.actions});
    }
    p.act_logits = h_act.defined() ? act_text_(h_act) : act_visual_(mean_rows(v_g));
    return p;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    group_.collect(out, prefix + ".group");
    member_actor_.collect(out, prefix + ".member_actor");
    member_group_.collect(out, prefix + ".member_group");
    outlier_.collect(out, prefix + ".outlier");
    action_.collect(out, prefix + ".action");
    act_text_.collect(out, prefix + ".act_text");
    act_visual_.collect(out, prefix + ".act_visual");
  }

 private:
  HeadsConfig cfg_;
  Linear group_;
  Linear member_actor_;
  Linear member_group_;
  Linear outlier_;
  Linear action_;
  FeedForward act_text_;
  FeedForward act_visual_;
};

}  // namespace lirgad
