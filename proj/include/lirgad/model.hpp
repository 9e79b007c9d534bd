// SPDX-License-Identifier: Apache-2.0
//
// The full detector: frozen features and prompt in, prediction set out.
//
//   stage 1 grouping stack (q, x_a, v_f) → MDAF(v_a, v_g, h_a, h_g)
//   → stage 2 grouping stack → heads
//
// The reasoning decoder supplies h_a/h_g. Unless reasoning training is on,
// the decoder is frozen entirely and its hidden states can be cached per clip.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lirgad/gad.hpp"
#include "lirgad/losses.hpp"
#include "lirgad/mdaf.hpp"
#include "lirgad/reasoning.hpp"

namespace lirgad {

struct ModelConfig {
  std::size_t group_tokens = 12;  // K
  std::size_t layers = 3;         // N, per grouping stack
  std::size_t heads = 4;
  std::size_t d_vis = 64;
  std::size_t d_text = 64;
  DecoderConfig decoder{};
  MdafVariant variant = MdafVariant::kSP2;
  bool use_group_tokens = true;
  bool use_act_token = true;
  bool use_l_act = true;
  bool train_reasoning = false;
  Taxonomy taxonomy{};

  bool mdaf_active() const {
    return variant != MdafVariant::kBypass && (use_group_tokens || use_act_token);
  }
  /// The decoder is consulted when MDAF reads its states or the multi-label
  /// head reads h_a.
  bool needs_decoder() const { return mdaf_active() || use_act_token || train_reasoning; }

  void validate() const {
    if (group_tokens == 0) throw ConfigError("K must be >= 1");
    if (heads == 0 || d_vis % heads != 0) throw ConfigError("D_vis must be divisible by heads");
    decoder.validate();
    if (decoder.d_text != d_text) throw ConfigError("decoder width must equal D_text");
  }
};

struct ClipInputs {
  FeatureBundle features;
  PromptSequence prompt;
  /// Precomputed decoder states (used when the decoder is not trained).
  std::optional<HiddenStates> cached_hidden;
};

struct ForwardResult {
  PredictionSet pred;
  Tensor v_a;  // final actor features
  Tensor v_g;  // final group features
  std::optional<DecoderOutput> decoder;
};

class LirGadModel {
 public:
  LirGadModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), vocab_(cfg.group_tokens) {
    cfg.validate();
    Rng rng(seed);
    const GroupingStackConfig stack{cfg.layers, cfg.heads, cfg.d_vis, 4 * cfg.d_vis};
    queries_ = randn({cfg.group_tokens, cfg.d_vis}, 1.0, rng);
    stage1_ = GroupingStack(stack, rng);
    stage2_ = GroupingStack(stack, rng);
    MdafConfig mcfg;
    mcfg.variant = cfg.variant;
    mcfg.heads = cfg.heads;
    mcfg.width = cfg.d_vis;
    mcfg.text_width = cfg.d_text;
    mcfg.ffn_width = 4 * cfg.d_vis;
    mcfg.use_group_tokens = cfg.use_group_tokens;
    mcfg.use_act_token = cfg.use_act_token;
    mdaf_ = Mdaf(mcfg, rng);
    HeadsConfig hcfg;
    hcfg.width = cfg.d_vis;
    hcfg.text_width = cfg.d_text;
    hcfg.group_classes = static_cast<std::size_t>(cfg.taxonomy.num_group_classes());
    hcfg.actions = static_cast<std::size_t>(cfg.taxonomy.num_actions());
    hcfg.act_classes = static_cast<std::size_t>(cfg.taxonomy.num_classes());
    heads_ = PredictionHeads(hcfg, rng);
    decoder_.emplace(cfg.decoder, vocab_, cfg.d_vis, rng);

    params_.add("queries", queries_);
    stage1_.collect(params_, "stage1");
    mdaf_.collect(params_, "mdaf");
    stage2_.collect(params_, "stage2");
    heads_.collect(params_, "heads");
    decoder_->collect(params_, "decoder");
    if (!cfg.train_reasoning) {
      ParamList dec;
      decoder_->collect(dec, "decoder");
      for (auto& p : dec.items()) p.tensor.set_requires_grad(false);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamList& params() { return params_; }
  const ParamList& params() const { return params_; }
  ReasoningDecoder& decoder() { return *decoder_; }
  const ReasoningDecoder& decoder() const { return *decoder_; }
  Mdaf& mdaf() { return mdaf_; }
  Tensor& queries() { return queries_; }
  const GroupingStack& stage1() const { return stage1_; }
  const GroupingStack& stage2() const { return stage2_; }

  ClipInputs prepare(const SceneClip& clip, FeatureBundle features) const {
    ClipInputs in{std::move(features), build_prompt(clip, vocab_), std::nullopt};
    if (cfg_.needs_decoder() && !cfg_.train_reasoning) {
      NoGradScope no_grad;
      in.cached_hidden = decoder_->forward(in.prompt, in.features).hidden;
    }
    return in;
  }

  ForwardResult forward(const ClipInputs& in) const {
    ForwardResult r;
    HiddenStates hidden;
    if (cfg_.needs_decoder()) {
      if (in.cached_hidden && !cfg_.train_reasoning) {
        hidden = *in.cached_hidden;
      } else {
        r.decoder = decoder_->forward(in.prompt, in.features);
        hidden = r.decoder->hidden;
      }
    }
    const Tensor& x_a = in.features.actor_features;
    const Tensor& v_f = in.features.frame_features;
    const auto s1 = stage1_(queries_, x_a, v_f);
    const MdafOutput fused =
        cfg_.mdaf_active()
            ? mdaf_(s1.actors, s1.groups, cfg_.use_act_token ? hidden.act : Tensor(),
                    cfg_.use_group_tokens ? hidden.groups : Tensor())
            : mdaf_bypass(s1.actors, s1.groups);
    const auto s2 = stage2_(fused.groups, fused.actors, v_f);
    r.v_a = s2.actors;
    r.v_g = s2.groups;
    r.pred = heads_(s2.groups, s2.actors, cfg_.use_act_token ? hidden.act : Tensor());
    return r;
  }

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  Tensor queries_;
  GroupingStack stage1_;
  GroupingStack stage2_;
  Mdaf mdaf_;
  PredictionHeads heads_;
  std::optional<ReasoningDecoder> decoder_;
  ParamList params_;
};

struct LossOptions {
  LossWeights weights{};
  double mu = 1.0;
  bool use_l_act = true;
  bool train_reasoning = false;
};

struct ClipLoss {
  LossParts parts;
  Tensor total;
  Matching matching;
};

/// Matching (no gradient) followed by the weighted objective. A supplied
/// `fixed` matching is used as is instead of being recomputed.
inline ClipLoss clip_loss(const LirGadModel& model, const ForwardResult& fw,
                          const ClipInputs& in, const SceneClip& clip, const LossOptions& opt,
                          const Matching* fixed = nullptr) {
  ClipLoss out;
  out.matching = fixed ? *fixed : hungarian(matching_cost(fw.pred, clip, opt.mu));
  const auto& tax = model.config().taxonomy;
  const auto label = multi_hot_label(clip, tax);
  out.parts.ind = individual_action_loss(fw.pred.action_logits, clip);
  out.parts.group = group_activity_loss(fw.pred.group_logits, out.matching, clip);
  out.parts.mem = membership_loss(fw.pred.membership_logits, out.matching, clip);
  out.parts.con = consistency_loss(fw.v_a, fw.v_g, out.matching, clip);
  out.parts.act = act_multilabel_loss(fw.pred.act_logits, label);
  if (opt.train_reasoning && fw.decoder) {
    const auto& vocab = model.vocab();
    out.parts.nll = add(nll_act(fw.decoder->logits, in.prompt, vocab),
                        nll_group(fw.decoder->logits, in.prompt, vocab));
  }
  out.total = total_loss(out.parts, opt.weights, opt.use_l_act);
  return out;
}

}  // namespace lirgad
