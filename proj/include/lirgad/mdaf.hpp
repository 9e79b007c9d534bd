// SPDX-License-Identifier: Apache-2.0
//
// Multimodal dual-alignment fusion: visual group/actor features attend to
// projected decoder hidden states, then a residual FFN fuses the enhanced
// token set.
#pragma once

#include <optional>
#include <string>

#include "lirgad/nn.hpp"

namespace lirgad {

enum class MdafVariant { kSP2, kSP1, kCON1, kCON2, kBypass };

inline std::string to_string(MdafVariant v) {
  switch (v) {
    case MdafVariant::kSP2: return "sp2";
    case MdafVariant::kSP1: return "sp1";
    case MdafVariant::kCON1: return "con1";
    case MdafVariant::kCON2: return "con2";
    case MdafVariant::kBypass: return "bypass";
  }
  return "?";
}

inline MdafVariant parse_mdaf_variant(const std::string& s) {
  for (MdafVariant v : {MdafVariant::kSP2, MdafVariant::kSP1, MdafVariant::kCON1,
                        MdafVariant::kCON2, MdafVariant::kBypass})
    if (to_string(v) == s) return v;
  throw ConfigError("mdaf.variant must be one of sp2, sp1, con1, con2, bypass; got '" + s + "'");
}

struct MdafConfig {
  MdafVariant variant = MdafVariant::kSP2;
  std::size_t heads = 4;
  std::size_t width = 64;       // D_vis
  std::size_t text_width = 64;  // D_text
  std::size_t ffn_width = 256;
  /// Table-3 style toggles: which hidden states participate.
  bool use_group_tokens = true;
  bool use_act_token = true;
};

struct MdafOutput {
  Tensor actors;  // v'_a
  Tensor groups;  // v'_g
};

/// Identity pass-through used when both token types are ablated.
inline MdafOutput mdaf_bypass(const Tensor& v_a, const Tensor& v_g) { return {v_a, v_g}; }

/// The output projection of each cross-attention and the FFN's second map
/// start at zero, so a freshly built module is the identity.
class Mdaf {
 public:
  Mdaf() = default;
  Mdaf(const MdafConfig& cfg, Rng& rng)
      : cfg_(cfg),
        text_proj_(cfg.text_width, cfg.width, rng),
        ln_g_(cfg.width),
        attn_g_(cfg.width, cfg.heads, rng),
        ln_a_(cfg.width),
        attn_a_(cfg.width, cfg.heads, rng),
        ln_fuse_(cfg.width),
        ffn_(cfg.width, cfg.ffn_width, cfg.width, rng) {
    attn_g_.out_proj().zero_init();
    attn_a_.out_proj().zero_init();
    ffn_.second().zero_init();
  }

  const MdafConfig& config() const { return cfg_; }

  /// h_act: D_text vector (or 1×D_text); h_groups: K×D_text. Either may be
  /// undefined when its token type is ablated.
  MdafOutput operator()(const Tensor& v_a, const Tensor& v_g, const Tensor& h_act,
                        const Tensor& h_groups) const {
    if (cfg_.variant == MdafVariant::kBypass || (!cfg_.use_act_token && !cfg_.use_group_tokens)) {
      return mdaf_bypass(v_a, v_g);
    }
    const std::size_t k = v_g.rows();
    const std::size_t a = v_a.defined() ? v_a.rows() : 0;
    Tensor t_act, t_grp;
    if (cfg_.use_act_token) {
      if (!h_act.defined()) throw DimensionError("mdaf: <ACT> hidden state missing");
      t_act = text_proj_(h_act.dim() == 2 ? h_act : reshape(h_act, {1, h_act.numel()}));
    }
    if (cfg_.use_group_tokens) {
      if (!h_groups.defined() || h_groups.rows() != k) {
        throw DimensionError("mdaf: <GROUP> hidden states have " +
                             std::to_string(h_groups.defined() ? h_groups.rows() : 0) +
                             " rows, expected K=" + std::to_string(k));
      }
      t_grp = text_proj_(h_groups);
    }
    auto both = [&]() {
      std::vector<Tensor> parts;
      if (t_act.defined()) parts.push_back(t_act);
      if (t_grp.defined()) parts.push_back(t_grp);
      return concat_rows(parts);
    };
    auto enhance = [](const LayerNorm& ln, const MultiHeadAttention& attn, const Tensor& q,
                      const Tensor& kv) {
      if (!kv.defined() || q.rows() == 0) return q;
      return add(q, attn(ln(q), kv));
    };

    Tensor g = v_g, x = v_a;
    switch (cfg_.variant) {
      case MdafVariant::kSP2:
        g = enhance(ln_g_, attn_g_, v_g, t_grp);
        x = a ? enhance(ln_a_, attn_a_, v_a, t_act) : v_a;
        break;
      case MdafVariant::kSP1:
        g = enhance(ln_g_, attn_g_, v_g, t_act);
        x = a ? enhance(ln_a_, attn_a_, v_a, t_grp) : v_a;
        break;
      case MdafVariant::kCON1: {
        const Tensor joint = a ? concat_rows({v_g, v_a}) : v_g;
        const Tensor fused = enhance(ln_g_, attn_g_, joint, both());
        g = slice_rows(fused, 0, k);
        x = a ? slice_rows(fused, k, k + a) : v_a;
        break;
      }
      case MdafVariant::kCON2: {
        const Tensor kv = both();
        g = enhance(ln_g_, attn_g_, v_g, kv);
        x = a ? enhance(ln_a_, attn_a_, v_a, kv) : v_a;
        break;
      }
      case MdafVariant::kBypass:
        break;
    }
    const Tensor joint = a ? concat_rows({g, x}) : g;
    const Tensor fused = add(joint, ffn_(ln_fuse_(joint)));
    MdafOutput out;
    out.groups = slice_rows(fused, 0, k);
    out.actors = a ? slice_rows(fused, k, k + a) : v_a;
    return out;
  }

  /// Actor-side attention output before its output projection, for
  /// inspecting the single-key case.
  Tensor actor_block_mix(const Tensor& v_a, const Tensor& h_act) const {
    const Tensor t = text_proj_(h_act.dim() == 2 ? h_act : reshape(h_act, {1, h_act.numel()}));
    return attn_a_.mix(ln_a_(v_a), t);
  }
  const Linear& text_proj() const { return text_proj_; }
  const MultiHeadAttention& actor_attention() const { return attn_a_; }
  MultiHeadAttention& actor_attention() { return attn_a_; }
  MultiHeadAttention& group_attention() { return attn_g_; }
  FeedForward& fusion_ffn() { return ffn_; }

  void collect(ParamList& out, const std::string& prefix) const {
    text_proj_.collect(out, prefix + ".text_proj");
    ln_g_.collect(out, prefix + ".ln_g");
    attn_g_.collect(out, prefix + ".attn_g");
    ln_a_.collect(out, prefix + ".ln_a");
    attn_a_.collect(out, prefix + ".attn_a");
    ln_fuse_.collect(out, prefix + ".ln_fuse");
    ffn_.collect(out, prefix + ".ffn");
  }

 private:
  MdafConfig cfg_;
  Linear text_proj_;
  LayerNorm ln_g_;
  MultiHeadAttention attn_g_;
  LayerNorm ln_a_;
  MultiHeadAttention attn_a_;
  LayerNorm ln_fuse_;
  FeedForward ffn_;
};

}  // namespace lirgad
