// SPDX-License-Identifier: Apache-2.0
//
// Tiny causal decoder over an expanded vocabulary carrying one <ACT> token
// and K <GROUP_i> tokens. Exposes teacher-forced NLL terms for the special
// tokens and the last-layer hidden states at their positions.
#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lirgad/nn.hpp"
#include "lirgad/scene.hpp"

namespace lirgad {

/// Prompt layout. {A} is the actor count, each frame block lists every
/// actor's box with two decimals, and the answer region holds the special
/// tokens:
///
///   <bos> question : actors {A} frame {t} : [ x1 , y1 , x2 , y2 ] ...
///   answer : <ACT> groups : <GROUP_1> ... <GROUP_K> <eos>
inline constexpr const char* kPromptTemplate =
    "<bos> question : actors {A} frame {t} : [ x1 , y1 , x2 , y2 ] ... "
    "answer : <ACT> groups : <GROUP_1> ... <GROUP_K> <eos>";

inline std::vector<std::string> default_base_tokens() {
  std::vector<std::string> t{"<bos>", "<eos>"};
  for (char c = '0'; c <= '9'; ++c) t.emplace_back(1, c);
  for (const char* p : {".", ",", "[", "]", ":", "question", "answer", "actors", "frame", "groups"})
    t.emplace_back(p);
  return t;
}

/// Base tokens first, then <ACT>, then <GROUP_1>..<GROUP_K>.
class Vocabulary {
 public:
  Vocabulary(std::size_t group_tokens, std::vector<std::string> base = default_base_tokens())
      : base_(std::move(base)), groups_(group_tokens) {
    if (group_tokens == 0) throw ConfigError("vocabulary needs at least one <GROUP> token");
    for (std::size_t i = 0; i < base_.size(); ++i) {
      if (!ids_.emplace(base_[i], i).second) {
        throw ConfigError("vocabulary: duplicate token '" + base_[i] + "'");
      }
    }
    ids_.emplace("<ACT>", act_id());
    for (std::size_t i = 0; i < groups_; ++i) ids_.emplace(group_name(i), group_id(i));
  }

  std::size_t size() const { return base_.size() + 1 + groups_; }
  std::size_t base_size() const { return base_.size(); }
  std::size_t group_count() const { return groups_; }
  std::size_t act_id() const { return base_.size(); }
  std::size_t group_id(std::size_t i) const { return base_.size() + 1 + i; }
  static std::string group_name(std::size_t i) { return "<GROUP_" + std::to_string(i + 1) + ">"; }

  std::optional<std::size_t> find(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t id(const std::string& token) const {
    auto f = find(token);
    if (!f) throw ConfigError("vocabulary is missing token '" + token + "'");
    return *f;
  }

 private:
  std::vector<std::string> base_;
  std::size_t groups_;
  std::map<std::string, std::size_t> ids_;
};

struct PromptSequence {
  std::vector<std::size_t> tokens;
  /// Token offset of <ACT>.
  std::size_t act_offset = 0;
  /// Token offsets of <GROUP_1>..<GROUP_K>.
  std::vector<std::size_t> group_offsets;
};

inline PromptSequence build_prompt(const SceneClip& clip, const Vocabulary& vocab) {
  PromptSequence p;
  auto emit = [&](const std::string& tok) { p.tokens.push_back(vocab.id(tok)); };
  auto emit_chars = [&](const std::string& s) {
    for (char c : s) emit(std::string(1, c));
  };
  emit("<bos>");
  emit("question");
  emit(":");
  emit("actors");
  emit_chars(std::to_string(clip.actors.size()));
  for (int t = 0; t < clip.frames; ++t) {
    emit("frame");
    emit_chars(std::to_string(t));
    emit(":");
    for (const auto& a : clip.actors) {
      const Box& b = a.boxes[static_cast<std::size_t>(t)];
      emit("[");
      const double coords[4] = {b.x1, b.y1, b.x2, b.y2};
      for (int c = 0; c < 4; ++c) {
        if (c) emit(",");
        char buf[16];
        std::snprintf(buf, sizeof buf, "%.2f", coords[c]);
        emit_chars(buf);
      }
      emit("]");
    }
  }
  emit("answer");
  emit(":");
  p.act_offset = p.tokens.size();
  p.tokens.push_back(vocab.act_id());
  emit("groups");
  emit(":");
  for (std::size_t i = 0; i < vocab.group_count(); ++i) {
    p.group_offsets.push_back(p.tokens.size());
    p.tokens.push_back(vocab.group_id(i));
  }
  emit("<eos>");
  return p;
}

struct DecoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_text = 64;
  std::size_t adapter_rank = 4;
  bool body_frozen = true;

  void validate() const {
    if (heads == 0 || d_text % heads != 0) {
      throw ConfigError("decoder: d_text must be divisible by heads");
    }
    if (adapter_rank < 1) throw ConfigError("decoder: adapter rank must be >= 1");
  }
};

struct HiddenStates {
  Tensor act;     // D_text
  Tensor groups;  // K×D_text
};

struct DecoderOutput {
  /// Row t (t over text tokens) holds next-token logits after token t.
  Tensor logits;
  HiddenStates hidden;
};

/// One visual token per frame: v_e = v_f Pᵀ + b.
inline Tensor encode_visual(const FeatureBundle& features, const Linear& proj) {
  if (features.frame_features.cols() != proj.in_features()) {
    throw DimensionError("encode_visual: frame width " +
                         std::to_string(features.frame_features.cols()) +
                         " vs projection input " + std::to_string(proj.in_features()));
  }
  return proj(features.frame_features);
}

namespace detail {

inline Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
  Tensor pe = Tensor::zeros({length, d});
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return pe;
}

}  // namespace detail

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(const DecoderConfig& cfg, Rng& rng)
      : ln1_(cfg.d_text),
        attn_(cfg.d_text, cfg.heads, rng),
        ln2_(cfg.d_text),
        ffn_(cfg.d_text, 4 * cfg.d_text, cfg.d_text, rng) {
    attn_.add_adapters(cfg.adapter_rank, rng);
    if (cfg.body_frozen) {
      ln1_.freeze();
      ln2_.freeze();
      attn_.freeze_body();
      ffn_.freeze_body();
    }
  }

  Tensor operator()(const Tensor& x, const AttentionMask& causal) const {
    const Tensor n1 = ln1_(x);
    const Tensor h = add(x, attn_(n1, n1, &causal));
    return add(h, ffn_(ln2_(h)));
  }

  MultiHeadAttention& attention() { return attn_; }

  void collect(ParamList& out, const std::string& prefix) const {
    ln1_.collect(out, prefix + ".ln1");
    attn_.collect(out, prefix + ".attn");
    ln2_.collect(out, prefix + ".ln2");
    ffn_.collect(out, prefix + ".ffn");
  }

 private:
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  FeedForward ffn_;
};

/// Pre-norm causal decoder with tied input/output embeddings (logits are
/// scaled by 1/√D_text). The sequence
/// is [v_e ; token embeddings] plus fixed sinusoidal positions. With
/// body_frozen, only the adapters, the special-token rows (ω_a, ω_g) and the
/// visual projection are trainable.
class ReasoningDecoder {
 public:
  ReasoningDecoder(const DecoderConfig& cfg, const Vocabulary& vocab, std::size_t d_vis, Rng& rng)
      : cfg_(cfg), vocab_(vocab) {
    cfg.validate();
    base_embed_ = randn({vocab.base_size(), cfg.d_text}, 1.0, rng, !cfg.body_frozen);
    special_embed_ = randn({1 + vocab.group_count(), cfg.d_text}, 1.0, rng, true);
    visual_proj_ = Linear(d_vis, cfg.d_text, rng);
    for (std::size_t i = 0; i < cfg.layers; ++i) layers_.emplace_back(cfg, rng);
    final_ln_ = LayerNorm(cfg.d_text);
    if (cfg.body_frozen) final_ln_.freeze();
  }

  const DecoderConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  Linear& visual_proj() { return visual_proj_; }
  const Linear& visual_proj() const { return visual_proj_; }
  Tensor& special_embeddings() { return special_embed_; }
  Tensor& base_embeddings() { return base_embed_; }
  std::vector<DecoderLayer>& layers() { return layers_; }

  DecoderOutput forward(const PromptSequence& prompt, const FeatureBundle& features) const {
    if (prompt.tokens.empty()) throw UsageError("decoder_forward: empty prompt");
    const std::size_t n = prompt.tokens.size();
    const std::size_t k = vocab_.group_count();
    if (prompt.act_offset >= n || prompt.group_offsets.size() != k) {
      throw UsageError("decoder_forward: answer offsets do not fit the prompt");
    }
    for (std::size_t off : prompt.group_offsets)
      if (off >= n) throw UsageError("decoder_forward: group offset out of range");

    const Tensor table = concat_rows({base_embed_, special_embed_});
    const Tensor visual = encode_visual(features, visual_proj_);
    const std::size_t v = visual.rows();
    const Tensor tokens = gather_rows(table, prompt.tokens);
    Tensor x = concat_rows({visual, tokens});
    x = add(x, detail::sinusoidal_positions(v + n, cfg_.d_text));
    const AttentionMask causal = AttentionMask::causal(v + n);
    for (const auto& layer : layers_) x = layer(x, causal);
    const Tensor normed = final_ln_(x);
    const Tensor text = slice_rows(normed, v, v + n);

    DecoderOutput out;
    out.logits = scale(matmul_nt(text, table), 1.0 / std::sqrt(static_cast<double>(cfg_.d_text)));
    out.hidden.act = row(text, prompt.act_offset);
    std::vector<Tensor> g;
    g.reserve(k);
    for (std::size_t off : prompt.group_offsets) g.push_back(slice_rows(text, off, off + 1));
    out.hidden.groups = concat_rows(g);
    return out;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.add(prefix + ".base_embed", base_embed_);
    out.add(prefix + ".special_embed", special_embed_);
    visual_proj_.collect(out, prefix + ".visual_proj");
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(out, prefix + ".layer" + std::to_string(i));
    final_ln_.collect(out, prefix + ".final_ln");
  }

 private:
  DecoderConfig cfg_;
  Vocabulary vocab_;
  Tensor base_embed_;
  Tensor special_embed_;
  Linear visual_proj_;
  std::vector<DecoderLayer> layers_;
  LayerNorm final_ln_;
};

/// −log p(<ACT> | v_e, preceding tokens), teacher-forced.
inline Tensor nll_act(const Tensor& logits, const PromptSequence& prompt, const Vocabulary& vocab) {
  if (prompt.act_offset == 0 || prompt.act_offset > logits.rows()) {
    throw IndexError("nll_act: <ACT> offset has no predecessor row");
  }
  return cross_entropy_with_logits(row(logits, prompt.act_offset - 1), vocab.act_id());
}

/// Σ_i −log p(<GROUP_i> | v_e, c, <ACT>, c, <GROUP_1..i−1>), teacher-forced.
inline Tensor nll_group(const Tensor& logits, const PromptSequence& prompt, const Vocabulary& vocab) {
  std::vector<std::size_t> targets;
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < prompt.group_offsets.size(); ++i) {
    const std::size_t off = prompt.group_offsets[i];
    if (off == 0 || off > logits.rows()) throw IndexError("nll_group: bad group offset");
    rows.push_back(slice_rows(logits, off - 1, off));
    targets.push_back(vocab.group_id(i));
  }
  // cross_entropy_rows averages; the objective is a sum over the K terms.
  return scale(cross_entropy_rows(concat_rows(rows), targets),
               static_cast<double>(targets.size()));
}

}  // namespace lirgad
