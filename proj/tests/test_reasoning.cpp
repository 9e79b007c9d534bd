// Prompt construction, the causal decoder, special-token NLL and adapters.
#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "lirgad/gradcheck.hpp"
#include "lirgad/train.hpp"

using namespace lirgad;

namespace {

constexpr std::size_t kWidth = 16;

DecoderConfig small_decoder(bool frozen = true) {
  DecoderConfig c;
  c.layers = 2;
  c.heads = 4;
  c.d_text = kWidth;
  c.adapter_rank = 2;
  c.body_frozen = frozen;
  return c;
}

struct Fixture {
  Vocabulary vocab;
  Rng rng;
  ReasoningDecoder dec;
  explicit Fixture(std::size_t k = 3, std::uint64_t seed = 1, bool frozen = true)
      : vocab(k), rng(seed), dec(small_decoder(frozen), vocab, kWidth, rng) {}
};

SceneClip clip_with(std::uint64_t seed) {
  GeneratorParams p;
  p.max_groups = 2;
  p.max_group_size = 3;
  return generate_scene(seed, p);
}

FeatureBundle features_of(const SceneClip& c) { return featurize(c, 1234, 0.05, kWidth); }

/// Long-double −log softmax(row)[target].
double ref_nll(const Tensor& logits, std::size_t r, std::size_t target) {
  long double mx = -1e300L, s = 0;
  for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max<long double>(mx, logits.at(r, j));
  for (std::size_t j = 0; j < logits.cols(); ++j) s += std::exp(static_cast<long double>(logits.at(r, j)) - mx);
  return static_cast<double>(std::log(s) + mx - logits.at(r, target));
}

}  // namespace

TEST(Prompt, DeterministicForSameClip) {
  const Vocabulary vocab(12);
  const auto clip = clip_with(4);
  const auto a = build_prompt(clip, vocab), b = build_prompt(clip, vocab);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.group_offsets, b.group_offsets);
}

TEST(Prompt, ZeroActorsKeepsTemplate) {
  const Vocabulary vocab(4);
  SceneClip empty;
  empty.clip_id = "empty";
  empty.frames = 2;
  const auto p = build_prompt(empty, vocab);
  const std::vector<std::size_t> question{vocab.id("<bos>"), vocab.id("question"), vocab.id(":"),
                                          vocab.id("actors"), vocab.id("0")};
  EXPECT_TRUE(std::equal(question.begin(), question.end(), p.tokens.begin()));
  EXPECT_EQ(std::count(p.tokens.begin(), p.tokens.end(), vocab.id("[")), 0);
  EXPECT_EQ(p.tokens[p.act_offset], vocab.act_id());
  ASSERT_EQ(p.group_offsets.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p.tokens[p.group_offsets[i]], vocab.group_id(i));
  EXPECT_EQ(p.tokens.back(), vocab.id("<eos>"));
}

TEST(Prompt, ActPrecedesGroupsInOrder) {
  const Vocabulary vocab(12);
  const auto p = build_prompt(clip_with(8), vocab);
  ASSERT_EQ(p.group_offsets.size(), 12u);
  EXPECT_LT(p.act_offset, p.group_offsets.front());
  EXPECT_TRUE(std::is_sorted(p.group_offsets.begin(), p.group_offsets.end()));
  EXPECT_EQ(std::adjacent_find(p.group_offsets.begin(), p.group_offsets.end()), p.group_offsets.end());
}

TEST(Prompt, MissingDigitIsConfigError) {
  auto base = default_base_tokens();
  base.erase(std::find(base.begin(), base.end(), "7"));
  const Vocabulary vocab(2, base);
  GeneratorParams p;
  p.min_groups = p.max_groups = 1;
  p.min_group_size = p.max_group_size = 5;
  p.max_outliers = 2;
  p.outlier_prob = 1.0;
  EXPECT_THROW(build_prompt(generate_scene(1, p), vocab), ConfigError);  // "actors 7"
}

TEST(Vocabulary, IdsAreUniqueWithOneActAndKGroups) {
  const Vocabulary vocab(5);
  std::set<std::size_t> ids;
  for (const auto& t : default_base_tokens()) ids.insert(vocab.id(t));
  ids.insert(vocab.act_id());
  for (std::size_t i = 0; i < 5; ++i) ids.insert(vocab.id(Vocabulary::group_name(i)));
  EXPECT_EQ(ids.size(), vocab.size());
  EXPECT_EQ(vocab.id("<ACT>"), vocab.act_id());
}

TEST(EncodeVisual, OneTokenPerFrame) {
  Fixture f;
  const auto clip = clip_with(2);
  const Tensor v = encode_visual(features_of(clip), f.dec.visual_proj());
  EXPECT_EQ(v.shape(), (Shape{5, kWidth}));
}

TEST(EncodeVisual, ZeroProjectionGivesZeros) {
  Fixture f;
  f.dec.visual_proj().zero_init();
  const Tensor v = encode_visual(features_of(clip_with(2)), f.dec.visual_proj());
  for (double x : v.data()) EXPECT_EQ(x, 0.0);
}

TEST(EncodeVisual, NllReachesProjection) {
  Fixture f;
  const auto clip = clip_with(3);
  const auto prompt = build_prompt(clip, f.vocab);
  const auto feats = features_of(clip);
  Tape tape;
  {
    TapeScope scope(tape);
    const auto out = f.dec.forward(prompt, feats);
    backward(add(nll_act(out.logits, prompt, f.vocab), nll_group(out.logits, prompt, f.vocab)), tape);
  }
  const auto& g = f.dec.visual_proj().weight().grad();
  ASSERT_FALSE(g.empty());
  EXPECT_TRUE(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; }));
}

TEST(EncodeVisual, ProjectionGradientMatchesFiniteDifferences) {
  auto fx = std::make_shared<Fixture>(2, 9);
  const auto clip = clip_with(5);
  auto prompt = std::make_shared<PromptSequence>(build_prompt(clip, fx->vocab));
  auto feats = std::make_shared<FeatureBundle>(features_of(clip));
  const auto r = run_gradcheck(
      {"visual_projection",
       [=](Rng&) {
         GradCase c;
         c.leaves = {fx->dec.visual_proj().weight(), fx->dec.visual_proj().bias()};
         c.objective = [=] {
           const auto out = fx->dec.forward(*prompt, *feats);
           return add(nll_act(out.logits, *prompt, fx->vocab), nll_group(out.logits, *prompt, fx->vocab));
         };
         c.entries_per_leaf = 12;
         return std::vector<GradCase>{c};
       }},
      3);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Decoder, CausalOverTwentyPrompts) {
  Fixture f(4, 2);
  Rng rng(77);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto clip = clip_with(100 + s);
    const auto feats = features_of(clip);
    auto prompt = build_prompt(clip, f.vocab);
    NoGradScope ng;
    const Tensor before = f.dec.forward(prompt, feats).logits;
    std::uniform_int_distribution<std::size_t> pos(1, prompt.tokens.size() - 1);
    const std::size_t t = pos(rng);
    prompt.tokens[t] = (prompt.tokens[t] + 1) % f.vocab.base_size();
    const Tensor after = f.dec.forward(prompt, feats).logits;
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t c = 0; c < before.cols(); ++c) ASSERT_EQ(before.at(r, c), after.at(r, c)) << "row " << r;
    bool changed = false;
    for (std::size_t c = 0; c < before.cols(); ++c) changed = changed || before.at(t, c) != after.at(t, c);
    EXPECT_TRUE(changed);
  }
}

TEST(Decoder, GroupStatesHaveKRows) {
  for (std::size_t k : {1u, 3u, 12u}) {
    Fixture f(k);
    for (std::uint64_t s : {1u, 2u}) {
      const auto clip = clip_with(s);
      NoGradScope ng;
      const auto out = f.dec.forward(build_prompt(clip, f.vocab), features_of(clip));
      EXPECT_EQ(out.hidden.groups.shape(), (Shape{k, kWidth}));
      EXPECT_EQ(out.hidden.act.numel(), kWidth);
    }
  }
}

TEST(Decoder, ActEmbeddingConditionsEveryGroupState) {
  Fixture f(5, 4);
  const auto clip = clip_with(6);
  const auto prompt = build_prompt(clip, f.vocab);
  const auto feats = features_of(clip);
  NoGradScope ng;
  const Tensor before = f.dec.forward(prompt, feats).hidden.groups;
  Tensor& special = f.dec.special_embeddings();
  Rng rng(8);
  std::normal_distribution<double> g;
  for (std::size_t c = 0; c < kWidth; ++c) special.at(0, c) = g(rng);
  const Tensor after = f.dec.forward(prompt, feats).hidden.groups;
  for (std::size_t r = 0; r < 5; ++r) {
    double diff = 0;
    for (std::size_t c = 0; c < kWidth; ++c) diff = std::max(diff, std::abs(before.at(r, c) - after.at(r, c)));
    EXPECT_GT(diff, 0.0) << "group row " << r;
  }
}

TEST(Decoder, EmptyPromptIsUsageError) {
  Fixture f;
  EXPECT_THROW(f.dec.forward(PromptSequence{}, features_of(clip_with(1))), UsageError);
}

TEST(Nll, UniformLogitsGiveLogVocab) {
  const Vocabulary vocab(6);
  const auto prompt = build_prompt(clip_with(1), vocab);
  const Tensor logits = Tensor::zeros({prompt.tokens.size(), vocab.size()});
  const double lnw = std::log(static_cast<double>(vocab.size()));
  EXPECT_NEAR(nll_act(logits, prompt, vocab).item(), lnw, 1e-12);
  EXPECT_NEAR(nll_group(logits, prompt, vocab).item(), 6 * lnw, 1e-12);
}

TEST(Nll, SaturatedActLogitIsNearZero) {
  const Vocabulary vocab(2);
  const auto prompt = build_prompt(clip_with(1), vocab);
  Tensor logits = Tensor::zeros({prompt.tokens.size(), vocab.size()});
  logits.at(prompt.act_offset - 1, vocab.act_id()) = 40.0;
  EXPECT_LT(nll_act(logits, prompt, vocab).item(), 1e-15);
}

TEST(Nll, ActEqualsCrossEntropyAtItsPosition) {
  const Vocabulary vocab(3);
  const auto prompt = build_prompt(clip_with(2), vocab);
  Rng rng(4);
  const Tensor logits = randn({prompt.tokens.size(), vocab.size()}, 2.0, rng, false);
  EXPECT_EQ(nll_act(logits, prompt, vocab).item(),
            cross_entropy_with_logits(row(logits, prompt.act_offset - 1), vocab.act_id()).item());
}

TEST(Nll, SingleGroupEqualsOneCrossEntropy) {
  const Vocabulary vocab(1);
  const auto prompt = build_prompt(clip_with(2), vocab);
  Rng rng(5);
  const Tensor logits = randn({prompt.tokens.size(), vocab.size()}, 2.0, rng, false);
  EXPECT_NEAR(nll_group(logits, prompt, vocab).item(),
              cross_entropy_with_logits(row(logits, prompt.group_offsets[0] - 1), vocab.group_id(0)).item(), 1e-15);
}

TEST(Nll, GroupMatchesPerPositionSum) {
  const Vocabulary vocab(7);
  const auto prompt = build_prompt(clip_with(3), vocab);
  Rng rng(6);
  const Tensor logits = randn({prompt.tokens.size(), vocab.size()}, 3.0, rng, false);
  double ref = 0;
  for (std::size_t i = 0; i < 7; ++i) ref += ref_nll(logits, prompt.group_offsets[i] - 1, vocab.group_id(i));
  EXPECT_NEAR(nll_group(logits, prompt, vocab).item(), ref, 1e-12);
}

TEST(Adapter, ZeroFactorKeepsWeight) {
  Rng rng(1);
  Linear l(6, 5, rng);
  l.add_adapter(2, rng);
  EXPECT_EQ(l.effective_weight().data(), l.weight().data());
}

TEST(Adapter, RankBoundary) {
  Rng rng(2);
  const Tensor w = randn({4, 6}, 1.0, rng, false);
  EXPECT_NO_THROW(apply_low_rank_adapter(w, Tensor::zeros({4, 3}), Tensor::zeros({3, 6})));
  EXPECT_THROW(apply_low_rank_adapter(w, Tensor::zeros({4, 4}), Tensor::zeros({4, 6})), ConfigError);
  Linear l(6, 4, rng);
  EXPECT_NO_THROW(Linear(l).add_adapter(3, rng));
  EXPECT_THROW(Linear(6, 4, rng).add_adapter(4, rng), ConfigError);
}

TEST(Adapter, FrozenBodyGetsNoGradient) {
  Rng rng(3);
  Linear l(6, 5, rng);
  l.add_adapter(2, rng);
  l.freeze_body();
  const Tensor x = randn({3, 6}, 1.0, rng, false);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(mul(l(x), l(x))), tape);
  }
  EXPECT_FALSE(l.weight().has_grad());
  EXPECT_FALSE(l.bias().has_grad());
  ASSERT_TRUE(l.adapter_a().has_grad());
  EXPECT_TRUE(std::any_of(l.adapter_a().grad().begin(), l.adapter_a().grad().end(), [](double v) { return v != 0; }));
}

TEST(Adapter, FrozenDecoderTrainsOnlyAdaptersSpecialRowsAndProjection) {
  Fixture f;
  ParamList params;
  f.dec.collect(params, "decoder");
  for (const auto& p : params.items()) {
    const bool allowed = p.name.find("adapter_") != std::string::npos || p.name == "decoder.special_embed" ||
                         p.name.rfind("decoder.visual_proj.", 0) == 0;
    EXPECT_EQ(p.tensor.requires_grad(), allowed) << p.name;
  }
}

TEST(Adapter, FrozenBodyBytesUnchangedByTraining) {
  Fixture f;
  ParamList params;
  f.dec.collect(params, "decoder");
  std::vector<std::vector<double>> before;
  for (const auto& p : params.items()) before.push_back(p.tensor.data());
  std::vector<ReasoningSample> corpus;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto clip = clip_with(s);
    corpus.push_back({build_prompt(clip, f.vocab), features_of(clip)});
  }
  fit_reasoning(f.dec, corpus, 5, 2, 1e-2);
  bool trained_something = false;
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    const auto& p = params.items()[i];
    if (p.tensor.requires_grad()) trained_something = trained_something || p.tensor.data() != before[i];
    else EXPECT_EQ(p.tensor.data(), before[i]) << p.name;
  }
  EXPECT_TRUE(trained_something);
}

TEST(Adapter, UnfrozenDecoderTrainsBody) {
  Fixture f(3, 1, false);
  ParamList params;
  f.dec.collect(params, "decoder");
  for (const auto& p : params.items()) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
}

TEST(DecoderConfigTest, Validation) {
  DecoderConfig c = small_decoder();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_decoder();
  c.adapter_rank = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
