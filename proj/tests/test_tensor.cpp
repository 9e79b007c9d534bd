// Tensor, autodiff, optimizer and schedule behavior.
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "lirgad/gradcheck.hpp"
#include "lirgad/optim.hpp"

using namespace lirgad;

namespace {

Tensor identity(std::size_t n) {
  Tensor t = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

GradCheckResult check(std::string name, std::function<std::vector<GradCase>(Rng&)> cases) {
  return run_gradcheck({std::move(name), std::move(cases)}, 7);
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Rng rng(1);
  const Tensor b = randn({3, 4}, 1.0, rng, false);
  EXPECT_EQ(matmul(identity(3), b).data(), b.data());
}

TEST(Matmul, HandExample) {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 1, {0, 1});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.data(), (std::vector<double>{2, 4}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  const auto r = check("matmul_5x4x3", [](Rng& rng) {
    GradCase c;
    Tensor a = detail::leaf({5, 4}, rng), b = detail::leaf({4, 3}, rng);
    const Tensor w = detail::fixed({5, 3}, rng);
    c.leaves = {a, b};
    c.objective = [a, b, w] { return sum(mul(matmul(a, b), w)); };
    return std::vector<GradCase>{c};
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_EQ(r.entries, 32u);
}

TEST(Softmax, ZeroRowIsUniform) {
  const Tensor p = softmax_rows(Tensor::zeros({1, 4}));
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const Tensor p = softmax_rows(Tensor::matrix(1, 2, {1000, 0}));
  EXPECT_NEAR(p.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(p.data()[1], 0.0, 1e-12);
}

TEST(Softmax, RowsAreProbabilityVectors) {
  Rng rng(3);
  const Tensor p = softmax_rows(randn({3, 5}, 3.0, rng, false));
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GE(p.at(i, j), 0.0);
      EXPECT_LE(p.at(i, j), 1.0);
      s += p.at(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  const Tensor y = layer_norm(Tensor::matrix(1, 3, {2.5, 2.5, 2.5}), Tensor::vector({1, 1, 1}),
                              Tensor::vector({0, 0, 0}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowIsKeptUpToEpsilon) {
  const Tensor y = layer_norm(Tensor::matrix(1, 2, {1, -1}), Tensor::vector({1, 1}), Tensor::vector({0, 0}));
  const double expect = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  EXPECT_NEAR(y.data()[0], expect, 1e-15);
  EXPECT_NEAR(y.data()[1], -expect, 1e-15);
  EXPECT_NEAR(y.data()[0], 1.0, 1e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  const auto r = check("layer_norm", [](Rng& rng) {
    std::vector<GradCase> cases;
    for (Shape s : {Shape{1, 4}, Shape{3, 6}, Shape{5, 2}}) {
      GradCase c;
      Tensor x = detail::leaf(s, rng), g = detail::leaf({s[1]}, rng), b = detail::leaf({s[1]}, rng);
      const Tensor w = detail::fixed(s, rng);
      c.leaves = {x, g, b};
      c.objective = [x, g, b, w] { return sum(mul(layer_norm(x, g, b), w)); };
      cases.push_back(c);
    }
    return cases;
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Attention, SingleKeyReturnsValueRow) {
  Rng rng(5);
  const Tensor q = randn({4, 8}, 2.0, rng, false);
  const Tensor k = randn({1, 8}, 1.0, rng, false);
  const Tensor v = randn({1, 8}, 1.0, rng, false);
  const Tensor out = attention(q, k, v, nullptr, 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at(i, j), v.at(0, j), 1e-15);
}

TEST(Attention, FullyMaskedRowIsZero) {
  Rng rng(6);
  const Tensor q = randn({2, 4}, 1.0, rng, false);
  const Tensor k = randn({3, 4}, 1.0, rng, false);
  const Tensor v = randn({3, 4}, 1.0, rng, false);
  AttentionMask m{2, 3, {0, 0, 0, 1, 0, 1}};
  const Tensor out = attention(q, k, v, &m, 2);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out.at(0, j), 0.0);
  double norm = 0;
  for (std::size_t j = 0; j < 4; ++j) norm += std::abs(out.at(1, j));
  EXPECT_GT(norm, 0.0);
}

TEST(Attention, IndivisibleHeadsIsConfigError) {
  const Tensor x = Tensor::zeros({2, 6});
  EXPECT_THROW(attention(x, x, x, nullptr, 4), ConfigError);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  const auto r = check("attention_masked", [](Rng& rng) {
    GradCase c;
    Tensor q = detail::leaf({3, 4}, rng), k = detail::leaf({5, 4}, rng), v = detail::leaf({5, 4}, rng);
    const Tensor w = detail::fixed({3, 4}, rng);
    auto mask = std::make_shared<AttentionMask>(detail::random_mask(3, 5, rng, false));
    c.leaves = {q, k, v};
    c.objective = [q, k, v, w, mask] { return sum(mul(attention(q, k, v, mask.get(), 2), w)); };
    return std::vector<GradCase>{c};
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(BceWithLogits, ZeroLogitGivesLn2) {
  const std::vector<double> y{1};
  EXPECT_NEAR(bce_with_logits(Tensor::vector({0}), y).item(), std::log(2.0), 1e-15);
}

TEST(BceWithLogits, SaturatedLogitIsNearZero) {
  const std::vector<double> y{1};
  const double v = bce_with_logits(Tensor::vector({40}), y).item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GE(v, 0.0);
  EXPECT_LT(v, 1e-15);
}

TEST(BceWithLogits, MatchesLongDoubleFormula) {
  const std::vector<double> z{1.2, -0.7, 0.3}, y{1, 0, 1};
  long double ref = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const long double s = 1.0L / (1.0L + std::exp(-static_cast<long double>(z[i])));
    ref += -(y[i] * std::log(s) + (1 - y[i]) * std::log(1.0L - s));
  }
  ref /= 3;
  EXPECT_NEAR(bce_with_logits(Tensor::vector(z), y).item(), static_cast<double>(ref), 1e-15);
}

TEST(BceWithLogits, LengthMismatchIsDimensionError) {
  const std::vector<double> y{1, 0};
  EXPECT_THROW(bce_with_logits(Tensor::vector({0, 0, 0}), y), DimensionError);
}

TEST(BceWithLogits, NonNegativeOnRandomInputs) {
  Rng rng(11);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 200; ++t) {
    const Tensor z = randn({7}, 20.0, rng, false);
    std::vector<double> y(7);
    for (double& v : y) v = coin(rng);
    EXPECT_GE(bce_with_logits(z, y).item(), 0.0);
  }
}

TEST(CrossEntropy, UniformOverFourIsLn4) {
  for (std::size_t c = 0; c < 4; ++c)
    EXPECT_NEAR(cross_entropy_with_logits(Tensor::vector({0.3, 0.3, 0.3, 0.3}), c).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, ConfidentLogitMatchesFormula) {
  const long double ref = std::log(1.0L + 2.0L * std::exp(-10.0L));
  const double v = cross_entropy_with_logits(Tensor::vector({10, 0, 0}), 0).item();
  EXPECT_NEAR(v, static_cast<double>(ref), 1e-12 * static_cast<double>(ref));
  EXPECT_NEAR(v, 9.1e-5, 5e-7);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Tensor z = Tensor::vector({0.5, -1.0, 2.0, 0.1}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(cross_entropy_with_logits(z, 2), tape);
  }
  double norm = 0;
  for (double v : z.data()) norm += std::exp(v);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = std::exp(z.data()[i]) / norm - (i == 2 ? 1.0 : 0.0);
    EXPECT_NEAR(z.grad()[i], expect, 1e-15);
  }
}

TEST(CrossEntropy, OutOfRangeIndexIsIndexError) {
  EXPECT_THROW(cross_entropy_with_logits(Tensor::vector({1, 2}), 2), IndexError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::matrix(2, 3, {1, -2, 3, 4, 5, -6}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(x), tape);
  }
  EXPECT_EQ(x.grad(), std::vector<double>(6, 1.0));
}

TEST(Backward, SquareGivesTwoX) {
  Tensor x = Tensor::vector({1.5, -2.0, 0.25}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(mul(x, x)), tape);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 2 * x.data()[i]);
}

TEST(Backward, UnreachableTensorUntouched) {
  Tensor x = Tensor::vector({1, 2}, true), y = Tensor::vector({3, 4}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor unused = mul(y, y);
    backward(sum(x), tape);
  }
  EXPECT_FALSE(y.has_grad());
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = scale(x, 2.0);
  EXPECT_THROW(backward(y, tape), UsageError);
}

TEST(Backward, CompositeNetworkMatchesFiniteDifferences) {
  const auto r = check("composite", [](Rng& rng) {
    GradCase c;
    Tensor x = detail::leaf({4, 6}, rng), w1 = detail::leaf({6, 8}, rng, 0.5), w2 = detail::leaf({8, 3}, rng, 0.5);
    Tensor g = detail::leaf({8}, rng), b = detail::leaf({8}, rng);
    const std::vector<std::size_t> targets{0, 2, 1, 2};
    c.leaves = {x, w1, w2, g, b};
    c.objective = [=] {
      const Tensor h = gelu(layer_norm(matmul(x, w1), g, b));
      return cross_entropy_rows(matmul(softmax_rows(h), w2), targets);
    };
    return std::vector<GradCase>{c};
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Backward, DeterministicAcrossReplays) {
  auto run = [] {
    Rng rng(21);
    Tensor a = randn({4, 5}, 1.0, rng), b = randn({5, 3}, 1.0, rng);
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = sum(mul(softmax_rows(matmul(a, b)), matmul(a, b)));
    backward(loss, tape);
    return std::make_tuple(loss.item(), a.grad(), b.grad());
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p = Tensor::vector({1.0, -2.0, 3.0}, true);
  p.grad() = {0, 0, 0};
  std::vector<Tensor> ps{p};
  AdamState st;
  adam_step(ps, st, 1e-3);
  EXPECT_EQ(p.data(), (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::vector({0.0, 0.0}, true);
  p.grad() = {0.37, -4.0};
  std::vector<Tensor> ps{p};
  AdamState st;
  adam_step(ps, st, 1e-2);
  EXPECT_NEAR(p.data()[0], -1e-2, 1e-9);
  EXPECT_NEAR(p.data()[1], 1e-2, 1e-9);
}

TEST(Adam, ThreeStepQuadraticTrace) {
  // f(x) = (x − 3)², x0 = 0.5, lr = 0.1; reference computed in long double.
  long double xr = 0.5L, m = 0, v = 0;
  std::vector<long double> ref;
  for (int t = 1; t <= 3; ++t) {
    const long double g = 2 * (xr - 3);
    m = 0.9L * m + 0.1L * g;
    v = 0.999L * v + 0.001L * g * g;
    const long double mh = m / (1 - std::pow(0.9L, t)), vh = v / (1 - std::pow(0.999L, t));
    xr -= 0.1L * mh / (std::sqrt(vh) + 1e-8L);
    ref.push_back(xr);
  }
  Tensor x = Tensor::vector({0.5}, true);
  std::vector<Tensor> ps{x};
  AdamState st;
  for (int t = 0; t < 3; ++t) {
    x.grad() = {2 * (x.data()[0] - 3)};
    adam_step(ps, st, 0.1);
    EXPECT_NEAR(x.data()[0], static_cast<double>(ref[static_cast<std::size_t>(t)]), 1e-13);
  }
}

TEST(Adam, ShapeMismatchIsDimensionError) {
  Tensor p = Tensor::vector({1.0, 2.0}, true);
  std::vector<Tensor> ps{p};
  AdamState st;
  st.first_moment = {{0.0}};
  st.second_moment = {{0.0}};
  EXPECT_THROW(adam_step(ps, st, 1e-3), DimensionError);
}

TEST(LrSchedule, DefaultShape) {
  LrSchedule s;  // 5 warmup of 20 epochs
  s.steps_per_epoch = 4;
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(s, s.warmup_steps() - 1), 1e-4);
  const std::int64_t peak = s.warmup_steps() - 1, total = s.total_steps();
  EXPECT_EQ((peak + total) % 2, 1);  // midpoint falls between two steps
  const double mid = 0.5 * (lr_at(s, (peak + total) / 2) + lr_at(s, (peak + total) / 2 + 1));
  EXPECT_NEAR(mid, 5e-5, 1e-18);
  EXPECT_GT(lr_at(s, total - 1), 0.0);
}

TEST(LrSchedule, IntegerMidpointIsHalfPeak) {
  LrSchedule s;
  s.steps_per_epoch = 1;  // peak at step 4, decay midpoint at step 12
  EXPECT_DOUBLE_EQ(lr_at(s, 12), 5e-5);
}

TEST(LrSchedule, WarmupIsLinear) {
  LrSchedule s;
  s.steps_per_epoch = 2;  // 10 warmup steps
  for (std::int64_t t = 0; t < 10; ++t) EXPECT_NEAR(lr_at(s, t), 1e-5 + 9e-5 * t / 9.0, 1e-19);
}

TEST(LrSchedule, OutOfRangeIsUsageError) {
  LrSchedule s;
  EXPECT_THROW(lr_at(s, -1), UsageError);
  EXPECT_THROW(lr_at(s, s.total_steps()), UsageError);
}
