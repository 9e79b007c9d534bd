// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks for every differentiable op and for a
// miniature end-to-end model.
//
// Each check reduces an op's output to a scalar by a fixed random projection,
// backpropagates once, then perturbs leaf entries by ±h. The error of one
// entry is |analytic − numeric| / max(|analytic|, |numeric|, floor·max(1, |f|))
// where f is the objective at the base point.
#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lirgad/model.hpp"

namespace lirgad {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckFloor = 1e-6;

/// One randomized instance: leaves to differentiate and a closure that
/// recomputes the scalar objective from their current values.
struct GradCase {
  std::vector<Tensor> leaves;
  std::function<Tensor()> objective;
  /// Entries checked per leaf (0 = all).
  std::size_t entries_per_leaf = 0;
};

struct GradOp {
  std::string name;
  std::function<std::vector<GradCase>(Rng&)> cases;
};

struct GradCheckResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool passed() const { return max_rel_error < kGradCheckTolerance; }
};

inline double grad_rel_error(double analytic, double numeric, double objective = 0.0) {
  const double floor = kGradCheckFloor * std::max(1.0, std::abs(objective));
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

inline GradCheckResult run_gradcheck(const GradOp& op, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  GradCheckResult res;
  res.name = op.name;
  for (auto& c : op.cases(rng)) {
    ++res.cases;
    for (auto& l : c.leaves) l.zero_grad();
    double f0 = 0.0;
    {
      Tape tape;
      TapeScope scope(tape);
      const Tensor f = c.objective();
      f0 = f.item();
      backward(f, tape);
    }
    NoGradScope no_grad;
    for (auto& leaf : c.leaves) {
      std::vector<std::size_t> idx(leaf.numel());
      std::iota(idx.begin(), idx.end(), 0);
      if (c.entries_per_leaf && idx.size() > c.entries_per_leaf) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(c.entries_per_leaf);
      }
      for (std::size_t i : idx) {
        const double analytic = leaf.has_grad() ? leaf.grad()[i] : 0.0;
        const double x0 = leaf.data()[i];
        leaf.data()[i] = x0 + kGradCheckStep;
        const double fp = c.objective().item();
        leaf.data()[i] = x0 - kGradCheckStep;
        const double fm = c.objective().item();
        leaf.data()[i] = x0;
        const double numeric = (fp - fm) / (2.0 * kGradCheckStep);
        res.max_rel_error = std::max(res.max_rel_error, grad_rel_error(analytic, numeric, f0));
        ++res.entries;
      }
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

namespace detail {

inline Tensor leaf(Shape s, Rng& rng, double stddev = 1.0) { return randn(std::move(s), stddev, rng, true); }
inline Tensor fixed(Shape s, Rng& rng) { return randn(std::move(s), 1.0, rng, false); }

/// Σ out ⊙ R for a fixed random R shaped like `out`.
inline std::function<Tensor()> projected(std::function<Tensor()> f, Rng& rng) {
  Tensor probe;
  {
    NoGradScope no_grad;
    probe = fixed(f().shape(), rng);
  }
  return [f = std::move(f), probe] { return sum(mul(f(), probe)); };
}

inline GradOp unary_op(std::string name, std::function<Tensor(const Tensor&)> fn,
                       std::vector<Shape> shapes) {
  return {name, [fn, shapes](Rng& rng) {
            std::vector<GradCase> cs;
            for (const auto& s : shapes) {
              Tensor x = leaf(s, rng);
              cs.push_back({{x}, projected([fn, x] { return fn(x); }, rng)});
            }
            return cs;
          }};
}

inline GradOp binary_op(std::string name, std::function<Tensor(const Tensor&, const Tensor&)> fn,
                        std::vector<std::pair<Shape, Shape>> shapes) {
  return {name, [fn, shapes](Rng& rng) {
            std::vector<GradCase> cs;
            for (const auto& [sa, sb] : shapes) {
              Tensor a = leaf(sa, rng), b = leaf(sb, rng);
              cs.push_back({{a, b}, projected([fn, a, b] { return fn(a, b); }, rng)});
            }
            return cs;
          }};
}

inline AttentionMask random_mask(std::size_t rows, std::size_t cols, Rng& rng, bool blank_first_row) {
  AttentionMask m{rows, cols, std::vector<unsigned char>(rows * cols, 1)};
  std::bernoulli_distribution keep(0.7);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m.allowed[r * cols + c] = (blank_first_row && r == 0) ? 0 : keep(rng);
  return m;
}

inline std::vector<std::size_t> random_targets(std::size_t n, std::size_t classes, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, classes - 1);
  std::vector<std::size_t> t(n);
  for (auto& v : t) v = d(rng);
  return t;
}

}  // namespace detail

/// Every differentiable op, each on at least three randomized shapes.
inline std::vector<GradOp> op_registry() {
  using detail::binary_op;
  using detail::fixed;
  using detail::leaf;
  using detail::projected;
  using detail::unary_op;
  std::vector<GradOp> ops;
  const std::vector<std::pair<Shape, Shape>> same{{{2, 3}, {2, 3}}, {{4, 5}, {4, 5}}, {{7}, {7}}};
  ops.push_back(binary_op("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, same));
  ops.push_back(binary_op("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, same));
  ops.push_back(binary_op("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, same));
  ops.push_back(unary_op("scale", [](const Tensor& a) { return scale(a, -1.7); }, {{3}, {2, 4}, {5, 1}}));
  ops.push_back(binary_op("add_row", [](const Tensor& a, const Tensor& b) { return add_row(a, b); },
                          {{{2, 3}, {3}}, {{5, 4}, {4}}, {{1, 6}, {1, 6}}}));
  ops.push_back(unary_op("gelu", [](const Tensor& a) { return gelu(a); }, {{4}, {3, 5}, {6, 2}}));
  ops.push_back(unary_op("reshape", [](const Tensor& a) { return reshape(a, {a.numel()}); }, {{2, 3}, {4, 1}, {3, 3}}));
  ops.push_back(unary_op("sum", [](const Tensor& a) { return sum(a); }, {{3}, {2, 5}, {4, 4}}));
  ops.push_back(unary_op("mean", [](const Tensor& a) { return mean(a); }, {{3}, {2, 5}, {4, 4}}));
  ops.push_back(unary_op("mean_rows", [](const Tensor& a) { return mean_rows(a); }, {{1, 3}, {4, 5}, {6, 2}}));
  ops.push_back(binary_op("mse", [](const Tensor& a, const Tensor& b) { return mse(a, b); }, same));
  ops.push_back(binary_op("matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, b); },
                          {{{5, 4}, {4, 3}}, {{1, 6}, {6, 2}}, {{3, 3}, {3, 7}}}));
  ops.push_back(binary_op("matmul_nt", [](const Tensor& a, const Tensor& b) { return matmul_nt(a, b); },
                          {{{5, 4}, {3, 4}}, {{1, 6}, {2, 6}}, {{3, 3}, {7, 3}}}));
  ops.push_back(unary_op("transpose", [](const Tensor& a) { return transpose(a); }, {{2, 3}, {5, 1}, {4, 4}}));
  ops.push_back(binary_op("concat_rows", [](const Tensor& a, const Tensor& b) { return concat_rows({a, b, a}); },
                          {{{2, 3}, {1, 3}}, {{1, 5}, {4, 5}}, {{3, 2}, {3, 2}}}));
  ops.push_back(binary_op("concat_cols", [](const Tensor& a, const Tensor& b) { return concat_cols({b, a}); },
                          {{{2, 3}, {2, 1}}, {{4, 2}, {4, 5}}, {{3, 3}, {3, 3}}}));
  ops.push_back(unary_op("slice_rows", [](const Tensor& a) { return slice_rows(a, 1, a.rows()); }, {{2, 3}, {5, 2}, {4, 6}}));
  ops.push_back(unary_op("slice_cols", [](const Tensor& a) { return slice_cols(a, 1, a.cols() - 1); }, {{2, 3}, {5, 4}, {3, 6}}));
  ops.push_back(unary_op("row", [](const Tensor& a) { return row(a, a.rows() - 1); }, {{2, 3}, {5, 4}, {1, 6}}));
  ops.push_back(unary_op("gather_rows", [](const Tensor& a) {
                           const std::vector<std::size_t> idx{0, a.rows() - 1, 0, 1 % a.rows()};
                           return gather_rows(a, idx);
                         }, {{2, 3}, {5, 4}, {3, 6}}));
  ops.push_back({"softmax_rows", [](Rng& rng) {
                   std::vector<GradCase> cs;
                   for (Shape s : {Shape{3, 5}, Shape{1, 4}, Shape{6, 2}}) {
                     Tensor x = leaf(s, rng, 2.0);
                     cs.push_back({{x}, projected([x] { return softmax_rows(x); }, rng)});
                   }
                   Tensor x = leaf({4, 6}, rng, 2.0);
                   const auto mask = detail::random_mask(4, 6, rng, true);
                   cs.push_back({{x}, projected([x, mask] { return softmax_rows(x, &mask); }, rng)});
                   return cs;
                 }});
  ops.push_back(unary_op("log_softmax_rows", [](const Tensor& a) { return log_softmax_rows(a); }, {{3, 5}, {1, 4}, {6, 2}}));
  ops.push_back({"layer_norm", [](Rng& rng) {
                   std::vector<GradCase> cs;
                   for (Shape s : {Shape{3, 5}, Shape{1, 8}, Shape{6, 2}}) {
                     Tensor x = leaf(s, rng), g = leaf({s[1]}, rng), b = leaf({s[1]}, rng);
                     cs.push_back({{x, g, b}, projected([x, g, b] { return layer_norm(x, g, b); }, rng)});
                   }
                   return cs;
                 }});
  ops.push_back({"attention", [](Rng& rng) {
                   struct Dims { std::size_t lq, lk, d, heads; bool masked; };
                   std::vector<GradCase> cs;
                   for (Dims dm : {Dims{3, 4, 8, 2, false}, Dims{2, 1, 4, 1, false}, Dims{5, 3, 12, 3, true},
                                   Dims{4, 4, 8, 4, true}}) {
                     Tensor q = leaf({dm.lq, dm.d}, rng), k = leaf({dm.lk, dm.d}, rng), v = leaf({dm.lk, dm.d}, rng);
                     std::optional<AttentionMask> mask;
                     if (dm.masked) mask = detail::random_mask(dm.lq, dm.lk, rng, true);
                     cs.push_back({{q, k, v}, projected([q, k, v, mask, dm] {
                                     return attention(q, k, v, mask ? &*mask : nullptr, dm.heads);
                                   }, rng)});
                   }
                   return cs;
                 }});
  ops.push_back({"bce_with_logits", [](Rng& rng) {
                   std::vector<GradCase> cs;
                   for (std::size_t n : {1, 4, 7}) {
                     Tensor z = leaf({n}, rng, 3.0);
                     std::vector<double> y(n);
                     std::bernoulli_distribution bit(0.5);
                     for (auto& v : y) v = bit(rng) ? 1.0 : 0.0;
                     cs.push_back({{z}, [z, y] { return bce_with_logits(z, y); }});
                   }
                   return cs;
                 }});
  ops.push_back({"cross_entropy_rows", [](Rng& rng) {
                   std::vector<GradCase> cs;
                   for (Shape s : {Shape{3, 5}, Shape{1, 2}, Shape{6, 7}}) {
                     Tensor z = leaf(s, rng, 2.0);
                     const auto t = detail::random_targets(s[0], s[1], rng);
                     cs.push_back({{z}, [z, t] { return cross_entropy_rows(z, t); }});
                   }
                   return cs;
                 }});
  ops.push_back({"cross_entropy_with_logits", [](Rng& rng) {
                   std::vector<GradCase> cs;
                   for (std::size_t c : {2, 4, 9}) {
                     Tensor z = leaf({c}, rng, 2.0);
                     const std::size_t idx = detail::random_targets(1, c, rng)[0];
                     cs.push_back({{z}, [z, idx] { return cross_entropy_with_logits(z, idx); }});
                   }
                   return cs;
                 }});
  ops.push_back({"low_rank_adapter", [](Rng& rng) {
                   std::vector<GradCase> cs;
                   struct Dims { std::size_t out, in, r; };
                   for (Dims dm : {Dims{4, 5, 1}, Dims{6, 3, 2}, Dims{8, 8, 4}}) {
                     Tensor w = leaf({dm.out, dm.in}, rng), a = leaf({dm.out, dm.r}, rng), b = leaf({dm.r, dm.in}, rng);
                     cs.push_back({{w, a, b}, projected([w, a, b] { return apply_low_rank_adapter(w, a, b); }, rng)});
                   }
                   return cs;
                 }});
  return ops;
}

/// Randomizes every parameter around its initial value so that zero-initialized
/// projections and adapters carry gradient signal.
inline void jitter_parameters(ParamList& params, Rng& rng, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& p : params.items())
    for (double& v : p.tensor.data()) v += d(rng);
}

/// Miniature model: K=3 group tokens, four actors, width 16, two frames.
struct MiniModelFixture {
  ModelConfig cfg;
  std::unique_ptr<LirGadModel> model;
  SceneClip clip;
  ClipInputs inputs;
  LossOptions opt;
  Matching matching;

  explicit MiniModelFixture(std::uint64_t seed, MdafVariant variant = MdafVariant::kSP2) {
    cfg.group_tokens = 3;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.d_vis = 16;
    cfg.d_text = 16;
    cfg.decoder.layers = 1;
    cfg.decoder.heads = 2;
    cfg.decoder.d_text = 16;
    cfg.decoder.adapter_rank = 2;
    cfg.variant = variant;
    cfg.train_reasoning = true;
    model = std::make_unique<LirGadModel>(cfg, seed);
    Rng rng(seed + 17);
    jitter_parameters(model->params(), rng, 0.2);

    GeneratorParams gp;
    gp.frames = 2;
    gp.min_groups = 2;
    gp.max_groups = 2;
    gp.max_group_size = 2;
    gp.max_outliers = 1;
    gp.max_group_budget = 3;
    // First seed whose clip has exactly four actors.
    for (std::uint64_t s = seed;; ++s) {
      clip = generate_scene(s, gp, cfg.taxonomy);
      if (clip.actors.size() == 4) break;
    }
    opt.train_reasoning = true;
    inputs = model->prepare(clip, featurize(clip, seed, 0.05, cfg.d_vis, cfg.taxonomy));
    NoGradScope no_grad;
    matching = hungarian(matching_cost(model->forward(inputs).pred, clip, opt.mu));
  }

  Tensor objective() const {
    const auto fw = model->forward(inputs);
    return clip_loss(*model, fw, inputs, clip, opt, &matching).total;
  }
};

inline GradOp end_to_end_op(std::size_t entries_per_leaf = 3) {
  return {"end_to_end_model", [entries_per_leaf](Rng& rng) {
            auto fx = std::make_shared<MiniModelFixture>(rng());
            GradCase c;
            c.leaves = fx->model->params().trainable();
            c.objective = [fx] { return fx->objective(); };
            c.entries_per_leaf = entries_per_leaf;
            return std::vector<GradCase>{c};
          }};
}

/// The complete suite: every registered op plus the end-to-end model.
inline std::vector<GradOp> gradcheck_suite() {
  auto ops = op_registry();
  ops.push_back(end_to_end_op());
  return ops;
}

/// Negative control: doubling whose backward is deliberately off by 10%.
inline Tensor corrupted_double(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = 2.0 * a.data()[i];
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.2 * os->grad[i];
    });
  }
  return out;
}

inline GradOp corrupted_fixture() {
  return detail::unary_op("corrupted_double", corrupted_double, {{3}, {2, 2}, {4, 1}});
}

}  // namespace lirgad
