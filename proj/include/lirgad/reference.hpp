// SPDX-License-Identifier: Apache-2.0
//
// Slow, direct reference implementations used to cross-check the matcher and
// the metrics, plus the randomized benchmark generators that drive them.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "lirgad/matching.hpp"
#include "lirgad/metrics.hpp"

namespace lirgad::reference {

/// Exhaustive search over injective group→token maps. Ties (within the
/// matcher's tolerance) go to the lexicographically smallest sorted
/// (token, group) list.
inline Matching brute_force_matching(const CostMatrix& cost) {
  const std::size_t k = cost.tokens, g = cost.groups;
  Matching best;
  best.group_of_token.assign(k, std::nullopt);
  best.token_of_group.assign(g, 0);
  if (g == 0) return best;
  if (g > k) throw ValidationError("brute_force_matching: more groups than tokens");

  std::vector<std::vector<std::size_t>> candidates;
  std::vector<double> totals;
  std::vector<std::size_t> assign(g);
  std::vector<char> used(k, 0);
  auto rec = [&](auto&& self, std::size_t gi) -> void {
    if (gi == g) {
      candidates.push_back(assign);
      totals.push_back(assignment_cost(cost, assign));
      return;
    }
    for (std::size_t t = 0; t < k; ++t) {
      if (used[t]) continue;
      used[t] = 1;
      assign[gi] = t;
      self(self, gi + 1);
      used[t] = 0;
    }
  };
  rec(rec, 0);
  const double min_total = *std::min_element(totals.begin(), totals.end());
  const double slack = kMatchingTieTolerance * std::max(1.0, std::abs(min_total));
  auto pairs = [](const std::vector<std::size_t>& a) {
    std::vector<std::pair<std::size_t, std::size_t>> p;
    for (std::size_t gi = 0; gi < a.size(); ++gi) p.emplace_back(a[gi], gi);
    std::sort(p.begin(), p.end());
    return p;
  };
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (totals[i] > min_total + slack) continue;
    if (!pick || pairs(candidates[i]) < pairs(candidates[*pick])) pick = i;
  }
  best.token_of_group = candidates[*pick];
  for (std::size_t gi = 0; gi < g; ++gi) best.group_of_token[best.token_of_group[gi]] = gi;
  best.total_cost = totals[*pick];
  return best;
}

/// One detection in a reference AP computation; `key` scopes matching.
struct RefDetection {
  std::string key;
  std::set<ActorId> members;
  double confidence;
};
struct RefTruth {
  std::string key;
  std::set<ActorId> members;
};

inline double ref_iou(const std::set<ActorId>& a, const std::set<ActorId>& b) {
  std::vector<ActorId> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  return uni.empty() ? 0.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

/// AP as the sum, over true positives, of the best precision reached at or
/// after that rank, divided by the number of ground truths.
inline std::optional<double> ref_average_precision(std::vector<RefDetection> dets,
                                                   const std::vector<RefTruth>& truths, double thr) {
  if (truths.empty()) return std::nullopt;
  std::sort(dets.begin(), dets.end(), [](const RefDetection& a, const RefDetection& b) {
    return std::tie(b.confidence, a.key, a.members) < std::tie(a.confidence, b.key, b.members);
  });
  std::vector<bool> matched(truths.size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (std::size_t r = 0; r < dets.size(); ++r) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < truths.size(); ++i) {
      if (matched[i] || truths[i].key != dets[r].key) continue;
      if (!best || ref_iou(dets[r].members, truths[i].members) > ref_iou(dets[r].members, truths[*best].members))
        best = i;
    }
    if (best && ref_iou(dets[r].members, truths[*best].members) >= thr) {
      matched[*best] = true;
      tp[r] = true;
    }
  }
  double ap = 0.0;
  for (std::size_t r = 0; r < dets.size(); ++r) {
    if (!tp[r]) continue;
    double best_prec = 0.0;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < dets.size(); ++j) {
      hits += tp[j] ? 1 : 0;
      if (j >= r) best_prec = std::max(best_prec, static_cast<double>(hits) / static_cast<double>(j + 1));
    }
    ap += best_prec / static_cast<double>(truths.size());
  }
  return ap;
}

inline double ref_mean(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  return n ? s / n : 0.0;
}

inline double ref_group_map(const PredictionMap& preds, const TruthMap& truth, int classes, double thr) {
  std::vector<std::optional<double>> aps;
  for (int c = 0; c < classes; ++c) {
    std::vector<RefDetection> d;
    std::vector<RefTruth> t;
    for (const auto& [id, cp] : preds)
      for (const auto& g : cp.groups)
        if (g.activity == c) d.push_back({id, g.member_ids, g.confidence});
    for (const auto& [id, ct] : truth)
      for (const auto& g : ct.groups)
        if (g.activity == c) t.push_back({id, g.member_ids});
    aps.push_back(ref_average_precision(d, t, thr));
  }
  return ref_mean(aps);
}

inline double ref_outlier_miou(const PredictionMap& preds, const TruthMap& truth) {
  double s = 0.0;
  for (const auto& [id, ct] : truth) {
    const auto it = preds.find(id);
    const std::set<ActorId> p = it == preds.end() ? std::set<ActorId>{} : it->second.outliers;
    s += (p.empty() && ct.outliers.empty()) ? 1.0 : ref_iou(p, ct.outliers);
  }
  return truth.empty() ? 1.0 : s / static_cast<double>(truth.size());
}

/// Per-bucket AP with class-aware matching; ranking pools classes and breaks
/// confidence ties by (clip, activity, members).
inline std::vector<std::optional<double>> ref_size_ap(const PredictionMap& preds, const TruthMap& truth,
                                                      double thr) {
  auto bucket = [](std::size_t n) { return n >= 5 ? 4 : n - 1; };
  std::vector<std::optional<double>> out;
  for (std::size_t b = 0; b < 5; ++b) {
    std::vector<RefDetection> d;
    std::vector<RefTruth> t;
    for (const auto& [id, cp] : preds)
      for (const auto& g : cp.groups)
        if (!g.member_ids.empty() && bucket(g.member_ids.size()) == b)
          d.push_back({id + "\x1f" + std::to_string(g.activity), g.member_ids, g.confidence});
    for (const auto& [id, ct] : truth)
      for (const auto& g : ct.groups)
        if (bucket(g.member_ids.size()) == b) t.push_back({id + "\x1f" + std::to_string(g.activity), g.member_ids});
    out.push_back(ref_average_precision(d, t, thr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Randomized benchmarks

/// Uniform reals, or small integers to force exact ties.
inline CostMatrix random_cost(std::mt19937_64& rng, std::size_t k, std::size_t g, bool integers) {
  CostMatrix c{k, g, std::vector<double>(k * g)};
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::uniform_int_distribution<int> small(0, 3);
  for (auto& v : c.values) v = integers ? small(rng) : u(rng);
  return c;
}

struct MetricBenchmark {
  PredictionMap preds;
  TruthMap truth;
};

/// A handful of clips with random partitions and noisy predicted groups.
/// Confidences come from a coarse grid so ranking ties occur.
inline MetricBenchmark random_metric_benchmark(std::mt19937_64& rng, int classes) {
  std::uniform_int_distribution<int> n_clips(1, 4), n_actors(1, 8), cls(0, classes - 1), coin(0, 1),
      grid(0, 4), extra(0, 2);
  MetricBenchmark b;
  const int clips = n_clips(rng);
  for (int c = 0; c < clips; ++c) {
    const std::string id = "clip_" + std::to_string(c);
    const int a = n_actors(rng);
    std::vector<ActorId> ids(static_cast<std::size_t>(a));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ClipTruth t;
    std::size_t pos = 0;
    while (pos < ids.size()) {
      if (coin(rng) && coin(rng)) {
        t.outliers.insert(ids[pos++]);
        continue;
      }
      std::uniform_int_distribution<std::size_t> len(1, std::min<std::size_t>(6, ids.size() - pos));
      GroupGT g;
      const std::size_t n = len(rng);
      for (std::size_t i = 0; i < n; ++i) g.member_ids.insert(ids[pos++]);
      g.activity = cls(rng);
      t.groups.push_back(std::move(g));
    }
    ClipPrediction p;
    std::uniform_int_distribution<ActorId> any_actor(0, a - 1);
    for (const auto& g : t.groups) {
      if (!coin(rng) && !coin(rng)) continue;  // missed detection
      GroupPrediction gp{g.member_ids, coin(rng) || coin(rng) ? g.activity : cls(rng), 0.2 * grid(rng) + 0.1};
      if (coin(rng)) {
        const ActorId x = any_actor(rng);
        if (gp.member_ids.count(x) && gp.member_ids.size() > 1) gp.member_ids.erase(x);
        else gp.member_ids.insert(x);
      }
      p.groups.push_back(std::move(gp));
    }
    for (int e = extra(rng); e > 0; --e) {  // spurious detections
      GroupPrediction gp;
      gp.member_ids.insert(any_actor(rng));
      gp.member_ids.insert(any_actor(rng));
      gp.activity = cls(rng);
      gp.confidence = 0.2 * grid(rng) + 0.1;
      p.groups.push_back(std::move(gp));
    }
    for (ActorId x : t.outliers)
      if (coin(rng) || coin(rng)) p.outliers.insert(x);
    if (!coin(rng)) p.outliers.insert(any_actor(rng));
    b.truth[id] = std::move(t);
    b.preds[id] = std::move(p);
  }
  return b;
}

struct OracleTally {
  std::size_t checked = 0;
  std::size_t mismatches = 0;
  double max_abs_diff = 0.0;
  bool passed() const { return mismatches == 0; }
};

/// Hungarian vs brute force on `count` random matrices with K ≤ 7. Every
/// fourth matrix uses small integers. Agreement must be exact in both the
/// assignment and the total.
inline OracleTally matching_oracle(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> kd(1, 7);
  OracleTally tally;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = kd(rng);
    std::uniform_int_distribution<std::size_t> gd(0, k);
    const auto cost = random_cost(rng, k, gd(rng), i % 4 == 3);
    const auto fast = hungarian(cost);
    const auto slow = brute_force_matching(cost);
    ++tally.checked;
    const double diff = std::abs(fast.total_cost - slow.total_cost);
    tally.max_abs_diff = std::max(tally.max_abs_diff, diff);
    if (fast.total_cost != slow.total_cost || fast.token_of_group != slow.token_of_group) ++tally.mismatches;
  }
  return tally;
}

/// Group mAP@{1.0,0.5}, Outlier mIoU and size-stratified APs vs the
/// reference on `count` random benchmarks, within `tol`.
inline OracleTally metric_oracle(std::uint64_t seed, std::size_t count, double tol = 1e-9) {
  std::mt19937_64 rng(seed);
  const int classes = Taxonomy{}.num_group_classes();
  OracleTally tally;
  for (std::size_t i = 0; i < count; ++i) {
    const auto b = random_metric_benchmark(rng, classes);
    const auto rep = evaluate(b.preds, b.truth, classes);
    std::vector<std::pair<double, double>> pairs{
        {rep.map_at(1.0), ref_group_map(b.preds, b.truth, classes, 1.0)},
        {rep.map_at(0.5), ref_group_map(b.preds, b.truth, classes, 0.5)},
        {rep.outlier_miou, ref_outlier_miou(b.preds, b.truth)},
    };
    const auto sizes = ref_size_ap(b.preds, b.truth, 0.5);
    bool ok = true;
    for (std::size_t s = 0; s < 5; ++s) {
      if (sizes[s].has_value() != rep.sizes.bucket_ap[s].has_value()) ok = false;
      else if (sizes[s]) pairs.emplace_back(*rep.sizes.bucket_ap[s], *sizes[s]);
    }
    pairs.emplace_back(rep.sizes.map, ref_mean(sizes));
    for (const auto& [x, y] : pairs) {
      const double d = std::abs(x - y);
      tally.max_abs_diff = std::max(tally.max_abs_diff, d);
      if (!(d <= tol)) ok = false;
    }
    ++tally.checked;
    if (!ok) ++tally.mismatches;
  }
  return tally;
}

}  // namespace lirgad::reference
