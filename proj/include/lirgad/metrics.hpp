// SPDX-License-Identifier: Apache-2.0
//
// Group activity detection metrics: Group IoU, all-point interpolated AP,
// Group mAP at IoU thresholds, Outlier mIoU and size-stratified APs.
//
// Conventions:
//  - classes (or size buckets) with no ground-truth instance are left out of
//    every mean;
//  - Outlier IoU of two empty sets is 1;
//  - predictions are ranked by confidence, ties broken by clip id and then
//    by the member list, and each takes the unmatched ground truth with the
//    highest IoU (lowest index on ties) if that IoU reaches the threshold.
#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lirgad/gad.hpp"
#include "lirgad/scene.hpp"

namespace lirgad {

struct GroupPrediction {
  std::set<ActorId> member_ids;
  ClassId activity = 0;
  double confidence = 0.0;
  bool operator==(const GroupPrediction&) const = default;
};

struct ClipPrediction {
  std::vector<GroupPrediction> groups;
  std::set<ActorId> outliers;
  bool operator==(const ClipPrediction&) const = default;
};

/// Per-clip predictions keyed by clip id.
using PredictionMap = std::map<std::string, ClipPrediction>;

/// Actor rows of `pred` correspond to `actor_ids` in order.
inline ClipPrediction decode_predictions(const PredictionSet& pred,
                                         const std::vector<ActorId>& actor_ids) {
  const std::size_t k = pred.group_logits.rows();
  const std::size_t cg = pred.group_logits.cols();
  const std::size_t slots = k + 1;
  if (pred.membership_logits.rows() != actor_ids.size()) {
    throw DimensionError("decode_predictions: " + std::to_string(pred.membership_logits.rows()) +
                         " membership rows for " + std::to_string(actor_ids.size()) + " actors");
  }
  ClipPrediction out;
  std::vector<std::set<ActorId>> members(k);
  for (std::size_t i = 0; i < actor_ids.size(); ++i) {
    const double* z = pred.membership_logits.data().data() + i * slots;
    const std::size_t best = static_cast<std::size_t>(std::max_element(z, z + slots) - z);
    if (best == k) out.outliers.insert(actor_ids[i]);
    else members[best].insert(actor_ids[i]);
  }
  for (std::size_t t = 0; t < k; ++t) {
    if (members[t].empty()) continue;
    const double* z = pred.group_logits.data().data() + t * cg;
    const std::size_t cls = static_cast<std::size_t>(std::max_element(z, z + cg) - z);
    if (cls == cg - 1) continue;  // no-group class
    double mx = z[cls], s = 0.0;
    for (std::size_t j = 0; j < cg; ++j) s += std::exp(z[j] - mx);
    out.groups.push_back({members[t], static_cast<ClassId>(cls), 1.0 / s});
  }
  return out;
}

inline double group_iou(const std::set<ActorId>& a, const std::set<ActorId>& b) {
  std::size_t inter = 0;
  for (ActorId id : a) inter += b.count(id);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// One prediction participating in an AP computation.
struct RankedDetection {
  std::string clip_id;
  std::set<ActorId> member_ids;
  double confidence = 0.0;
};

struct GroundTruthGroup {
  std::string clip_id;
  std::set<ActorId> member_ids;
};

/// All-point interpolated AP for one class (or pooled bucket). Returns
/// nullopt when there is no ground truth.
inline std::optional<double> average_precision(std::vector<RankedDetection> preds,
                                               const std::vector<GroundTruthGroup>& gts,
                                               double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ConfigError("average_precision: IoU threshold must lie in (0,1]");
  }
  if (gts.empty()) return std::nullopt;
  std::stable_sort(preds.begin(), preds.end(), [](const RankedDetection& a, const RankedDetection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.clip_id != b.clip_id) return a.clip_id < b.clip_id;
    return a.member_ids < b.member_ids;
  });
  std::map<std::string, std::vector<std::size_t>> gts_by_clip;
  for (std::size_t i = 0; i < gts.size(); ++i) gts_by_clip[gts[i].clip_id].push_back(i);
  std::vector<char> taken(gts.size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < preds.size(); ++r) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    auto it = gts_by_clip.find(preds[r].clip_id);
    if (it != gts_by_clip.end()) {
      for (std::size_t gi : it->second) {
        if (taken[gi]) continue;
        const double iou = group_iou(preds[r].member_ids, gts[gi].member_ids);
        if (iou > best_iou) {
          best_iou = iou;
          best = gi;
        }
      }
    }
    if (best && best_iou >= iou_threshold) {
      taken[*best] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  // Precision envelope, then area under the step curve.
  for (std::size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Ground truth for one clip, in the form the metrics need.
struct ClipTruth {
  std::vector<GroupGT> groups;
  std::set<ActorId> outliers;
};
using TruthMap = std::map<std::string, ClipTruth>;

inline TruthMap truth_from_clips(const std::vector<SceneClip>& clips) {
  TruthMap t;
  for (const auto& c : clips) t[c.clip_id] = {c.groups, c.outlier_actor_ids};
  return t;
}

struct ThresholdResult {
  double threshold = 0.0;
  std::vector<std::optional<double>> class_ap;  // per group-activity class
  double map = 0.0;
};

inline ThresholdResult group_map(const PredictionMap& preds, const TruthMap& truth,
                                 int group_classes, double threshold) {
  ThresholdResult res;
  res.threshold = threshold;
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < group_classes; ++c) {
    std::vector<RankedDetection> dets;
    std::vector<GroundTruthGroup> gts;
    for (const auto& [id, cp] : preds)
      for (const auto& g : cp.groups)
        if (g.activity == c) dets.push_back({id, g.member_ids, g.confidence});
    for (const auto& [id, ct] : truth)
      for (const auto& g : ct.groups)
        if (g.activity == c) gts.push_back({id, g.member_ids});
    const auto ap = average_precision(std::move(dets), gts, threshold);
    res.class_ap.push_back(ap);
    if (ap) {
      sum += *ap;
      ++defined;
    }
  }
  res.map = defined ? sum / defined : 0.0;
  return res;
}

/// Per-clip IoU of outlier id sets, averaged over clips.
inline double outlier_miou(const PredictionMap& preds, const TruthMap& truth) {
  if (truth.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& [id, ct] : truth) {
    auto it = preds.find(id);
    const std::set<ActorId> empty;
    const auto& p = it == preds.end() ? empty : it->second.outliers;
    sum += (p.empty() && ct.outliers.empty()) ? 1.0 : group_iou(p, ct.outliers);
  }
  for (const auto& [id, cp] : preds) {
    if (!truth.count(id)) throw ValidationError("outlier_miou: prediction for unknown clip '" + id + "'");
  }
  return sum / static_cast<double>(truth.size());
}

inline constexpr std::array<const char*, 5> kSizeBucketNames{"G1", "G2", "G3", "G4", "G5plus"};

inline std::size_t size_bucket(std::size_t members) { return std::min<std::size_t>(members, 5) - 1; }

struct SizeStratified {
  std::array<std::optional<double>, 5> bucket_ap;
  double map = 0.0;
};

/// Buckets by member count (1..4, ≥5). Within a bucket, predictions of that
/// size are ranked jointly across classes; a match needs the same activity.
inline SizeStratified size_stratified_ap(const PredictionMap& preds, const TruthMap& truth,
                                         double threshold = 0.5) {
  SizeStratified res;
  double sum = 0.0;
  int defined = 0;
  for (std::size_t b = 0; b < 5; ++b) {
    // Encoding the activity into the clip key keeps matching class-aware
    // while ranking stays pooled.
    std::vector<RankedDetection> dets;
    std::vector<GroundTruthGroup> gts;
    auto key = [](const std::string& clip, ClassId c) { return clip + "\x1f" + std::to_string(c); };
    for (const auto& [id, cp] : preds)
      for (const auto& g : cp.groups)
        if (!g.member_ids.empty() && size_bucket(g.member_ids.size()) == b)
          dets.push_back({key(id, g.activity), g.member_ids, g.confidence});
    for (const auto& [id, ct] : truth)
      for (const auto& g : ct.groups)
        if (size_bucket(g.member_ids.size()) == b) gts.push_back({key(id, g.activity), g.member_ids});
    res.bucket_ap[b] = average_precision(std::move(dets), gts, threshold);
    if (res.bucket_ap[b]) {
      sum += *res.bucket_ap[b];
      ++defined;
    }
  }
  res.map = defined ? sum / defined : 0.0;
  return res;
}

struct EvalReport {
  std::vector<ThresholdResult> thresholds;
  double outlier_miou = 0.0;
  SizeStratified sizes;
  std::size_t clip_count = 0;

  double map_at(double threshold) const {
    for (const auto& t : thresholds)
      if (t.threshold == threshold) return t.map;
    throw UsageError("no mAP computed at threshold " + std::to_string(threshold));
  }
};

inline EvalReport evaluate(const PredictionMap& preds, const TruthMap& truth, int group_classes,
                           const std::vector<double>& thresholds = {1.0, 0.5}) {
  EvalReport r;
  for (double t : thresholds) r.thresholds.push_back(group_map(preds, truth, group_classes, t));
  r.outlier_miou = outlier_miou(preds, truth);
  r.sizes = size_stratified_ap(preds, truth, 0.5);
  r.clip_count = truth.size();
  return r;
}

}  // namespace lirgad
