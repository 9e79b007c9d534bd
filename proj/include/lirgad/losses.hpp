// SPDX-License-Identifier: Apache-2.0
//
// Set-prediction targets and the weighted training objective
//   L = L_ind + λg L_group + λm L_mem + λc L_con + λa L_act [+ λn L_nll].
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "lirgad/gad.hpp"
#include "lirgad/matching.hpp"
#include "lirgad/scene.hpp"

namespace lirgad {

struct LossWeights {
  double group = 2.0;
  double mem = 5.0;
  double con = 2.0;
  double act = 2.0;
  /// Weight of the decoder NLL when reasoning training is on.
  double nll = 1.0;

  void validate() const {
    for (double w : {group, mem, con, act, nll})
      if (!(w >= 0)) throw ConfigError("loss weights must be nonnegative");
  }
};

/// y[c] = 1 iff activity c occurs in the clip; y[Outlier] = 1 iff the clip
/// has outliers.
inline std::vector<double> multi_hot_label(const SceneClip& clip, const Taxonomy& tax) {
  std::vector<double> y(static_cast<std::size_t>(tax.num_classes()), 0.0);
  for (const auto& g : clip.groups) y[static_cast<std::size_t>(g.activity)] = 1.0;
  if (!clip.outlier_actor_ids.empty()) y[static_cast<std::size_t>(tax.outlier_id())] = 1.0;
  return y;
}

namespace detail {

inline std::vector<double> softmax_row(const double* z, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, z[j]);
  std::vector<double> p(n);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += (p[j] = std::exp(z[j] - mx));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace detail

/// Matching cost: −log p(activity_g | token k) + μ·(1 − softIoU(k, g)), where
/// softIoU compares token k's membership-probability column with group g's
/// member indicator: Σ_{a∈g} p_ak / (|g| + Σ_a p_ak − Σ_{a∈g} p_ak).
inline CostMatrix matching_cost(const PredictionSet& pred, const SceneClip& clip, double mu) {
  const std::size_t k = pred.group_logits.rows();
  const std::size_t cg = pred.group_logits.cols();
  const std::size_t a = clip.actors.size();
  const std::size_t slots = k + 1;
  const auto rows = clip.actor_rows();
  std::vector<double> member_p(a * slots);
  for (std::size_t i = 0; i < a; ++i) {
    const auto p = detail::softmax_row(pred.membership_logits.data().data() + i * slots, slots);
    std::copy(p.begin(), p.end(), member_p.begin() + i * slots);
  }
  CostMatrix cost{k, clip.groups.size(), std::vector<double>(k * clip.groups.size())};
  for (std::size_t t = 0; t < k; ++t) {
    const double* z = pred.group_logits.data().data() + t * cg;
    const auto cls = detail::softmax_row(z, cg);
    double col_sum = 0.0;
    for (std::size_t i = 0; i < a; ++i) col_sum += member_p[i * slots + t];
    for (std::size_t g = 0; g < clip.groups.size(); ++g) {
      const auto& grp = clip.groups[g];
      double inter = 0.0;
      for (ActorId id : grp.member_ids) inter += member_p[rows.at(id) * slots + t];
      const double uni = static_cast<double>(grp.member_ids.size()) + col_sum - inter;
      const double iou = uni > 0 ? inter / uni : 0.0;
      const double nll = -std::log(std::max(cls[static_cast<std::size_t>(grp.activity)], 1e-300));
      cost(t, g) = nll + mu * (1.0 - iou);
    }
  }
  return cost;
}

/// Mean CE over tokens: matched tokens target their group's activity,
/// unmatched tokens target the no-group class (last column).
inline Tensor group_activity_loss(const Tensor& group_logits, const Matching& m,
                                  const SceneClip& clip) {
  const std::size_t k = group_logits.rows();
  const std::size_t none = group_logits.cols() - 1;
  std::vector<std::size_t> targets(k, none);
  for (std::size_t t = 0; t < k; ++t)
    if (m.group_of_token[t])
      targets[t] = static_cast<std::size_t>(clip.groups[*m.group_of_token[t]].activity);
  return cross_entropy_rows(group_logits, targets);
}

/// Mean CE over actors across K+1 slots: target is the matched token of the
/// actor's group, or the outlier slot K.
inline Tensor membership_loss(const Tensor& membership_logits, const Matching& m,
                              const SceneClip& clip) {
  const std::size_t a = clip.actors.size();
  if (a == 0) return Tensor::scalar(0.0);
  const std::size_t outlier_slot = membership_logits.cols() - 1;
  const auto rows = clip.actor_rows();
  std::vector<std::optional<std::size_t>> targets(a);
  for (std::size_t g = 0; g < clip.groups.size(); ++g)
    for (ActorId id : clip.groups[g].member_ids) targets[rows.at(id)] = m.token_of_group[g];
  for (ActorId id : clip.outlier_actor_ids) targets[rows.at(id)] = outlier_slot;
  std::vector<std::size_t> flat(a);
  for (std::size_t i = 0; i < a; ++i) {
    if (!targets[i]) {
      throw ValidationError("membership_loss: actor " + std::to_string(clip.actors[i].actor_id) +
                            " is neither grouped nor an outlier");
    }
    flat[i] = *targets[i];
  }
  return cross_entropy_rows(membership_logits, flat);
}

/// Mean over matched groups and feature dims of (v_g[token] − mean of member v_a)².
inline Tensor consistency_loss(const Tensor& v_a, const Tensor& v_g, const Matching& m,
                               const SceneClip& clip) {
  if (clip.groups.empty()) return Tensor::scalar(0.0);
  const auto rows = clip.actor_rows();
  std::vector<Tensor> tokens, centers;
  for (std::size_t g = 0; g < clip.groups.size(); ++g) {
    std::vector<Tensor> members;
    for (ActorId id : clip.groups[g].member_ids) {
      const std::size_t r = rows.at(id);
      members.push_back(slice_rows(v_a, r, r + 1));
    }
    centers.push_back(reshape(mean_rows(concat_rows(members)), {1, v_a.cols()}));
    const std::size_t t = m.token_of_group[g];
    tokens.push_back(slice_rows(v_g, t, t + 1));
  }
  return mse(concat_rows(tokens), concat_rows(centers));
}

/// Mean CE over actors against their individual action ids.
inline Tensor individual_action_loss(const Tensor& action_logits, const SceneClip& clip) {
  if (clip.actors.empty()) return Tensor::scalar(0.0);
  std::vector<std::size_t> targets;
  for (const auto& a : clip.actors) targets.push_back(static_cast<std::size_t>(a.individual_action));
  return cross_entropy_rows(action_logits, targets);
}

/// Multi-label BCE on the <ACT> head.
inline Tensor act_multilabel_loss(const Tensor& z, std::span<const double> y) {
  return bce_with_logits(z, y);
}

struct LossParts {
  Tensor ind, group, mem, con, act;
  Tensor nll;  // undefined unless reasoning training is on
};

/// L_ind + λg·L_group + λm·L_mem + λc·L_con + λa·L_act (+ λn·L_nll),
/// accumulated left to right.
inline Tensor total_loss(const LossParts& p, const LossWeights& w, bool use_act = true) {
  Tensor total = p.ind;
  total = add(total, scale(p.group, w.group));
  total = add(total, scale(p.mem, w.mem));
  total = add(total, scale(p.con, w.con));
  if (use_act) total = add(total, scale(p.act, w.act));
  if (p.nll.defined()) total = add(total, scale(p.nll, w.nll));
  return total;
}

}  // namespace lirgad
