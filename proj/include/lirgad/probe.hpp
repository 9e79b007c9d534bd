// SPDX-License-Identifier: Apache-2.0
//
// Label-informativeness probes for the stand-in visual features.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "lirgad/scene.hpp"

namespace lirgad {

inline double cosine_similarity(const Tensor& x, std::size_t i, std::size_t j) {
  double dot = 0, ni = 0, nj = 0;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    dot += x.at(i, c) * x.at(j, c);
    ni += x.at(i, c) * x.at(i, c);
    nj += x.at(j, c) * x.at(j, c);
  }
  return dot / std::sqrt(ni * nj);
}

/// Group activity of each actor row, Outlier for outliers.
inline std::vector<ClassId> actor_labels(const SceneClip& clip, const Taxonomy& tax) {
  std::vector<ClassId> y(clip.actors.size(), tax.outlier_id());
  const auto rows = clip.actor_rows();
  for (const auto& g : clip.groups)
    for (ActorId id : g.member_ids) y[rows.at(id)] = g.activity;
  return y;
}

struct PairSimilarity {
  double same_group = 0.0;     // mean over clips of the mean same-group pair cosine
  double actor_outlier = 0.0;  // mean over clips of the mean member/outlier pair cosine
  std::size_t clips = 0;       // clips that had both pair kinds
};

inline PairSimilarity pair_similarity(const std::vector<SceneClip>& clips, const FeatureProvider& fp,
                                      double noise) {
  PairSimilarity r;
  for (const auto& clip : clips) {
    const auto x = fp.featurize(clip, noise).actor_features;
    const auto rows = clip.actor_rows();
    double same = 0, cross = 0;
    std::size_t n_same = 0, n_cross = 0;
    for (const auto& g : clip.groups) {
      for (ActorId a : g.member_ids) {
        for (ActorId b : g.member_ids)
          if (a < b) {
            same += cosine_similarity(x, rows.at(a), rows.at(b));
            ++n_same;
          }
        for (ActorId o : clip.outlier_actor_ids) {
          cross += cosine_similarity(x, rows.at(a), rows.at(o));
          ++n_cross;
        }
      }
    }
    if (!n_same || !n_cross) continue;
    r.same_group += same / static_cast<double>(n_same);
    r.actor_outlier += cross / static_cast<double>(n_cross);
    ++r.clips;
  }
  if (r.clips) {
    r.same_group /= static_cast<double>(r.clips);
    r.actor_outlier /= static_cast<double>(r.clips);
  }
  return r;
}

/// Nearest-centroid accuracy on actor features: centroids per label are fit
/// on `fit` and scored on `test`.
inline double nearest_centroid_accuracy(const std::vector<SceneClip>& fit, const std::vector<SceneClip>& test,
                                        const FeatureProvider& fp, double noise, const Taxonomy& tax = {}) {
  const std::size_t d = fp.width();
  const std::size_t c = static_cast<std::size_t>(tax.num_classes());
  std::vector<double> centroid(c * d, 0.0);
  std::vector<std::size_t> count(c, 0);
  for (const auto& clip : fit) {
    const auto x = fp.featurize(clip, noise).actor_features;
    const auto y = actor_labels(clip, tax);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto k = static_cast<std::size_t>(y[i]);
      ++count[k];
      for (std::size_t j = 0; j < d; ++j) centroid[k * d + j] += x.at(i, j);
    }
  }
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t j = 0; j < d; ++j)
      if (count[k]) centroid[k * d + j] /= static_cast<double>(count[k]);
  std::size_t hits = 0, total = 0;
  for (const auto& clip : test) {
    const auto x = fp.featurize(clip, noise).actor_features;
    const auto y = actor_labels(clip, tax);
    for (std::size_t i = 0; i < y.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t k = 0; k < c; ++k) {
        if (!count[k]) continue;
        double dist = 0;
        for (std::size_t j = 0; j < d; ++j) dist += std::pow(x.at(i, j) - centroid[k * d + j], 2);
        if (dist < best) {
          best = dist;
          arg = k;
        }
      }
      hits += arg == static_cast<std::size_t>(y[i]);
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

/// Clips with seeds first_seed, first_seed+1, ...
inline std::vector<SceneClip> seeded_clips(std::uint64_t first_seed, std::size_t n,
                                           const GeneratorParams& params = {}) {
  std::vector<SceneClip> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(first_seed + i, params));
  return out;
}

}  // namespace lirgad
