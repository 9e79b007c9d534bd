// SPDX-License-Identifier: Apache-2.0
//
// Synthetic group-activity clips, their frozen stand-in visual features, and
// the JSON dataset manifest.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lirgad/errors.hpp"
#include "lirgad/tensor.hpp"

namespace lirgad {

using ActorId = int;
using ClassId = int;

/// Activity classes; "Outlier" is always the last id.
struct Taxonomy {
  std::vector<std::string> names{"Queueing", "Ordering", "Drinking",
                                 "Working",  "Fighting", "Selfie",
                                 "Outlier"};

  int num_classes() const { return static_cast<int>(names.size()); }
  /// Classes a group can carry (everything but Outlier).
  int num_group_classes() const { return num_classes() - 1; }
  ClassId outlier_id() const { return num_classes() - 1; }
  /// Individual actions: one per group activity plus "idle" for outliers.
  int num_actions() const { return num_group_classes() + 1; }
  int idle_action() const { return num_group_classes(); }

  const std::string& name(ClassId c) const {
    if (c < 0 || c >= num_classes()) throw IndexError("class id " + std::to_string(c) + " out of range");
    return names[static_cast<std::size_t>(c)];
  }
  std::optional<ClassId> find(const std::string& n) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == n) return static_cast<ClassId>(i);
    return std::nullopt;
  }

  bool operator==(const Taxonomy&) const = default;
};

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const Box&) const = default;
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

struct ActorTrack {
  ActorId actor_id = 0;
  std::vector<Box> boxes;  // one per frame
  int individual_action = 0;
  bool operator==(const ActorTrack&) const = default;
};

struct GroupGT {
  std::set<ActorId> member_ids;
  ClassId activity = 0;
  bool operator==(const GroupGT&) const = default;
};

struct SceneClip {
  std::string clip_id;
  int frames = 5;
  std::vector<ActorTrack> actors;
  std::vector<GroupGT> groups;
  std::set<ActorId> outlier_actor_ids;
  bool operator==(const SceneClip&) const = default;

  /// Index of each actor id within `actors`.
  std::map<ActorId, std::size_t> actor_rows() const {
    std::map<ActorId, std::size_t> rows;
    for (std::size_t i = 0; i < actors.size(); ++i) rows[actors[i].actor_id] = i;
    return rows;
  }
};

/// Throws ValidationError describing the first violated invariant.
inline void validate_clip(const SceneClip& clip, const Taxonomy& tax, int max_groups) {
  const std::string where = "clip '" + clip.clip_id + "': ";
  if (clip.frames < 1) throw ValidationError(where + "frame count must be positive");
  if (static_cast<int>(clip.groups.size()) > max_groups) {
    throw ValidationError(where + std::to_string(clip.groups.size()) +
                          " groups exceed the token budget " + std::to_string(max_groups));
  }
  std::set<ActorId> ids;
  for (const auto& a : clip.actors) {
    if (!ids.insert(a.actor_id).second) {
      throw ValidationError(where + "duplicate actor id " + std::to_string(a.actor_id));
    }
    if (static_cast<int>(a.boxes.size()) != clip.frames) {
      throw ValidationError(where + "actor " + std::to_string(a.actor_id) + " has " +
                            std::to_string(a.boxes.size()) + " boxes, expected " +
                            std::to_string(clip.frames));
    }
    for (const auto& b : a.boxes) {
      if (!(b.x1 < b.x2 && b.y1 < b.y2) || b.x1 < 0 || b.y1 < 0 || b.x2 > 1 || b.y2 > 1) {
        throw ValidationError(where + "actor " + std::to_string(a.actor_id) +
                              " has a degenerate or out-of-frame box");
      }
    }
    if (a.individual_action < 0 || a.individual_action >= tax.num_actions()) {
      throw ValidationError(where + "actor " + std::to_string(a.actor_id) +
                            " has unknown action " + std::to_string(a.individual_action));
    }
  }
  std::set<ActorId> seen;
  for (std::size_t g = 0; g < clip.groups.size(); ++g) {
    const auto& grp = clip.groups[g];
    if (grp.member_ids.empty()) {
      throw ValidationError(where + "group " + std::to_string(g) + " is empty");
    }
    if (grp.activity < 0 || grp.activity >= tax.num_group_classes()) {
      throw ValidationError(where + "group " + std::to_string(g) +
                            " has invalid activity " + std::to_string(grp.activity));
    }
    for (ActorId id : grp.member_ids) {
      if (!ids.count(id)) {
        throw ValidationError(where + "group " + std::to_string(g) +
                              " references unknown actor " + std::to_string(id));
      }
      if (!seen.insert(id).second) {
        throw ValidationError(where + "actor " + std::to_string(id) +
                              " belongs to more than one group");
      }
    }
  }
  for (ActorId id : clip.outlier_actor_ids) {
    if (!ids.count(id)) {
      throw ValidationError(where + "outlier references unknown actor " + std::to_string(id));
    }
    if (seen.count(id)) {
      throw ValidationError(where + "actor " + std::to_string(id) +
                            " is both a group member and an outlier");
    }
    seen.insert(id);
  }
  if (seen.size() != ids.size()) {
    throw ValidationError(where + "some actor is neither grouped nor an outlier");
  }
}

struct GeneratorParams {
  int frames = 5;
  int min_groups = 1;
  int max_groups = 3;
  int min_group_size = 1;
  int max_group_size = 5;
  /// Each of `max_outliers` candidate outliers appears with this probability.
  int max_outliers = 2;
  double outlier_prob = 0.5;
  /// Std-dev of member offsets around their group center.
  double spread = 0.03;
  /// Minimum distance between group centers.
  double min_center_gap = 0.22;
  /// Groups in one clip carry distinct activities.
  bool distinct_activities = true;
  /// Token budget K; generated clips never exceed it.
  int max_group_budget = 12;

  void validate(const Taxonomy& tax) const {
    if (frames < 1) throw ConfigError("generator: frames must be >= 1");
    if (min_groups < 0 || min_groups > max_groups) {
      throw ConfigError("generator: need 0 <= min_groups <= max_groups");
    }
    if (max_groups > max_group_budget) {
      throw ConfigError("generator: max_groups exceeds the group-token budget");
    }
    if (min_group_size < 1 || min_group_size > max_group_size) {
      throw ConfigError("generator: need 1 <= min_group_size <= max_group_size");
    }
    if (max_outliers < 0) throw ConfigError("generator: max_outliers must be >= 0");
    if (outlier_prob < 0 || outlier_prob > 1) {
      throw ConfigError("generator: outlier_prob must lie in [0,1]");
    }
    if (spread < 0) throw ConfigError("generator: spread must be >= 0");
    if (distinct_activities && max_groups > tax.num_group_classes()) {
      throw ConfigError("generator: distinct activities need max_groups <= " +
                        std::to_string(tax.num_group_classes()));
    }
  }
};

namespace detail {

inline double clamp01(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

inline Box make_box(double cx, double cy, double w, double h) {
  cx = clamp01(cx, w / 2 + 1e-3, 1 - w / 2 - 1e-3);
  cy = clamp01(cy, h / 2 + 1e-3, 1 - h / 2 - 1e-3);
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

/// FNV-1a, stable across platforms.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

/// Groups are tight spatial clusters moving with a shared velocity; outliers
/// are placed and moved independently. Actor ids are 0..A−1 in row order.
inline SceneClip generate_scene(std::uint64_t seed, const GeneratorParams& params,
                                const Taxonomy& tax = {}) {
  params.validate(tax);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };

  SceneClip clip;
  clip.clip_id = "clip_" + std::to_string(seed);
  clip.frames = params.frames;

  const int n_groups = uniform_int(params.min_groups, params.max_groups);
  std::vector<int> activity_pool(static_cast<std::size_t>(tax.num_group_classes()));
  for (int i = 0; i < tax.num_group_classes(); ++i) activity_pool[static_cast<std::size_t>(i)] = i;
  std::shuffle(activity_pool.begin(), activity_pool.end(), rng);

  std::vector<std::array<double, 2>> centers;
  const double step = 0.02;
  auto emit_actor = [&](double cx, double cy, double vx, double vy, int action) {
    ActorTrack a;
    a.actor_id = static_cast<ActorId>(clip.actors.size());
    a.individual_action = action;
    const double w = 0.04 + 0.03 * unit(rng);
    const double h = 0.10 + 0.06 * unit(rng);
    const double jitter_x = 0.004 * gauss(rng), jitter_y = 0.004 * gauss(rng);
    for (int t = 0; t < params.frames; ++t) {
      a.boxes.push_back(detail::make_box(cx + (vx * t + jitter_x * t) * step,
                                         cy + (vy * t + jitter_y * t) * step, w, h));
    }
    clip.actors.push_back(std::move(a));
    return clip.actors.back().actor_id;
  };

  for (int g = 0; g < n_groups; ++g) {
    std::array<double, 2> c{};
    for (int attempt = 0; attempt < 200; ++attempt) {
      c = {0.15 + 0.7 * unit(rng), 0.15 + 0.7 * unit(rng)};
      bool ok = true;
      for (const auto& o : centers)
        if (std::hypot(o[0] - c[0], o[1] - c[1]) < params.min_center_gap) ok = false;
      if (ok) break;
    }
    centers.push_back(c);
    const ClassId activity = params.distinct_activities
                                 ? activity_pool[static_cast<std::size_t>(g)]
                                 : uniform_int(0, tax.num_group_classes() - 1);
    const double vx = gauss(rng), vy = gauss(rng);
    GroupGT grp;
    grp.activity = activity;
    const int size = uniform_int(params.min_group_size, params.max_group_size);
    for (int m = 0; m < size; ++m) {
      grp.member_ids.insert(emit_actor(c[0] + params.spread * gauss(rng),
                                       c[1] + params.spread * gauss(rng), vx, vy, activity));
    }
    clip.groups.push_back(std::move(grp));
  }
  for (int o = 0; o < params.max_outliers; ++o) {
    if (!(unit(rng) < params.outlier_prob)) continue;
    const ActorId id = emit_actor(0.05 + 0.9 * unit(rng), 0.05 + 0.9 * unit(rng),
                                  gauss(rng), gauss(rng), tax.idle_action());
    clip.outlier_actor_ids.insert(id);
  }
  validate_clip(clip, tax, params.max_group_budget);
  return clip;
}

/// Optional pairwise-distance hook: allowed[i*A+j] = 1 iff the mean box
/// centers of actors i and j are within `cutoff`. Not used by the model.
inline std::vector<std::uint8_t> distance_mask(const SceneClip& clip, double cutoff) {
  const std::size_t a = clip.actors.size();
  std::vector<std::uint8_t> mask(a * a, 0);
  auto center = [&](const ActorTrack& t) {
    double x = 0, y = 0;
    for (const auto& b : t.boxes) {
      x += b.cx();
      y += b.cy();
    }
    return std::array<double, 2>{x / t.boxes.size(), y / t.boxes.size()};
  };
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < a; ++j) {
      const auto ci = center(clip.actors[i]), cj = center(clip.actors[j]);
      mask[i * a + j] = std::hypot(ci[0] - cj[0], ci[1] - cj[1]) <= cutoff ? 1 : 0;
    }
  return mask;
}

// ------------------------------------------------------------- featurization

struct FeatureBundle {
  Tensor frame_features;  // T×D_vis
  Tensor actor_features;  // A×D_vis
};

/// Frozen random-projection feature provider standing in for a pretrained
/// backbone. The projections depend only on (seed, taxonomy, width).
class FeatureProvider {
 public:
  /// Weight of box geometry relative to the label one-hots.
  static constexpr double kGeometryScale = 3.0;

  FeatureProvider(std::uint64_t seed, std::size_t width, const Taxonomy& tax = {})
      : tax_(tax), width_(width) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> g(0.0, 1.0);
    actor_in_ = 6 + static_cast<std::size_t>(tax.num_classes() + tax.num_actions());
    frame_in_ = 4 + static_cast<std::size_t>(tax.num_classes());
    const double sa = 1.0 / std::sqrt(static_cast<double>(actor_in_));
    const double sf = 1.0 / std::sqrt(static_cast<double>(frame_in_));
    actor_proj_.resize(width * actor_in_);
    frame_proj_.resize(width * frame_in_);
    for (double& v : actor_proj_) v = g(rng) * sa * 2.0;
    for (double& v : frame_proj_) v = g(rng) * sf * 2.0;
    seed_ = seed;
  }

  std::size_t width() const { return width_; }

  /// Raw (pre-projection) actor descriptor: box center, box size, velocity,
  /// one-hot(activity or Outlier), one-hot(individual action).
  std::vector<double> actor_descriptor(const SceneClip& clip, std::size_t row) const {
    const auto& a = clip.actors[row];
    std::vector<double> d(actor_in_, 0.0);
    double cx = 0, cy = 0, w = 0, h = 0;
    for (const auto& b : a.boxes) {
      cx += b.cx();
      cy += b.cy();
      w += b.x2 - b.x1;
      h += b.y2 - b.y1;
    }
    const double n = static_cast<double>(a.boxes.size());
    const double vx = a.boxes.size() > 1 ? (a.boxes.back().cx() - a.boxes.front().cx()) / (n - 1) : 0.0;
    const double vy = a.boxes.size() > 1 ? (a.boxes.back().cy() - a.boxes.front().cy()) / (n - 1) : 0.0;
    const double s = kGeometryScale;
    d[0] = s * cx / n;
    d[1] = s * cy / n;
    d[2] = s * w / n;
    d[3] = s * h / n;
    d[4] = s * 10.0 * vx;
    d[5] = s * 10.0 * vy;
    ClassId label = tax_.outlier_id();
    for (const auto& g : clip.groups)
      if (g.member_ids.count(a.actor_id)) label = g.activity;
    d[6 + static_cast<std::size_t>(label)] = 1.0;
    d[6 + static_cast<std::size_t>(tax_.num_classes() + a.individual_action)] = 1.0;
    return d;
  }

  FeatureBundle featurize(const SceneClip& clip, double noise_sigma) const {
    if (noise_sigma < 0) throw ConfigError("featurize: noise_sigma must be >= 0");
    std::mt19937_64 rng(seed_ * 0x100000001b3ULL ^ detail::fnv1a(clip.clip_id));
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t A = clip.actors.size();
    const std::size_t T = static_cast<std::size_t>(clip.frames);
    FeatureBundle out{Tensor::zeros({T, width_}), Tensor::zeros({A, width_})};
    for (std::size_t i = 0; i < A; ++i) {
      const auto d = actor_descriptor(clip, i);
      for (std::size_t r = 0; r < width_; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < actor_in_; ++c) acc += actor_proj_[r * actor_in_ + c] * d[c];
        out.actor_features.at(i, r) = acc;
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> d(frame_in_, 0.0);
      double mx = 0, my = 0;
      for (const auto& a : clip.actors) {
        mx += a.boxes[t].cx();
        my += a.boxes[t].cy();
      }
      const double n = std::max<double>(1.0, static_cast<double>(A));
      mx /= n;
      my /= n;
      double var = 0;
      for (const auto& a : clip.actors)
        var += std::pow(a.boxes[t].cx() - mx, 2) + std::pow(a.boxes[t].cy() - my, 2);
      d[0] = mx;
      d[1] = my;
      d[2] = std::sqrt(var / n);
      d[3] = static_cast<double>(A) / 10.0;
      for (const auto& g : clip.groups)
        d[4 + static_cast<std::size_t>(g.activity)] += static_cast<double>(g.member_ids.size()) / n;
      d[4 + static_cast<std::size_t>(tax_.outlier_id())] =
          static_cast<double>(clip.outlier_actor_ids.size()) / n;
      for (std::size_t r = 0; r < width_; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < frame_in_; ++c) acc += frame_proj_[r * frame_in_ + c] * d[c];
        out.frame_features.at(t, r) = acc;
      }
    }
    if (noise_sigma > 0) {
      for (double& v : out.actor_features.data()) v += noise_sigma * noise(rng);
      for (double& v : out.frame_features.data()) v += noise_sigma * noise(rng);
    }
    return out;
  }

 private:
  Taxonomy tax_;
  std::size_t width_;
  std::uint64_t seed_ = 0;
  std::size_t actor_in_ = 0;
  std::size_t frame_in_ = 0;
  std::vector<double> actor_proj_;
  std::vector<double> frame_proj_;
};

inline FeatureBundle featurize(const SceneClip& clip, std::uint64_t seed, double noise_sigma,
                               std::size_t width = 64, const Taxonomy& tax = {}) {
  return FeatureProvider(seed, width, tax).featurize(clip, noise_sigma);
}

// ------------------------------------------------------------------- manifest

inline constexpr int kManifestVersion = 1;

struct Dataset {
  Taxonomy taxonomy;
  std::vector<SceneClip> clips;
  bool operator==(const Dataset&) const = default;
};

inline nlohmann::json clip_to_json(const SceneClip& c) {
  nlohmann::json j;
  j["clip_id"] = c.clip_id;
  j["frames"] = c.frames;
  auto& actors = j["actors"] = nlohmann::json::array();
  for (const auto& a : c.actors) {
    nlohmann::json ja;
    ja["actor_id"] = a.actor_id;
    ja["individual_action"] = a.individual_action;
    auto& boxes = ja["boxes"] = nlohmann::json::array();
    for (const auto& b : a.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    actors.push_back(std::move(ja));
  }
  auto& groups = j["groups"] = nlohmann::json::array();
  for (const auto& g : c.groups) {
    groups.push_back({{"member_ids", g.member_ids}, {"activity", g.activity}});
  }
  j["outlier_actor_ids"] = c.outlier_actor_ids;
  return j;
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* key,
                                   const std::string& path) {
  if (!j.is_object() || !j.contains(key)) {
    throw ParseError("manifest: missing field '" + path + "." + key + "'");
  }
  return j.at(key);
}

template <class T>
T as(const nlohmann::json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest: bad value at '" + path + "': " + e.what());
  }
}

inline std::size_t line_of(const std::string& text, std::size_t byte) {
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(byte, text.size())),
                            '\n'));
}

}  // namespace detail

inline SceneClip clip_from_json(const nlohmann::json& j, const std::string& path) {
  using detail::as;
  using detail::field;
  SceneClip c;
  c.clip_id = as<std::string>(field(j, "clip_id", path), path + ".clip_id");
  c.frames = as<int>(field(j, "frames", path), path + ".frames");
  const auto& actors = field(j, "actors", path);
  if (!actors.is_array()) throw ParseError("manifest: '" + path + ".actors' is not an array");
  for (std::size_t i = 0; i < actors.size(); ++i) {
    const std::string ap = path + ".actors[" + std::to_string(i) + "]";
    ActorTrack a;
    a.actor_id = as<int>(field(actors[i], "actor_id", ap), ap + ".actor_id");
    a.individual_action =
        as<int>(field(actors[i], "individual_action", ap), ap + ".individual_action");
    const auto& boxes = field(actors[i], "boxes", ap);
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      const auto v = as<std::vector<double>>(boxes[b], ap + ".boxes[" + std::to_string(b) + "]");
      if (v.size() != 4) {
        throw ParseError("manifest: '" + ap + ".boxes[" + std::to_string(b) +
                         "]' needs 4 coordinates");
      }
      a.boxes.push_back({v[0], v[1], v[2], v[3]});
    }
    c.actors.push_back(std::move(a));
  }
  const auto& groups = field(j, "groups", path);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::string gp = path + ".groups[" + std::to_string(g) + "]";
    GroupGT grp;
    const auto members = as<std::vector<int>>(field(groups[g], "member_ids", gp), gp + ".member_ids");
    grp.member_ids = {members.begin(), members.end()};
    if (grp.member_ids.size() != members.size()) {
      throw ValidationError("manifest: '" + gp + ".member_ids' repeats an actor");
    }
    grp.activity = as<int>(field(groups[g], "activity", gp), gp + ".activity");
    c.groups.push_back(std::move(grp));
  }
  const auto outliers = as<std::vector<int>>(field(j, "outlier_actor_ids", path),
                                             path + ".outlier_actor_ids");
  c.outlier_actor_ids = {outliers.begin(), outliers.end()};
  return c;
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json j;
  j["version"] = kManifestVersion;
  j["taxonomy"] = ds.taxonomy.names;
  auto& clips = j["clips"] = nlohmann::json::array();
  for (const auto& c : ds.clips) clips.push_back(clip_to_json(c));
  return j;
}

/// Parses and validates a manifest document. `max_groups` bounds groups per clip.
inline Dataset dataset_from_string(const std::string& text, int max_groups = 1 << 30) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest: syntax error at line " +
                     std::to_string(detail::line_of(text, e.byte)) + ": " + e.what());
  }
  const int version = detail::as<int>(detail::field(j, "version", "$"), "$.version");
  if (version != kManifestVersion) {
    throw ParseError("manifest: unsupported version " + std::to_string(version));
  }
  Dataset ds;
  ds.taxonomy.names =
      detail::as<std::vector<std::string>>(detail::field(j, "taxonomy", "$"), "$.taxonomy");
  if (ds.taxonomy.names.size() < 2 || ds.taxonomy.names.back() != "Outlier") {
    throw ValidationError("manifest: taxonomy must end with 'Outlier'");
  }
  const auto& clips = detail::field(j, "clips", "$");
  if (!clips.is_array()) throw ParseError("manifest: '$.clips' is not an array");
  for (std::size_t i = 0; i < clips.size(); ++i) {
    ds.clips.push_back(clip_from_json(clips[i], "$.clips[" + std::to_string(i) + "]"));
    validate_clip(ds.clips.back(), ds.taxonomy, max_groups);
  }
  return ds;
}

inline std::string dataset_to_string(const Dataset& ds) { return dataset_to_json(ds).dump(1) + "\n"; }

inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << dataset_to_string(ds);
  if (!f) throw IoError("write to '" + path + "' failed");
}

inline Dataset read_dataset(const std::string& path, int max_groups = 1 << 30) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return dataset_from_string(ss.str(), max_groups);
}

}  // namespace lirgad
