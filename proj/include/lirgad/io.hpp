// SPDX-License-Identifier: Apache-2.0
//
// On-disk documents: predictions, evaluation reports and small file helpers.
//
// predictions.json
//   { "<clip_id>": { "groups": [ {"members": [ids], "activity": "<name>",
//                                 "confidence": x} ],
//                    "outliers": [ids] } }
//
// report.json
//   { "clip_count": n, "group_map": {"1.0": x, "0.5": y},
//     "class_ap": {"1.0": {"<class>": x | null}, ...},
//     "outlier_miou": x, "size_ap": {"G1": x | null, ...}, "size_map": x }
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "lirgad/metrics.hpp"

namespace lirgad {

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline nlohmann::json parse_json_document(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

/// "%.17g" rendering, used wherever bit-exact round trips matter in text.
inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Threshold key as written in reports ("1.0", "0.5").
inline std::string threshold_key(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", t);
  return buf;
}

inline nlohmann::json predictions_to_json(const PredictionMap& preds, const Taxonomy& tax) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, cp] : preds) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : cp.groups) {
      groups.push_back({{"members", g.member_ids},
                        {"activity", tax.name(g.activity)},
                        {"confidence", g.confidence}});
    }
    j[id] = {{"groups", groups}, {"outliers", cp.outliers}};
  }
  return j;
}

inline PredictionMap predictions_from_json(const nlohmann::json& j, const Taxonomy& tax) {
  if (!j.is_object()) throw ValidationError("predictions: top level must be an object");
  PredictionMap out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string where = "predictions['" + it.key() + "']";
    const auto& v = it.value();
    if (!v.is_object() || !v.contains("groups") || !v.contains("outliers") ||
        !v["groups"].is_array() || !v["outliers"].is_array()) {
      throw ValidationError(where + ": needs 'groups' and 'outliers' arrays");
    }
    ClipPrediction cp;
    for (std::size_t g = 0; g < v["groups"].size(); ++g) {
      const auto& jg = v["groups"][g];
      const std::string gw = where + ".groups[" + std::to_string(g) + "]";
      if (!jg.is_object() || !jg.contains("members") || !jg.contains("activity") ||
          !jg.contains("confidence") || !jg["members"].is_array() || !jg["activity"].is_string() ||
          !jg["confidence"].is_number()) {
        throw ValidationError(gw + ": needs members[], activity name and numeric confidence");
      }
      GroupPrediction gp;
      for (const auto& m : jg["members"]) {
        if (!m.is_number_integer()) throw ValidationError(gw + ": member ids must be integers");
        gp.member_ids.insert(m.get<ActorId>());
      }
      const auto cls = tax.find(jg["activity"].get<std::string>());
      if (!cls || *cls == tax.outlier_id()) {
        throw ValidationError(gw + ": unknown group activity '" + jg["activity"].get<std::string>() + "'");
      }
      gp.activity = *cls;
      gp.confidence = jg["confidence"].get<double>();
      cp.groups.push_back(std::move(gp));
    }
    for (const auto& m : v["outliers"]) {
      if (!m.is_number_integer()) throw ValidationError(where + ": outlier ids must be integers");
      cp.outliers.insert(m.get<ActorId>());
    }
    out[it.key()] = std::move(cp);
  }
  return out;
}

/// Ground truth replayed as predictions with confidence 1.
inline PredictionMap predictions_from_truth(const std::vector<SceneClip>& clips) {
  PredictionMap out;
  for (const auto& c : clips) {
    ClipPrediction cp;
    for (const auto& g : c.groups) cp.groups.push_back({g.member_ids, g.activity, 1.0});
    cp.outliers = c.outlier_actor_ids;
    out[c.clip_id] = std::move(cp);
  }
  return out;
}

inline nlohmann::json report_to_json(const EvalReport& r, const Taxonomy& tax) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  nlohmann::json j;
  j["clip_count"] = r.clip_count;
  j["group_map"] = nlohmann::json::object();
  j["class_ap"] = nlohmann::json::object();
  for (const auto& t : r.thresholds) {
    const auto key = threshold_key(t.threshold);
    j["group_map"][key] = t.map;
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t c = 0; c < t.class_ap.size(); ++c)
      per[tax.name(static_cast<ClassId>(c))] = opt(t.class_ap[c]);
    j["class_ap"][key] = per;
  }
  j["outlier_miou"] = r.outlier_miou;
  j["size_ap"] = nlohmann::json::object();
  for (std::size_t b = 0; b < kSizeBucketNames.size(); ++b) j["size_ap"][kSizeBucketNames[b]] = opt(r.sizes.bucket_ap[b]);
  j["size_map"] = r.sizes.map;
  return j;
}

/// Flat one-row form of a report: mAPs, Outlier mIoU, size APs (empty when undefined).
inline std::string report_csv(const EvalReport& r) {
  std::string head = "clips", row = std::to_string(r.clip_count);
  for (const auto& t : r.thresholds) {
    head += ",group_map_" + threshold_key(t.threshold);
    row += "," + fmt_real(t.map);
  }
  head += ",outlier_miou";
  row += "," + fmt_real(r.outlier_miou);
  for (std::size_t b = 0; b < kSizeBucketNames.size(); ++b) {
    head += std::string(",ap_") + kSizeBucketNames[b];
    row += "," + (r.sizes.bucket_ap[b] ? fmt_real(*r.sizes.bucket_ap[b]) : std::string());
  }
  head += ",size_map";
  row += "," + fmt_real(r.sizes.map);
  return head + "\n" + row + "\n";
}

inline EvalReport report_from_json(const nlohmann::json& j, const Taxonomy& tax) {
  try {
    EvalReport r;
    r.clip_count = j.at("clip_count").get<std::size_t>();
    for (auto it = j.at("group_map").begin(); it != j.at("group_map").end(); ++it) {
      ThresholdResult t;
      t.threshold = std::stod(it.key());
      t.map = it.value().get<double>();
      const auto& per = j.at("class_ap").at(it.key());
      for (int c = 0; c < tax.num_group_classes(); ++c) {
        const auto& v = per.at(tax.name(c));
        t.class_ap.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
      }
      r.thresholds.push_back(std::move(t));
    }
    // Keys come back sorted; restore descending threshold order.
    std::sort(r.thresholds.begin(), r.thresholds.end(),
              [](const ThresholdResult& a, const ThresholdResult& b) { return a.threshold > b.threshold; });
    r.outlier_miou = j.at("outlier_miou").get<double>();
    for (std::size_t b = 0; b < kSizeBucketNames.size(); ++b) {
      const auto& v = j.at("size_ap").at(kSizeBucketNames[b]);
      r.sizes.bucket_ap[b] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    r.sizes.map = j.at("size_map").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
}

}  // namespace lirgad
