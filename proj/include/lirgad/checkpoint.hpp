// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints: resolved config, every named parameter, Adam moments for the
// trainable ones, and the global step, in one JSON document. Doubles are
// written with round-trip precision so a resumed run continues bit-exactly.
#pragma once

#include <map>
#include <string>

#include "lirgad/config.hpp"
#include "lirgad/io.hpp"

namespace lirgad {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Json config;
  std::int64_t global_step = 0;
  Json params;  // [{name, shape, data}]
  Json adam;    // {step, moments: [{name, m, v}]}
};

inline Json checkpoint_to_json(const ExperimentConfig& cfg, const LirGadModel& model,
                               const AdamState& adam, std::int64_t global_step) {
  Json j;
  j["format"] = "lirgad-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = cfg.json();
  j["global_step"] = global_step;
  Json params = Json::array();
  for (const auto& p : model.params().items())
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"data", p.tensor.data()}});
  j["params"] = std::move(params);
  Json moments = Json::array();
  std::size_t slot = 0;
  for (const auto& p : model.params().items()) {
    if (!p.tensor.requires_grad()) continue;
    if (slot < adam.first_moment.size()) {
      moments.push_back({{"name", p.name},
                         {"m", adam.first_moment[slot]},
                         {"v", adam.second_moment[slot]}});
    }
    ++slot;
  }
  j["adam"] = {{"step", adam.step}, {"moments", moments}};
  return j;
}

inline void save_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                            const LirGadModel& model, const AdamState& adam, std::int64_t step) {
  write_text(path, checkpoint_to_json(cfg, model, adam, step).dump() + "\n");
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  const Json j = parse_json_document(text, "checkpoint");
  if (!j.is_object() || j.value("format", "") != "lirgad-checkpoint") {
    throw ValidationError("checkpoint: not a checkpoint document");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported version " + j.value("version", Json()).dump());
  }
  for (const char* key : {"config", "global_step", "params", "adam"})
    if (!j.contains(key)) throw ValidationError(std::string("checkpoint: missing '") + key + "'");
  return {j["config"], j["global_step"].get<std::int64_t>(), j["params"], j["adam"]};
}

/// Copies parameters (and, if given, Adam moments) into `model`. The
/// checkpoint must come from a model of the same shape.
inline void restore_checkpoint(const Checkpoint& ck, const ExperimentConfig& cfg, LirGadModel& model,
                               AdamState* adam) {
  const auto k_ck = ck.config.value("K", Json()).dump();
  const auto k_cfg = cfg.json().at("K").dump();
  if (k_ck != k_cfg) {
    throw ConfigError("checkpoint has K=" + k_ck + " but the config asks for K=" + k_cfg);
  }
  std::map<std::string, const Json*> by_name;
  for (const auto& p : ck.params) by_name[p.at("name").get<std::string>()] = &p;
  for (auto& p : model.params().items()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    const auto shape = it->second->at("shape").get<Shape>();
    if (shape != p.tensor.shape()) {
      throw DimensionError("checkpoint parameter '" + p.name + "' has shape " + shape_str(shape) +
                           ", model expects " + shape_str(p.tensor.shape()));
    }
    const auto data = it->second->at("data").get<std::vector<double>>();
    if (data.size() != p.tensor.numel()) {
      throw ValidationError("checkpoint parameter '" + p.name + "' has a truncated data array");
    }
    p.tensor.data() = data;
  }
  if (by_name.size() != model.params().items().size()) {
    throw ConfigError("checkpoint holds parameters the model does not have");
  }
  if (!adam) return;
  *adam = AdamState{};
  adam->step = ck.adam.at("step").get<std::uint64_t>();
  const auto& moments = ck.adam.at("moments");
  if (moments.empty()) return;
  std::size_t slot = 0;
  for (const auto& p : model.params().items()) {
    if (!p.tensor.requires_grad()) continue;
    if (slot >= moments.size() || moments[slot].at("name").get<std::string>() != p.name) {
      throw ConfigError("checkpoint optimizer state does not match trainable parameter '" + p.name + "'");
    }
    adam->first_moment.push_back(moments[slot].at("m").get<std::vector<double>>());
    adam->second_moment.push_back(moments[slot].at("v").get<std::vector<double>>());
    ++slot;
  }
  if (slot != moments.size()) throw ConfigError("checkpoint optimizer state has extra entries");
}

}  // namespace lirgad
