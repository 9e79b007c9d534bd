// SPDX-License-Identifier: Apache-2.0
//
// Flat experiment configuration. Every tunable lives under one dotted key;
// files and `key=value` overrides may only touch keys that have a default.
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lirgad/model.hpp"
#include "lirgad/optim.hpp"

namespace lirgad {

using Json = nlohmann::json;

class ExperimentConfig {
 public:
  ExperimentConfig() : values_(defaults()) {}

  static Json defaults() {
    return Json{
        {"seed", 1},
        {"K", 12},
        {"N", 3},
        {"heads", 4},
        {"T", 5},
        {"D_vis", 64},
        {"D_text", 64},
        {"decoder.layers", 2},
        {"decoder.heads", 4},
        {"decoder.adapter_rank", 4},
        {"body_frozen", true},
        {"train_reasoning", false},
        {"mdaf.variant", "sp2"},
        {"use_group_tokens", true},
        {"use_act_token", true},
        {"use_l_act", true},
        {"lambda.group", 2.0},
        {"lambda.mem", 5.0},
        {"lambda.con", 2.0},
        {"lambda.act", 2.0},
        {"lambda.nll", 1.0},
        {"match.mu", 1.0},
        {"lr.base", 1e-5},
        {"lr.peak", 1e-4},
        {"lr.warmup_epochs", 5},
        {"epochs", 20},
        {"batch_size", 4},
        {"max_steps", 0},
        {"features.seed", 1234},
        {"features.noise", 0.05},
        {"dataset", "data"},
        {"out", "runs/default"},
        {"threads", 1},
        {"gen.train_clips", 64},
        {"gen.eval_clips", 16},
        {"gen.min_groups", 1},
        {"gen.max_groups", 3},
        {"gen.min_group_size", 1},
        {"gen.max_group_size", 5},
        {"gen.max_outliers", 2},
        {"gen.outlier_prob", 0.5},
        {"gen.spread", 0.03},
        {"gen.distinct_activities", true},
        {"ablate.seeds", "1,2,3"},
    };
  }

  /// Assigns a typed JSON value. Integers are accepted for real-valued keys.
  void set(const std::string& key, const Json& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    const Json& cur = *it;
    const bool ok = (cur.is_boolean() && value.is_boolean()) ||
                    (cur.is_string() && value.is_string()) ||
                    (cur.is_number_integer() && value.is_number_integer()) ||
                    (cur.is_number_float() && value.is_number());
    if (!ok) {
      throw ConfigError("config key '" + key + "' expects " + cur.type_name() + ", got " +
                        value.dump());
    }
    *it = cur.is_number_float() ? Json(value.get<double>()) : value;
  }

  /// Parses `key=value`; the value is read as JSON, falling back to a string.
  void set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must look like key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    Json v = Json::parse(raw, nullptr, false);
    if (v.is_discarded() || !(v.is_primitive())) v = raw;
    set(key, v);
  }

  void merge(const Json& obj) {
    if (!obj.is_object()) throw ConfigError("config document must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) set(it.key(), it.value());
  }

  static ExperimentConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    Json j = Json::parse(ss.str(), nullptr, false);
    if (j.is_discarded()) throw ParseError("config '" + path + "' is not valid JSON");
    ExperimentConfig c;
    c.merge(j);
    return c;
  }

  const Json& json() const { return values_; }
  std::string dump() const { return values_.dump(2) + "\n"; }

  template <class T>
  T get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->template get<T>();
  }

  std::size_t size(const std::string& key) const {
    const auto v = get<std::int64_t>(key);
    if (v < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
    return static_cast<std::size_t>(v);
  }

  std::vector<std::uint64_t> seed_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    std::stringstream ss(get<std::string>(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      try {
        out.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has a non-integer entry '" + item + "'");
      }
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' lists no seeds");
    return out;
  }

  ModelConfig model() const {
    ModelConfig m;
    m.group_tokens = size("K");
    m.layers = size("N");
    m.heads = size("heads");
    m.d_vis = size("D_vis");
    m.d_text = size("D_text");
    m.decoder.layers = size("decoder.layers");
    m.decoder.heads = size("decoder.heads");
    m.decoder.d_text = m.d_text;
    m.decoder.adapter_rank = size("decoder.adapter_rank");
    m.decoder.body_frozen = get<bool>("body_frozen");
    m.variant = parse_mdaf_variant(get<std::string>("mdaf.variant"));
    m.use_group_tokens = get<bool>("use_group_tokens");
    m.use_act_token = get<bool>("use_act_token");
    m.use_l_act = get<bool>("use_l_act");
    m.train_reasoning = get<bool>("train_reasoning");
    m.validate();
    return m;
  }

  LossOptions losses() const {
    LossOptions o;
    o.weights.group = get<double>("lambda.group");
    o.weights.mem = get<double>("lambda.mem");
    o.weights.con = get<double>("lambda.con");
    o.weights.act = get<double>("lambda.act");
    o.weights.nll = get<double>("lambda.nll");
    o.weights.validate();
    o.mu = get<double>("match.mu");
    o.use_l_act = get<bool>("use_l_act");
    o.train_reasoning = get<bool>("train_reasoning");
    return o;
  }

  LrSchedule schedule(std::size_t steps_per_epoch) const {
    LrSchedule s;
    s.base_lr = get<double>("lr.base");
    s.peak_lr = get<double>("lr.peak");
    s.warmup_epochs = get<std::int64_t>("lr.warmup_epochs");
    s.total_epochs = get<std::int64_t>("epochs");
    s.steps_per_epoch = static_cast<std::int64_t>(steps_per_epoch);
    s.validate();
    return s;
  }

  GeneratorParams generator() const {
    GeneratorParams g;
    g.frames = static_cast<int>(size("T"));
    g.min_groups = static_cast<int>(size("gen.min_groups"));
    g.max_groups = static_cast<int>(size("gen.max_groups"));
    g.min_group_size = static_cast<int>(size("gen.min_group_size"));
    g.max_group_size = static_cast<int>(size("gen.max_group_size"));
    g.max_outliers = static_cast<int>(size("gen.max_outliers"));
    g.outlier_prob = get<double>("gen.outlier_prob");
    g.spread = get<double>("gen.spread");
    g.distinct_activities = get<bool>("gen.distinct_activities");
    g.max_group_budget = static_cast<int>(size("K"));
    g.validate(Taxonomy{});
    return g;
  }

 private:
  Json values_;
};

}  // namespace lirgad
