// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lirgad/errors.hpp"
#include "lirgad/tensor.hpp"

namespace lirgad {

/// Adam moments for one parameter list. Moments are allocated lazily on the
/// first step so the state can be built before parameters are known.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update:
///   m ← β1 m + (1−β1) g,  v ← β2 v + (1−β2) g²,
///   p ← p − lr · m̂ / (√v̂ + ε).
/// Parameters without a gradient buffer are treated as having zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " +
                         std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() ||
        state.second_moment[i].size() != params[i].numel()) {
      throw DimensionError("adam_step: moment length mismatch for parameter " +
                           std::to_string(i) + " of shape " +
                           shape_str(params[i].shape()));
    }
    if (params[i].has_grad() && params[i].grad().size() != params[i].numel()) {
      throw DimensionError("adam_step: gradient length mismatch for parameter " +
                           std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto& data = p.data();
    const bool has_grad = p.has_grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has_grad ? p.grad()[j] : 0.0;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

/// Linear warmup from base_lr to peak_lr, then linear decay toward zero.
struct LrSchedule {
  double base_lr = 1e-5;
  double peak_lr = 1e-4;
  std::int64_t warmup_epochs = 5;
  std::int64_t total_epochs = 20;
  std::int64_t steps_per_epoch = 1;

  std::int64_t total_steps() const { return total_epochs * steps_per_epoch; }
  std::int64_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }

  void validate() const {
    if (steps_per_epoch < 1 || total_epochs < 1) {
      throw ConfigError("lr schedule needs at least one epoch and one step per epoch");
    }
    if (warmup_epochs < 0 || warmup_epochs > total_epochs) {
      throw ConfigError("lr schedule: warmup_epochs must lie in [0, total_epochs]");
    }
    if (base_lr < 0 || peak_lr < 0) throw ConfigError("lr schedule: negative rate");
  }
};

/// Learning rate at a 0-based global step.
///
/// Warmup covers steps [0, W) and reaches peak_lr exactly at step W−1. The
/// decay phase runs from the peak at step W−1 toward zero at step S (one past
/// the last step), so every in-range step has a strictly positive rate and
/// the decay midpoint (W−1+S)/2 sits at peak_lr/2. With W = 0 the schedule
/// starts at peak_lr; with W = 1 step 0 is the peak.
inline double lr_at(const LrSchedule& s, std::int64_t global_step) {
  s.validate();
  const std::int64_t total = s.total_steps();
  if (global_step < 0 || global_step >= total) {
    throw UsageError("lr_at: step " + std::to_string(global_step) +
                     " outside [0," + std::to_string(total) + ")");
  }
  const std::int64_t warm = s.warmup_steps();
  if (warm >= 2 && global_step < warm) {
    const double frac = static_cast<double>(global_step) / static_cast<double>(warm - 1);
    return s.base_lr + (s.peak_lr - s.base_lr) * frac;
  }
  const std::int64_t peak_step = warm > 0 ? warm - 1 : 0;
  const double span = static_cast<double>(total - peak_step);
  return s.peak_lr * static_cast<double>(total - global_step) / span;
}

}  // namespace lirgad
