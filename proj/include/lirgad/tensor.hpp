// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a record-on-execute autodiff tape.
//
// A Tensor is a shared handle: copies alias the same storage, the way model
// parameters are shared between a module and the optimizer. Operations are
// recorded on the thread's active Tape (see TapeScope) only when at least
// one input requires a gradient; with no active tape every op is a plain
// forward computation.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lirgad/errors.hpp"

namespace lirgad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto s = std::make_shared<TensorStorage>();
    s->data.assign(numel_of(shape), 0.0);
    s->shape = std::move(shape);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
  }

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (numel_of(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                           std::to_string(numel_of(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    auto s = std::make_shared<TensorStorage>();
    s->shape = std::move(shape);
    s->data = std::move(values);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({}, {v}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false) {
    return from({rows, cols}, std::move(values), requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from({n}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t dim() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->data.size(); }

  /// Leading extent for 2-D tensors; 1 for vectors and scalars.
  std::size_t rows() const { return dim() == 2 ? s_->shape[0] : 1; }
  /// Trailing extent; 1 for scalars.
  std::size_t cols() const { return dim() == 0 ? 1 : s_->shape.back(); }

  std::vector<double>& data() { return s_->data; }
  const std::vector<double>& data() const { return s_->data; }
  double item() const {
    if (numel() != 1) {
      throw UsageError("item() on tensor of shape " + shape_str(shape()));
    }
    return s_->data[0];
  }
  double at(std::size_t r, std::size_t c) const { return s_->data[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return s_->data[r * cols() + c]; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }
  bool has_grad() const { return !s_->grad.empty(); }
  const std::vector<double>& grad() const { return s_->grad; }
  std::vector<double>& grad() { return s_->grad; }
  void zero_grad() { s_->grad.clear(); }

  /// Fresh storage with the same values, not tracked.
  Tensor detach() const { return from(shape(), data(), false); }

  const std::shared_ptr<TensorStorage>& storage() const { return s_; }
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> s) : s_(std::move(s)) {}
  std::shared_ptr<TensorStorage> s_;
};

/// Ordered record of backward closures, one per executed tracked op.
class Tape {
 public:
  void record(std::function<void()> backward) {
    entries_.push_back(std::move(backward));
  }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Replays every entry once, newest first, then drops them.
  void replay() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<std::function<void()>> entries_;
};

/// Installs a tape as the thread's recording target for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active()) {
    Tape::active() = &tape;
  }
  ~TapeScope() { Tape::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (inference / finite-difference evaluation).
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape::active()) { Tape::active() = nullptr; }
  ~NoGradScope() { Tape::active() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

inline std::vector<double>& grad_buffer(TensorStorage& s) {
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  return s.grad;
}

/// Marks `out` as tracked and returns the tape if any input needs a gradient.
inline Tape* track(Tensor& out, std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) {
      out.set_requires_grad(true);
      return tape;
    }
  }
  return nullptr;
}

inline Tape* track(Tensor& out, const std::vector<Tensor>& inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) {
      out.set_requires_grad(true);
      return tape;
    }
  }
  return nullptr;
}

}  // namespace detail

/// Backpropagates from a scalar loss through every entry of `tape`.
/// Gradients accumulate into requires_grad tensors; the tape is emptied.
inline void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward: loss was not produced on a tape");
  }
  auto& g = detail::grad_buffer(*loss.storage());
  g[0] += 1.0;
  tape.replay();
}

}  // namespace lirgad
