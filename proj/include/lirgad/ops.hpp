// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations on Tensor. Matrices are row-major 2-D tensors;
// "row" ops also accept a 1-D tensor, treated as a single row.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "lirgad/tensor.hpp"

namespace lirgad {

namespace kernel {

// C[m×n] += A[m×k] · B[k×n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace kernel

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

/// Row view of a tensor: (rows, cols) where 1-D counts as one row.
inline std::pair<std::size_t, std::size_t> row_view(const Tensor& t) {
  if (t.dim() == 0) return {1, 1};
  if (t.dim() == 1) return {1, t.shape()[0]};
  if (t.dim() == 2) return {t.shape()[0], t.shape()[1]};
  return {t.numel() / t.shape().back(), t.shape().back()};
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([as = a.storage(), bs = b.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      for (auto* s : {as.get(), bs.get()}) {
        if (!s->requires_grad) continue;
        auto& g = detail::grad_buffer(*s);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] - b.data()[i];
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([as = a.storage(), bs = b.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      if (as->requires_grad) {
        auto& g = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
      }
      if (bs->requires_grad) {
        auto& g = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= os->grad[i];
      }
    });
  }
  return out;
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([as = a.storage(), bs = b.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      if (as->requires_grad) {
        auto& g = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto& g = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i] * as->data[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * s;
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage(), s] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i] * s;
    });
  }
  return out;
}

/// a[m×n] + b[n] broadcast over rows (b may also be 1×n).
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  const auto [m, n] = detail::row_view(a);
  if (b.numel() != n) {
    throw DimensionError("add_row: row width " + std::to_string(n) +
                         " vs bias " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = a.data()[i * n + j] + b.data()[j];
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([as = a.storage(), bs = b.storage(), os = out.storage(), m = m, n = n] {
      if (os->grad.empty()) return;
      if (as->requires_grad) {
        auto& g = detail::grad_buffer(*as);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
      }
      if (bs->requires_grad) {
        auto& g = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += os->grad[i * n + j];
      }
    });
  }
  return out;
}

/// tanh-approximated GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x = a.data()[i];
    o[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = as->data[i];
        const double u = kC * (x + kA * x * x * x);
        const double t = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * x * x);
        g[i] += os->grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
      }
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor out = Tensor::from(std::move(shape), a.data());
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
    });
  }
  return out;
}

// ----------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage()] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      for (double& v : g) v += os->grad[0];
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

/// Column-wise mean of a matrix → vector of width n.
inline Tensor mean_rows(const Tensor& a) {
  const auto [m, n] = detail::row_view(a);
  if (m == 0) throw DimensionError("mean_rows of a matrix with no rows");
  Tensor out = Tensor::zeros({n});
  auto& o = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[j] += a.data()[i * n + j];
  for (double& v : o) v /= static_cast<double>(m);
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage(), m = m, n = n] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += os->grad[j] * inv;
    });
  }
  return out;
}

/// Mean of squared differences over all entries.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  const Tensor d = sub(a, b);
  return mean(mul(d, d));
}

// ---------------------------------------------------------------- linear alg

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  kernel::gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([as = a.storage(), bs = b.storage(), os = out.storage(), m, k, n] {
      if (os->grad.empty()) return;
      if (as->requires_grad)
        kernel::gemm_nt(os->grad.data(), bs->data.data(),
                        detail::grad_buffer(*as).data(), m, n, k);
      if (bs->requires_grad)
        kernel::gemm_tn(as->data.data(), os->grad.data(),
                        detail::grad_buffer(*bs).data(), m, k, n);
    });
  }
  return out;
}

/// a[m×k] · b[n×k]ᵀ without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  Tensor out = Tensor::zeros({m, n});
  kernel::gemm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([as = a.storage(), bs = b.storage(), os = out.storage(), m, k, n] {
      if (os->grad.empty()) return;
      if (as->requires_grad)
        kernel::gemm_nn(os->grad.data(), bs->data.data(),
                        detail::grad_buffer(*as).data(), m, n, k);
      if (bs->requires_grad)
        kernel::gemm_tn(os->grad.data(), as->data.data(),
                        detail::grad_buffer(*bs).data(), m, n, k);
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage(), m, n] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += os->grad[j * m + i];
    });
  }
  return out;
}

// ------------------------------------------------------------ row / col plumbing

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t n = detail::row_view(parts.front()).second;
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    const auto [pm, pn] = detail::row_view(p);
    if (pn != n) {
      throw DimensionError("concat_rows: width " + std::to_string(pn) + " vs " +
                           std::to_string(n));
    }
    m += pm;
  }
  Tensor out = Tensor::zeros({m, n});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
    off += p.numel();
  }
  if (Tape* tape = detail::track(out, parts)) {
    std::vector<std::shared_ptr<TensorStorage>> ins;
    for (const Tensor& p : parts) ins.push_back(p.storage());
    tape->record([ins = std::move(ins), os = out.storage()] {
      if (os->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& s : ins) {
        if (s->requires_grad) {
          auto& g = detail::grad_buffer(*s);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[off + i];
        }
        off += s->data.size();
      }
    });
  }
  return out;
}

/// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const auto [m, n] = detail::row_view(a);
  if (begin > end || end > m) {
    throw IndexError("slice_rows [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") of " + shape_str(a.shape()));
  }
  Tensor out = Tensor::from({end - begin, n},
                            std::vector<double>(a.data().begin() + begin * n,
                                                a.data().begin() + end * n));
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage(), begin, n = n] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < os->grad.size(); ++i) g[begin * n + i] += os->grad[i];
    });
  }
  return out;
}

/// Row `r` as a 1-D vector.
inline Tensor row(const Tensor& a, std::size_t r) {
  const Tensor s = slice_rows(a, r, r + 1);
  return reshape(s, {s.numel()});
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const auto [m, n] = detail::row_view(a);
  if (begin > end || end > n) {
    throw IndexError("slice_cols [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") of " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out = Tensor::zeros({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out.data()[i * w + j] = a.data()[i * n + begin + j];
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([as = a.storage(), os = out.storage(), m = m, n = n, begin, w] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*as);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += os->grad[i * w + j];
    });
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t m = detail::row_view(parts.front()).first;
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    const auto [pm, pn] = detail::row_view(p);
    if (pm != m) {
      throw DimensionError("concat_cols: rows " + std::to_string(pm) + " vs " +
                           std::to_string(m));
    }
    n += pn;
  }
  Tensor out = Tensor::zeros({m, n});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t pn = detail::row_view(p).second;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < pn; ++j) out.data()[i * n + off + j] = p.data()[i * pn + j];
    off += pn;
  }
  if (Tape* tape = detail::track(out, parts)) {
    std::vector<std::shared_ptr<TensorStorage>> ins;
    for (const Tensor& p : parts) ins.push_back(p.storage());
    tape->record([ins = std::move(ins), os = out.storage(), m, n] {
      if (os->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& s : ins) {
        const std::size_t pn = m == 0 ? 0 : s->data.size() / m;
        if (s->requires_grad) {
          auto& g = detail::grad_buffer(*s);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pn; ++j) g[i * pn + j] += os->grad[i * n + off + j];
        }
        off += pn;
      }
    });
  }
  return out;
}

/// Embedding lookup: out[i] = table[indices[i]].
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  detail::require_matrix(table, "gather_rows");
  const std::size_t m = table.shape()[0], n = table.shape()[1];
  Tensor out = Tensor::zeros({indices.size(), n});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m) {
      throw IndexError("gather_rows: index " + std::to_string(indices[i]) +
                       " out of " + std::to_string(m) + " rows");
    }
    std::copy_n(table.data().begin() + indices[i] * n, n, out.data().begin() + i * n);
  }
  if (Tape* tape = detail::track(out, {&table})) {
    tape->record([ts = table.storage(), os = out.storage(),
                  idx = std::vector<std::size_t>(indices.begin(), indices.end()), n] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*ts);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) g[idx[i] * n + j] += os->grad[i * n + j];
    });
  }
  return out;
}

// ------------------------------------------------------------- normalization

/// Boolean mask over a (rows × cols) score matrix; true = key allowed.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask causal(std::size_t n) {
    AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) m.allowed[i * n + j] = 1;
    return m;
  }
  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

/// Row-wise softmax with max subtraction. Masked entries get probability 0;
/// a row with every entry masked is all zeros.
inline Tensor softmax_rows(const Tensor& x, const AttentionMask* mask = nullptr) {
  const auto [m, n] = detail::row_view(x);
  if (mask && (mask->rows != m || mask->cols != n)) {
    throw DimensionError("softmax_rows: mask " + std::to_string(mask->rows) + "x" +
                         std::to_string(mask->cols) + " vs input " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * n;
    double* oi = out.data().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!mask || (*mask)(i, j)) mx = std::max(mx, xi[j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)(i, j)) continue;
      oi[j] = std::exp(xi[j] - mx);
      z += oi[j];
    }
    for (std::size_t j = 0; j < n; ++j) oi[j] /= z;
  }
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([xs = x.storage(), os = out.storage(), m = m, n = n] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*xs);
      for (std::size_t i = 0; i < m; ++i) {
        const double* yi = os->data.data() + i * n;
        const double* gi = os->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += yi[j] * gi[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += yi[j] * (gi[j] - dot);
      }
    });
  }
  return out;
}

inline Tensor log_softmax_rows(const Tensor& x) {
  const auto [m, n] = detail::row_view(x);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = xi[j] - lse;
  }
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([xs = x.storage(), os = out.storage(), m = m, n = n] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*xs);
      for (std::size_t i = 0; i < m; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += os->grad[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          g[i * n + j] += os->grad[i * n + j] - std::exp(os->data[i * n + j]) * gs;
      }
    });
  }
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row standardization, x̂ = (x − μ)/√(σ² + ε), followed by gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const auto [m, d] = detail::row_view(x);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: width " + std::to_string(d) + " vs gain " +
                         shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(m * d), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xi[j] - mu) * inv_std[i];
      out.data()[i * d + j] = xhat[i * d + j] * gain.data()[j] + bias.data()[j];
    }
  }
  if (Tape* tape = detail::track(out, {&x, &gain, &bias})) {
    tape->record([xs = x.storage(), gs = gain.storage(), bs = bias.storage(),
                  os = out.storage(), xhat = std::move(xhat),
                  inv_std = std::move(inv_std), m = m, d = d] {
      if (os->grad.empty()) return;
      const auto& go = os->grad;
      if (gs->requires_grad) {
        auto& g = detail::grad_buffer(*gs);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) g[j] += go[i * d + j] * xhat[i * d + j];
      }
      if (bs->requires_grad) {
        auto& g = detail::grad_buffer(*bs);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) g[j] += go[i * d + j];
      }
      if (xs->requires_grad) {
        auto& g = detail::grad_buffer(*xs);
        std::vector<double> dxhat(d);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dx = 0.0, mean_dx_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = go[i * d + j] * gs->data[j];
            mean_dx += dxhat[j];
            mean_dx_xhat += dxhat[j] * xhat[i * d + j];
          }
          mean_dx /= static_cast<double>(d);
          mean_dx_xhat /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            g[i * d + j] +=
                inv_std[i] * (dxhat[j] - mean_dx - xhat[i * d + j] * mean_dx_xhat);
        }
      }
    });
  }
  return out;
}

// --------------------------------------------------------------- attention

/// Multi-head scaled dot-product attention over already-projected q, k, v.
/// Heads split the feature axis into equal contiguous slices.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionMask* mask, std::size_t heads) {
  detail::require_matrix(q, "attention");
  detail::require_matrix(k, "attention");
  detail::require_matrix(v, "attention");
  const std::size_t d = q.shape()[1];
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.shape()[1] != d || v.shape()[1] != d || k.shape()[0] != v.shape()[0]) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  if (heads == 1) {
    return matmul(softmax_rows(scale(matmul_nt(q, k), inv_sqrt), mask), v);
  }
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    outs.push_back(matmul(softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask), vh));
  }
  return concat_cols(outs);
}

// ------------------------------------------------------------------ losses

/// Mean binary cross-entropy over n logits, in the overflow-free form
/// max(z,0) − z·y + log(1 + e^{−|z|}).
inline Tensor bce_with_logits(const Tensor& z, std::span<const double> y) {
  if (z.numel() != y.size()) {
    throw DimensionError("bce_with_logits: " + std::to_string(z.numel()) +
                         " logits vs " + std::to_string(y.size()) + " labels");
  }
  if (y.empty()) throw DimensionError("bce_with_logits: empty input");
  const std::size_t n = y.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = z.data()[i];
    acc += std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  if (Tape* tape = detail::track(out, {&z})) {
    tape->record([zs = z.storage(), os = out.storage(),
                  labels = std::vector<double>(y.begin(), y.end()), n] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*zs);
      const double s = os->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double zi = zs->data[i];
        const double sig = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi))
                                   : std::exp(zi) / (1.0 + std::exp(zi));
        g[i] += s * (sig - labels[i]);
      }
    });
  }
  return out;
}

/// Mean over rows of −log softmax(z_i)[target_i].
inline Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets) {
  const auto [m, c] = detail::row_view(logits);
  if (targets.size() != m) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(m) + " rows vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (m == 0) throw DimensionError("cross_entropy_rows: no rows");
  std::vector<double> probs(m * c);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= c) {
      throw IndexError("cross_entropy: class index " + std::to_string(targets[i]) +
                       " out of range [0," + std::to_string(c) + ")");
    }
    const double* zi = logits.data().data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, zi[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(zi[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(zi[j] - mx) / z;
    acc += (mx + std::log(z)) - zi[targets[i]];
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(m));
  if (Tape* tape = detail::track(out, {&logits})) {
    tape->record([ls = logits.storage(), os = out.storage(), probs = std::move(probs),
                  tgt = std::vector<std::size_t>(targets.begin(), targets.end()), m = m,
                  c = c] {
      if (os->grad.empty()) return;
      auto& g = detail::grad_buffer(*ls);
      const double s = os->grad[0] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j)
          g[i * c + j] += s * (probs[i * c + j] - (j == tgt[i] ? 1.0 : 0.0));
    });
  }
  return out;
}

/// −log softmax(z)[class_index] for a single logit vector.
inline Tensor cross_entropy_with_logits(const Tensor& z, std::size_t class_index) {
  if (class_index >= z.numel()) {
    throw IndexError("cross_entropy: class index " + std::to_string(class_index) +
                     " out of range [0," + std::to_string(z.numel()) + ")");
  }
  const std::size_t idx[1] = {class_index};
  return cross_entropy_rows(reshape(z, {1, z.numel()}), idx);
}

}  // namespace lirgad
