// SPDX-License-Identifier: Apache-2.0
//
// Minimum-cost assignment of K prediction tokens to G ≤ K ground-truth groups.
#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lirgad/errors.hpp"

namespace lirgad {

/// K×G row-major cost matrix: rows are tokens, columns are groups.
struct CostMatrix {
  std::size_t tokens = 0;
  std::size_t groups = 0;
  std::vector<double> values;

  double operator()(std::size_t k, std::size_t g) const { return values[k * groups + g]; }
  double& operator()(std::size_t k, std::size_t g) { return values[k * groups + g]; }
};

/// group_of_token[k] is the matched group of token k, or nullopt (∅).
struct Matching {
  std::vector<std::optional<std::size_t>> group_of_token;
  std::vector<std::size_t> token_of_group;
  double total_cost = 0.0;
};

namespace detail {

/// Shortest-augmenting-path Hungarian for an n×m matrix with n ≤ m
/// (rows assigned to distinct columns). Returns the column of each row.
inline std::vector<std::size_t> hungarian_rows(const std::vector<double>& c, std::size_t n,
                                               std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

/// Optimal cost when groups listed in `fixed` are pinned to their tokens and
/// the remaining groups choose among tokens not in `blocked`.
inline double constrained_optimum(const CostMatrix& cost,
                                  const std::vector<std::optional<std::size_t>>& pinned_token,
                                  const std::vector<char>& token_free) {
  double total = 0.0;
  std::vector<std::size_t> rows, cols;
  for (std::size_t g = 0; g < cost.groups; ++g) {
    if (pinned_token[g]) total += cost(*pinned_token[g], g);
    else rows.push_back(g);
  }
  for (std::size_t k = 0; k < cost.tokens; ++k)
    if (token_free[k]) cols.push_back(k);
  if (rows.empty()) return total;
  if (rows.size() > cols.size()) return std::numeric_limits<double>::infinity();
  std::vector<double> sub(rows.size() * cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) sub[i * cols.size() + j] = cost(cols[j], rows[i]);
  const auto assign = hungarian_rows(sub, rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) total += sub[i * cols.size() + assign[i]];
  return total;
}

}  // namespace detail

/// Relative slack when deciding whether a candidate assignment is still optimal.
inline constexpr double kMatchingTieTolerance = 1e-12;

/// Sum of matched entries, accumulated in group order.
inline double assignment_cost(const CostMatrix& cost, const std::vector<std::size_t>& token_of_group) {
  double total = 0.0;
  for (std::size_t g = 0; g < cost.groups; ++g) total += cost(token_of_group[g], g);
  return total;
}

/// Minimum-cost injective assignment of groups to tokens. Among optimal
/// assignments the one whose sorted (token, group) pair list is
/// lexicographically smallest is returned: tokens are visited in ascending
/// order and each takes the smallest group that keeps the total optimal.
inline Matching hungarian(const CostMatrix& cost) {
  if (cost.values.size() != cost.tokens * cost.groups) {
    throw DimensionError("hungarian: cost matrix has " + std::to_string(cost.values.size()) +
                         " entries, expected " + std::to_string(cost.tokens * cost.groups));
  }
  if (cost.groups > cost.tokens) {
    throw ValidationError("hungarian: infeasible, " + std::to_string(cost.groups) +
                          " groups for " + std::to_string(cost.tokens) + " tokens");
  }
  for (double v : cost.values)
    if (!std::isfinite(v)) throw ValidationError("hungarian: non-finite cost entry");

  Matching m;
  m.group_of_token.assign(cost.tokens, std::nullopt);
  m.token_of_group.assign(cost.groups, 0);
  if (cost.groups == 0) return m;

  std::vector<std::optional<std::size_t>> pinned(cost.groups);
  std::vector<char> token_free(cost.tokens, 1);
  const double best = detail::constrained_optimum(cost, pinned, token_free);
  const double slack = kMatchingTieTolerance * std::max(1.0, std::abs(best));
  std::size_t remaining = cost.groups;
  for (std::size_t k = 0; k < cost.tokens && remaining > 0; ++k) {
    token_free[k] = 0;
    for (std::size_t g = 0; g < cost.groups; ++g) {
      if (pinned[g]) continue;
      pinned[g] = k;
      if (detail::constrained_optimum(cost, pinned, token_free) <= best + slack) {
        m.group_of_token[k] = g;
        m.token_of_group[g] = k;
        --remaining;
        break;
      }
      pinned[g].reset();
    }
  }
  m.total_cost = assignment_cost(cost, m.token_of_group);
  return m;
}

}  // namespace lirgad
