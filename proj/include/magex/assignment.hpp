#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "magex/common.hpp"
#include "magex/rng.hpp"

namespace magex {

// Square matrix of non-negative assignment costs, row = agent, col = goal.
struct CostMatrix {
  std::size_t n = 0;
  std::vector<double> cost;  // row-major n x n

  CostMatrix() = default;
  CostMatrix(std::size_t n_, std::vector<double> c) : n(n_), cost(std::move(c)) {
    if (cost.size() != n * n) throw ShapeError("cost matrix must be square");
    for (double v : cost)
      if (v < 0.0 || !std::isfinite(v))
        throw ShapeError("cost matrix entries must be finite and non-negative");
  }

  static CostMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size();
    std::vector<double> flat;
    flat.reserve(n * n);
    for (const auto& r : rows) {
      if (r.size() != n) throw ShapeError("cost matrix must be square");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return CostMatrix(n, std::move(flat));
  }

  double at(std::size_t i, std::size_t j) const { return cost[i * n + j]; }
};

// Euclidean distances between flattened positions (dim components each).
inline CostMatrix distance_cost_matrix(const std::vector<double>& agents,
                                       const std::vector<double>& goals,
                                       std::size_t dim) {
  if (agents.size() != goals.size() || agents.size() % dim != 0)
    throw ShapeError("distance_cost_matrix: position count mismatch");
  const std::size_t n = agents.size() / dim;
  std::vector<double> c(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = agents[i * dim + d] - goals[j * dim + d];
        sq += diff * diff;
      }
      c[i * n + j] = std::sqrt(sq);
    }
  return CostMatrix(n, std::move(c));
}

struct Assignment {
  std::vector<int> perm;  // perm[i] = goal index of agent i
  double total_cost = 0.0;
};

inline double assignment_cost(const CostMatrix& cost, const std::vector<int>& perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < cost.n; ++i) total += cost.at(i, perm[i]);
  return total;
}

// Exact minimum-cost perfect matching via shortest augmenting paths on row
// and column potentials, O(n^3).
inline Assignment hungarian(const CostMatrix& cost) {
  const int n = static_cast<int>(cost.n);
  if (n == 0) return {};
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0);  // match[j] = row assigned to column j
  std::vector<int> way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  Assignment out;
  out.perm.assign(n, -1);
  for (int j = 1; j <= n; ++j) out.perm[match[j] - 1] = j - 1;
  out.total_cost = assignment_cost(cost, out.perm);
  return out;
}

// Exhaustive minimum over all n! permutations; ties resolve to the
// lexicographically smallest permutation. The defining oracle for hungarian().
inline Assignment brute_force(const CostMatrix& cost) {
  if (cost.n > 9) throw InputError("brute_force: n must be <= 9");
  std::vector<int> perm(cost.n);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best;
  best.total_cost = std::numeric_limits<double>::infinity();
  do {
    const double c = assignment_cost(cost, perm);
    if (c < best.total_cost) {
      best.total_cost = c;
      best.perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline std::vector<int> random_permutation(std::size_t n, Rng& rng) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_int(static_cast<int>(i))]);
  return perm;
}

// Uniform random goal assignment (sampling without replacement), costed on
// the given matrix.
inline Assignment random_assignment(const CostMatrix& cost, Rng& rng) {
  Assignment out;
  out.perm = random_permutation(cost.n, rng);
  out.total_cost = assignment_cost(cost, out.perm);
  return out;
}

// R_c = 1 - C_c / C_h, clamped to [-100, 0]. With an exact reference cost the
// raw value never exceeds 0; the clamp keeps degenerate zero-cost spawns from
// injecting infinities into the learning signal.
inline double commander_reward(double c_assign, double c_hungarian) {
  constexpr double kClamp = -100.0;
  if (c_hungarian <= 0.0) return c_assign <= 0.0 ? 0.0 : kClamp;
  const double r = 1.0 - c_assign / c_hungarian;
  return std::clamp(r, kClamp, 0.0);
}

}  // namespace magex
