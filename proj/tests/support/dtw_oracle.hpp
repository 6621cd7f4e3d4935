#pragma once

// Exhaustive enumeration of sub-sequence warping paths with steps
// (1,1), (2,1), (1,2). Among equal-cost paths the one whose step sequence,
// read backwards from the end cell, is lexicographically smallest under the
// order (1,1) < (2,1) < (1,2) wins.

#include <optional>
#include <random>
#include <vector>

#include "kws/dtw.hpp"

namespace oracle {

struct Walk {
  double cost = 0;
  std::size_t cells = 0;
  std::size_t start = 0;
};

inline void enumerate(const kws::Matrix& c, Eigen::Index i, Eigen::Index j, Walk acc, std::optional<Walk>& best) {
  acc.cost += c(i, j);
  ++acc.cells;
  if (i == 0) {
    acc.start = static_cast<std::size_t>(j);
    if (!best || acc.cost < best->cost) best = acc;
    return;
  }
  const int steps[3][2] = {{1, 1}, {2, 1}, {1, 2}};
  for (const auto& s : steps) {
    const Eigen::Index pi = i - s[0], pj = j - s[1];
    if (pi >= 0 && pj >= 0) enumerate(c, pi, pj, acc, best);
  }
}

inline std::vector<std::optional<kws::PathResult>> brute_force_subsequence(const kws::Matrix& c) {
  std::vector<std::optional<kws::PathResult>> out(static_cast<std::size_t>(c.cols()));
  for (Eigen::Index n = 0; n < c.cols(); ++n) {
    std::optional<Walk> best;
    enumerate(c, c.rows() - 1, n, {}, best);
    if (best) out[static_cast<std::size_t>(n)] = kws::PathResult{best->start, static_cast<std::size_t>(n), best->cells, best->cost};
  }
  return out;
}

/// M x N matrix with entries drawn from {0, 0.5, 1}.
inline kws::Matrix quantized_cost(std::mt19937_64& rng, Eigen::Index m, Eigen::Index n) {
  std::uniform_int_distribution<int> level(0, 2);
  kws::Matrix c(m, n);
  for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = 0.5 * level(rng);
  return c;
}

}  // namespace oracle
