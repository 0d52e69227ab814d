#pragma once

#include "lccnn/types.hpp"

#include <limits>
#include <random>
#include <vector>

namespace oracle {

// Net similarity of an exemplar set: exemplars pay their preference (the
// diagonal), every other point its best exemplar similarity.
inline double net_similarity(const lccnn::Matrix& s, const std::vector<int>& ex) {
  double total = 0.0;
  std::vector<char> is_ex(static_cast<std::size_t>(s.rows()), 0);
  for (int e : ex) is_ex[static_cast<std::size_t>(e)] = 1;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    if (is_ex[static_cast<std::size_t>(i)]) {
      total += s(i, i);
      continue;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (int e : ex) best = std::max(best, s(i, e));
    total += best;
  }
  return total;
}

// Exhaustive search over nonempty exemplar subsets (n <= 16). Lowest bitmask wins ties.
inline std::vector<int> best_exemplars(const lccnn::Matrix& s) {
  const int n = static_cast<int>(s.rows());
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> arg;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<int> ex;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) ex.push_back(i);
    const double v = net_similarity(s, ex);
    if (v > best) {
      best = v;
      arg = ex;
    }
  }
  return arg;
}

// n points in the plane from a few well-separated blobs; s = -squared distance,
// preferences = median off-diagonal similarity plus a distinct jitter per point
// so that no two exemplar sets tie.
inline lccnn::Matrix blob_similarity(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 2);
  std::normal_distribution<double> jitter(0.0, 0.3);
  const double cx[3] = {0.0, 6.0, 0.0};
  const double cy[3] = {0.0, 0.0, 6.0};
  std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int b = pick(rng);
    x[static_cast<std::size_t>(i)] = cx[b] + jitter(rng);
    y[static_cast<std::size_t>(i)] = cy[b] + jitter(rng);
  }
  lccnn::Matrix s(n, n);
  std::vector<double> off;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dx = x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)];
      const double dy = y[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(j)];
      s(i, j) = -(dx * dx + dy * dy);
      if (i != j) off.push_back(s(i, j));
    }
  std::sort(off.begin(), off.end());
  const std::size_t m = off.size() / 2;
  const double med = off.size() % 2 ? off[m] : 0.5 * (off[m - 1] + off[m]);
  std::uniform_real_distribution<double> pj(-1.0, 1.0);
  for (int i = 0; i < n; ++i) s(i, i) = med + pj(rng);
  return s;
}

}  // namespace oracle
