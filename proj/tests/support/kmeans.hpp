#pragma once

#include <limits>
#include <vector>

#include "dcmrl/gqvae.hpp"

namespace dcmrl::testing {

// Plain Lloyd iterations from the given centers until assignments settle.
inline std::vector<std::vector<double>> lloyd(const std::vector<std::vector<double>>& points,
                                              std::vector<std::vector<double>> centers, int max_iter = 200) {
  const std::size_t k = centers.size(), dim = points.front().size();
  std::vector<std::size_t> assign(points.size(), k);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = euclidean(points[i], centers[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      changed = changed || best != assign[i];
      assign[i] = best;
    }
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> sum(dim, 0.0);
      int n = 0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (assign[i] != c) continue;
        for (std::size_t j = 0; j < dim; ++j) sum[j] += points[i][j];
        ++n;
      }
      if (n > 0) {
        for (double& v : sum) v /= n;
        centers[c] = sum;
      }
    }
    if (!changed) break;
  }
  return centers;
}

// Greedy one-to-one pairing of codes to centroids by increasing distance;
// returns the largest paired distance.
inline double greedy_max_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  std::vector<bool> used_a(a.size(), false), used_b(b.size(), false);
  double worst = 0.0;
  for (std::size_t round = 0; round < a.size(); ++round) {
    double bd = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < b.size(); ++j) {
        if (used_a[i] || used_b[j]) continue;
        const double d = euclidean(a[i], b[j]);
        if (d < bd) {
          bd = d;
          bi = i;
          bj = j;
        }
      }
    }
    used_a[bi] = used_b[bj] = true;
    worst = std::max(worst, bd);
  }
  return worst;
}

}  // namespace dcmrl::testing
