// Test-only oracles, independent of the library paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace oracles {

// Exhaustive minimum spanning tree: tries every (C-1)-subset of the complete
// graph's edges and keeps the cheapest one that is connected and acyclic.
// Usable for C <= 6.
struct BruteMst {
  double weight = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
};

inline BruteMst brute_force_mst(const std::vector<std::vector<double>>& points) {
  const std::size_t c = points.size();
  std::vector<std::tuple<std::size_t, std::size_t, double>> all;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i + 1; j < c; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < points[i].size(); ++k) {
        const double d = points[i][k] - points[j][k];
        s += d * d;
      }
      all.emplace_back(i, j, std::sqrt(s));
    }
  }
  const std::size_t m = all.size();
  const std::size_t need = c - 1;
  BruteMst best;
  best.weight = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> pick(need);
  std::iota(pick.begin(), pick.end(), 0);
  auto advance = [&]() {
    std::size_t i = need;
    while (i > 0) {
      --i;
      if (pick[i] != i + m - need) {
        ++pick[i];
        for (std::size_t j = i + 1; j < need; ++j) pick[j] = pick[j - 1] + 1;
        return true;
      }
    }
    return false;
  };
  do {
    // Union-find connectivity check.
    std::vector<std::size_t> parent(c);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&parent](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    bool acyclic = true;
    double weight = 0.0;
    for (std::size_t e : pick) {
      const auto& [a, b, w] = all[e];
      const std::size_t ra = find(a), rb = find(b);
      if (ra == rb) {
        acyclic = false;
        break;
      }
      parent[ra] = rb;
      weight += w;
    }
    if (acyclic && weight < best.weight) {
      best.weight = weight;
      best.edges.clear();
      for (std::size_t e : pick) {
        best.edges.emplace_back(std::get<0>(all[e]), std::get<1>(all[e]));
      }
    }
  } while (advance());
  return best;
}

// AP via the precision * recall-step formulation, a different route than the
// hits/rank accumulation in the library.
inline double brute_force_ap(std::span<const int> relevance,
                             std::size_t total_relevant) {
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    const std::size_t hits_before = hits;
    if (relevance[i] == 1) ++hits;
    const double precision = double(hits) / double(i + 1);
    const double recall_step =
        (double(hits) - double(hits_before)) / double(total_relevant);
    ap += precision * recall_step;
  }
  return ap;
}

// Full-sort nearest neighbours by (distance, id).
struct RankedId {
  double distance;
  std::string id;
};

inline std::vector<std::string> full_sort_ids(std::vector<RankedId> scored,
                                              std::size_t k) {
  std::sort(scored.begin(), scored.end(), [](const RankedId& a, const RankedId& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) {
    ids.push_back(scored[i].id);
  }
  return ids;
}

}  // namespace oracles
