#pragma once

// Hausdorff distance and its per-cluster mean.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cpdreg/core.hpp"

namespace cpdreg {

struct MetricReport {
  double hausdorff = 0.0;
  double cluster_hausdorff = 0.0;
  std::vector<double> per_cluster;
};

namespace detail {

// Above this many candidate points (and for D <= 3) nearest-neighbour
// queries go through a uniform grid. The grid only prunes candidates; the
// distance arithmetic is the brute-force one, so results are identical.
inline constexpr Index kGridThreshold = 1000;

class UniformGrid {
 public:
  UniformGrid(const Coords& pts, std::span<const Index> members)
      : pts_(pts), members_(members), dim_(static_cast<int>(pts.cols())) {
    const auto du = static_cast<std::size_t>(dim_);
    lo_.assign(du, std::numeric_limits<double>::infinity());
    std::vector<double> hi(du, -std::numeric_limits<double>::infinity());
    for (Index i : members) {
      for (int d = 0; d < dim_; ++d) {
        const auto k = static_cast<std::size_t>(d);
        lo_[k] = std::min(lo_[k], pts(i, d));
        hi[k] = std::max(hi[k], pts(i, d));
      }
    }
    double volume = 1.0;
    double extent_max = 0.0;
    for (int d = 0; d < dim_; ++d) {
      const double e = hi[static_cast<std::size_t>(d)] - lo_[static_cast<std::size_t>(d)];
      extent_max = std::max(extent_max, e);
      volume *= std::max(e, 1e-12);
    }
    // Roughly two points per cell.
    cell_ = std::pow(2.0 * volume / static_cast<double>(members.size()), 1.0 / dim_);
    if (!(cell_ > 0.0) || !std::isfinite(cell_)) cell_ = extent_max > 0.0 ? extent_max : 1.0;
    cell_max_ = coords_of(hi.data());
    for (Index i : members) cells_[hash(coords_of(pts.data() + i * dim_))].push_back(i);
  }

  // Smallest squared distance from q to any member.
  double nearest_squared(const double* q) const {
    const std::vector<long long> center = coords_of(q);
    // Rings beyond this cover no occupied cell.
    long long last_ring = 0;
    for (int d = 0; d < dim_; ++d) {
      const long long c = center[static_cast<std::size_t>(d)];
      last_ring = std::max({last_ring, c, cell_max_[static_cast<std::size_t>(d)] - c});
    }
    double best = std::numeric_limits<double>::infinity();
    std::vector<long long> offset(static_cast<std::size_t>(dim_));
    for (long long ring = 0; ring <= last_ring; ++ring) {
      if (ring > kMaxRing) return brute_force(q);
      visit_ring(center, ring, offset, 0, false, [&](const std::vector<long long>& cell) {
        auto it = cells_.find(hash(cell));
        if (it == cells_.end()) return;
        for (Index i : it->second) {
          best = std::min(best, numeric::squared_distance(q, pts_.data() + i * dim_, dim_));
        }
      });
      // Cells in ring r + 1 are at least r * cell away.
      const double reach = static_cast<double>(ring) * cell_;
      if (reach * reach >= best) break;
    }
    return best;
  }

 private:
  static constexpr long long kMaxRing = 12;

  double brute_force(const double* q) const {
    double best = std::numeric_limits<double>::infinity();
    for (Index i : members_) {
      best = std::min(best, numeric::squared_distance(q, pts_.data() + i * dim_, dim_));
    }
    return best;
  }

  std::vector<long long> coords_of(const double* p) const {
    std::vector<long long> c(static_cast<std::size_t>(dim_));
    for (int d = 0; d < dim_; ++d) {
      const double v = std::floor((p[d] - lo_[static_cast<std::size_t>(d)]) / cell_);
      c[static_cast<std::size_t>(d)] =
          static_cast<long long>(std::clamp(v, -1e15, 1e15));
    }
    return c;
  }

  static std::uint64_t hash(const std::vector<long long>& c) {
    std::uint64_t h = 1469598103934665603ULL;
    for (long long v : c) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
  }

  // Visits every cell whose Chebyshev distance from center is exactly ring.
  template <class F>
  void visit_ring(const std::vector<long long>& center, long long ring,
                  std::vector<long long>& offset, int d, bool on_shell, F&& f) const {
    if (d == dim_) {
      if (!on_shell && ring != 0) return;
      std::vector<long long> cell(center);
      for (int k = 0; k < dim_; ++k) {
        cell[static_cast<std::size_t>(k)] += offset[static_cast<std::size_t>(k)];
      }
      f(cell);
      return;
    }
    for (long long o = -ring; o <= ring; ++o) {
      offset[static_cast<std::size_t>(d)] = o;
      visit_ring(center, ring, offset, d + 1, on_shell || o == -ring || o == ring, f);
    }
  }

  const Coords& pts_;
  std::span<const Index> members_;
  int dim_;
  double cell_ = 1.0;
  std::vector<double> lo_;
  std::vector<long long> cell_max_;
  // Hash collisions only merge candidate lists, never drop points.
  std::unordered_map<std::uint64_t, std::vector<Index>> cells_;
};

// max over a in A of min over b in B of |a - b|, for index subsets.
inline double directed_hausdorff(const PointSet& a, std::span<const Index> a_idx,
                                 const PointSet& b, std::span<const Index> b_idx) {
  const int dim = a.dim();
  double worst = 0.0;
  if (static_cast<Index>(b_idx.size()) >= kGridThreshold && dim <= 3) {
    const UniformGrid grid(b.points(), b_idx);
    for (Index i : a_idx) worst = std::max(worst, grid.nearest_squared(a.row(i)));
  } else {
    for (Index i : a_idx) {
      double best = std::numeric_limits<double>::infinity();
      for (Index j : b_idx) best = std::min(best, numeric::squared_distance(a.row(i), b.row(j), dim));
      worst = std::max(worst, best);
    }
  }
  return std::sqrt(worst);
}

inline std::vector<Index> all_indices(Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

}  // namespace detail

/// H(A, B) = max(h(A, B), h(B, A)).
inline double hausdorff(const PointSet& a, const PointSet& b) {
  require_same_dim(a, b, "hausdorff");
  if (a.size() == 0 || b.size() == 0) throw InputError("hausdorff: empty point set");
  const auto ia = detail::all_indices(a.size());
  const auto ib = detail::all_indices(b.size());
  return std::max(detail::directed_hausdorff(a, ia, b, ib), detail::directed_hausdorff(b, ib, a, ia));
}

/// Per-cluster Hausdorff distances and their mean, plus the plain distance.
inline MetricReport cluster_hausdorff(const PointSet& a, const ClusterAssignment& a_labels,
                                      const PointSet& b, const ClusterAssignment& b_labels) {
  require_same_dim(a, b, "cluster_hausdorff");
  a_labels.require_matches(a, "cluster_hausdorff (a)");
  b_labels.require_matches(b, "cluster_hausdorff (b)");
  if (a_labels.n_clusters() != b_labels.n_clusters()) {
    throw InputError("cluster_hausdorff: label sets declare " +
                     std::to_string(a_labels.n_clusters()) + " and " +
                     std::to_string(b_labels.n_clusters()) + " clusters");
  }
  MetricReport report;
  report.hausdorff = hausdorff(a, b);
  const int c_count = a_labels.n_clusters();
  double sum = 0.0;
  for (int c = 1; c <= c_count; ++c) {
    const auto ia = a_labels.members(c);
    const auto ib = b_labels.members(c);
    if (ia.empty() || ib.empty()) {
      throw InputError("cluster_hausdorff: cluster " + std::to_string(c) + " is empty on one side");
    }
    const double h = std::max(detail::directed_hausdorff(a, ia, b, ib),
                              detail::directed_hausdorff(b, ib, a, ia));
    report.per_cluster.push_back(h);
    sum += h;
  }
  report.cluster_hausdorff = c_count == 1 ? report.per_cluster.front() : sum / c_count;
  return report;
}

}  // namespace cpdreg
