#pragma once

#include <limits>
#include <vector>

#include "gsseg/common.hpp"

namespace gsseg {

struct KmeansOptions {
  std::size_t clusters = 5;
  int max_iterations = 50;
  double tolerance = 1e-6;  ///< stop when no centroid moves further than this
  std::uint64_t seed = 0;
};

namespace detail {

inline double row_distance2(const FeatureMatrix& a, Eigen::Index i, const FeatureMatrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace detail

/// kmeans++ seeding followed by Lloyd iterations over the rows of `points`.
/// Returns at most `clusters` centroids; seeding stops early once every point
/// coincides with a chosen center, so duplicate centroids never appear.
inline FeatureMatrix kmeans(const FeatureMatrix& points, const KmeansOptions& opt) {
  const Eigen::Index n = points.rows();
  require(n >= 1, ErrorKind::argument, "kmeans needs at least one point");
  require(opt.clusters >= 1, ErrorKind::argument, "kmeans needs K >= 1");
  const auto k_max = static_cast<Eigen::Index>(std::min<std::size_t>(opt.clusters, static_cast<std::size_t>(n)));

  Rng rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::Index> chosen;
  chosen.push_back(static_cast<Eigen::Index>(unit(rng) * static_cast<double>(n)) % n);
  std::vector<double> mindist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  while (static_cast<Eigen::Index>(chosen.size()) < k_max) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d = mindist[static_cast<std::size_t>(i)];
      d = std::min(d, detail::row_distance2(points, i, points, chosen.back()));
      total += d;
    }
    if (total <= 0.0) break;
    double target = unit(rng) * total;
    Eigen::Index pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      target -= mindist[static_cast<std::size_t>(i)];
      if (target < 0.0 && mindist[static_cast<std::size_t>(i)] > 0.0) {
        pick = i;
        break;
      }
    }
    while (mindist[static_cast<std::size_t>(pick)] <= 0.0) --pick;  // guard against rounding at the tail
    chosen.push_back(pick);
  }

  const auto k = static_cast<Eigen::Index>(chosen.size());
  FeatureMatrix centroids(k, points.cols());
  for (Eigen::Index c = 0; c < k; ++c) centroids.row(c) = points.row(chosen[static_cast<std::size_t>(c)]);

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = detail::row_distance2(points, i, centroids, 0);
      for (Eigen::Index c = 1; c < k; ++c) {
        const double d = detail::row_distance2(points, i, centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
    }
    FeatureMatrix sums = FeatureMatrix::Zero(k, points.cols());
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] += 1.0;
    }
    double shift = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0.0) continue;  // empty cluster keeps its centroid
      const Eigen::RowVectorXd next = sums.row(c) / counts[static_cast<std::size_t>(c)];
      shift = std::max(shift, (next - centroids.row(c)).norm());
      centroids.row(c) = next;
    }
    if (shift < opt.tolerance) break;
  }
  return centroids;
}

}  // namespace gsseg
