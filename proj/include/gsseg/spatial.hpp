#pragma once

// kd-tree over a subset of Gaussian positions. Neighbor queries return ties in
// ascending index order so results are reproducible against brute force.

#include <algorithm>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gsseg/common.hpp"

namespace gsseg {

using Positions = std::vector<Eigen::Vector3d>;

/// The distance used everywhere thresholds are compared; kept squared so that
/// `<=` tests are exact.
inline double squared_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

struct Neighbor {
  double d2;
  std::size_t index;
  bool operator<(const Neighbor& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

class KdTree {
public:
  KdTree() = default;

  /// Indexes `subset` (indices into `points`); an empty subset means all points.
  KdTree(const Positions& points, std::vector<std::size_t> subset = {}) : points_(&points), ids_(std::move(subset)) {
    if (ids_.empty()) {
      ids_.resize(points.size());
      for (std::size_t i = 0; i < ids_.size(); ++i) ids_[i] = i;
    }
    if (!ids_.empty()) nodes_.reserve(2 * ids_.size() / kLeafSize + 2), build(0, ids_.size());
    // contiguous copy in slot order keeps leaf scans cache-friendly
    slot_pts_.reserve(ids_.size());
    for (std::size_t id : ids_) slot_pts_.push_back(points[id]);
  }

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::size_t>& ids() const { return ids_; }

  /// k nearest indexed points, sorted by (distance, index). `exclude` is skipped.
  std::vector<Neighbor> knn(const Eigen::Vector3d& q, std::size_t k,
                            std::size_t exclude = std::numeric_limits<std::size_t>::max()) const {
    std::vector<Neighbor> heap;  // max-heap on (d2, index)
    if (k == 0 || nodes_.empty()) return heap;
    heap.reserve(k + 1);
    knn_visit(0, q, k, exclude, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// Squared distances of the k nearest indexed points, unordered. Cheaper than
  /// `knn` when only the distances matter: candidates are buffered and pruned
  /// with nth_element instead of maintained in a heap. `bound2`, when given,
  /// must be at least the k-th smallest squared distance; it only prunes.
  std::vector<double> knn_d2(const Eigen::Vector3d& q, std::size_t k,
                             std::size_t exclude = std::numeric_limits<std::size_t>::max(),
                             double bound2 = std::numeric_limits<double>::infinity()) const {
    std::vector<double> buf;
    if (k == 0 || nodes_.empty()) return buf;
    buf.reserve(4 * k);
    double bound = bound2;
    knn_d2_visit(0, q, k, exclude, buf, bound);
    if (buf.size() > k) {
      std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k - 1), buf.end());
      buf.resize(k);
    }
    return buf;
  }

  /// For every indexed point (aligned with ids()), the mean distance to its k
  /// nearest other indexed points. Exact; a leaf's points share one candidate
  /// list, bounded via the first point's k-th distance and the triangle
  /// inequality. Requires k < size().
  std::vector<double> mean_knn_distances(std::size_t k) const {
    std::vector<double> out(ids_.size(), 0.0);
    if (k == 0 || ids_.size() <= k) return out;
    std::vector<std::size_t> cand;
    std::vector<double> cx, cy, cz, d2, buf;
    for (const Node& leaf : nodes_) {
      if (leaf.axis >= 0) continue;
      const Eigen::Vector3d& q0 = slot_pts_[leaf.begin];
      const auto d0 = knn_d2(q0, k, ids_[leaf.begin]);
      const double r0 = std::sqrt(*std::max_element(d0.begin(), d0.end()));
      double reach = 0.0;
      for (std::size_t s = leaf.begin; s < leaf.end; ++s) reach = std::max(reach, (slot_pts_[s] - q0).norm());
      const double r = (r0 + reach) * (1.0 + 1e-9);
      cand.clear();
      box_visit(0, leaf, r * r, cand);
      const std::size_t m = cand.size();
      cx.resize(m), cy.resize(m), cz.resize(m), d2.resize(m), buf.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        const auto& p = slot_pts_[cand[i]];
        cx[i] = p.x(), cy[i] = p.y(), cz[i] = p.z();
      }
      for (std::size_t s = leaf.begin; s < leaf.end; ++s) {
        const Eigen::Vector3d& q = slot_pts_[s];
        const double rb = (r0 + (q - q0).norm()) * (1.0 + 1e-9);
        const double b2 = rb * rb;
        for (std::size_t i = 0; i < m; ++i) {
          const double dx = cx[i] - q.x(), dy = cy[i] - q.y(), dz = cz[i] - q.z();
          d2[i] = dx * dx + dy * dy + dz * dz;
        }
        std::size_t n = 0;
        for (std::size_t i = 0; i < m; ++i) {
          buf[n] = d2[i];
          n += (d2[i] <= b2) & (cand[i] != s);
        }
        std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k - 1), buf.begin() + static_cast<std::ptrdiff_t>(n));
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) sum += std::sqrt(buf[i]);
        out[s] = sum / static_cast<double>(k);
      }
    }
    return out;
  }

  /// All indexed points with squared distance <= r2, ascending index.
  std::vector<std::size_t> radius(const Eigen::Vector3d& q, double r2) const {
    std::vector<std::size_t> out;
    if (!nodes_.empty()) radius_visit(0, q, r2, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  bool any_within(const Eigen::Vector3d& q, double r2) const { return !nodes_.empty() && any_visit(0, q, r2); }

private:
  static constexpr std::size_t kLeafSize = 12;

  struct Node {
    std::size_t begin, end;
    int axis = -1;  ///< -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Eigen::Vector3d lo, hi;  ///< bounding box
  };

  const Eigen::Vector3d& pt(std::size_t slot) const { return (*points_)[ids_[slot]]; }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    Eigen::Vector3d lo = pt(begin), hi = pt(begin);
    for (std::size_t s = begin + 1; s < end; ++s) {
      lo = lo.cwiseMin(pt(s));
      hi = hi.cwiseMax(pt(s));
    }
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    if (end - begin <= kLeafSize) return id;
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    const auto& P = *points_;
    std::nth_element(ids_.begin() + static_cast<std::ptrdiff_t>(begin), ids_.begin() + static_cast<std::ptrdiff_t>(mid),
                     ids_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return P[a][axis] < P[b][axis] || (P[a][axis] == P[b][axis] && a < b);
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = pt(mid)[axis];
    const std::size_t l = build(begin, mid);
    const std::size_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  static double box_d2(const Node& n, const Eigen::Vector3d& q) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = q[a] < n.lo[a] ? n.lo[a] - q[a] : (q[a] > n.hi[a] ? q[a] - n.hi[a] : 0.0);
      d2 += d * d;
    }
    return d2;
  }

  void knn_visit(std::size_t id, const Eigen::Vector3d& q, std::size_t k, std::size_t exclude,
                 std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    // Prune only on strictly larger distance so equal-distance, lower-index
    // candidates are still considered.
    if (heap.size() == k && box_d2(n, q) > heap.front().d2) return;
    if (n.axis < 0) {
      for (std::size_t s = n.begin; s < n.end; ++s) {
        const std::size_t idx = ids_[s];
        if (idx == exclude) continue;
        const Neighbor cand{squared_distance(q, slot_pts_[s]), idx};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const bool left_first = q[n.axis] < n.split;
    knn_visit(left_first ? n.left : n.right, q, k, exclude, heap);
    knn_visit(left_first ? n.right : n.left, q, k, exclude, heap);
  }

  void knn_d2_visit(std::size_t id, const Eigen::Vector3d& q, std::size_t k, std::size_t exclude, std::vector<double>& buf,
                    double& bound) const {
    const Node& n = nodes_[id];
    if (box_d2(n, q) > bound) return;
    if (n.axis < 0) {
      for (std::size_t s = n.begin; s < n.end; ++s) {
        if (ids_[s] == exclude) continue;
        const double d2 = squared_distance(q, slot_pts_[s]);
        if (d2 <= bound) buf.push_back(d2);
      }
      if (buf.size() >= 3 * k) {
        // keep the k smallest; the k-th becomes the pruning bound
        std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k - 1), buf.end());
        buf.resize(k);
        bound = *std::max_element(buf.begin(), buf.end());
      }
      return;
    }
    const bool left_first = q[n.axis] < n.split;
    knn_d2_visit(left_first ? n.left : n.right, q, k, exclude, buf, bound);
    knn_d2_visit(left_first ? n.right : n.left, q, k, exclude, buf, bound);
  }

  static double box_box_d2(const Node& a, const Node& b) {
    double d2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d = std::max({0.0, a.lo[i] - b.hi[i], b.lo[i] - a.hi[i]});
      d2 += d * d;
    }
    return d2;
  }

  /// Slots whose point lies within sqrt(r2) of the bounding box of `target`.
  void box_visit(std::size_t id, const Node& target, double r2, std::vector<std::size_t>& out) const {
    const Node& n = nodes_[id];
    if (box_box_d2(n, target) > r2) return;
    if (n.axis < 0) {
      for (std::size_t s = n.begin; s < n.end; ++s)
        if (box_d2(target, slot_pts_[s]) <= r2) out.push_back(s);
      return;
    }
    box_visit(n.left, target, r2, out);
    box_visit(n.right, target, r2, out);
  }

  void radius_visit(std::size_t id, const Eigen::Vector3d& q, double r2, std::vector<std::size_t>& out) const {
    const Node& n = nodes_[id];
    if (box_d2(n, q) > r2) return;
    if (n.axis < 0) {
      for (std::size_t s = n.begin; s < n.end; ++s)
        if (squared_distance(q, slot_pts_[s]) <= r2) out.push_back(ids_[s]);
      return;
    }
    radius_visit(n.left, q, r2, out);
    radius_visit(n.right, q, r2, out);
  }

  bool any_visit(std::size_t id, const Eigen::Vector3d& q, double r2) const {
    const Node& n = nodes_[id];
    if (box_d2(n, q) > r2) return false;
    if (n.axis < 0) {
      for (std::size_t s = n.begin; s < n.end; ++s)
        if (squared_distance(q, slot_pts_[s]) <= r2) return true;
      return false;
    }
    const bool left_first = q[n.axis] < n.split;
    return any_visit(left_first ? n.left : n.right, q, r2) || any_visit(left_first ? n.right : n.left, q, r2);
  }

  const Positions* points_ = nullptr;
  std::vector<std::size_t> ids_;
  std::vector<Node> nodes_;
  Positions slot_pts_;
};

}  // namespace gsseg
