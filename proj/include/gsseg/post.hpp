#pragma once

// 3D post-processing of a raw segmentation: statistical outlier filtering,
// mask-seeded region growing and a single ball-query growing pass.

#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "gsseg/match.hpp"
#include "gsseg/prompt.hpp"
#include "gsseg/scene.hpp"
#include "gsseg/spatial.hpp"
#include "gsseg/splat.hpp"

namespace gsseg {

namespace detail {

inline std::vector<std::size_t> member_indices(const std::vector<std::uint8_t>& membership) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < membership.size(); ++i)
    if (membership[i]) out.push_back(i);
  return out;
}

/// Squared nearest-neighbor distance of every indexed point to the rest of the set.
inline std::vector<double> nearest_d2(const Positions& pts, const KdTree& tree) {
  const auto& ids = tree.ids();
  std::vector<double> out(ids.size(), 0.0);
  parallel_for(ids.size(), [&](std::size_t s) {
    const auto nn = tree.knn(pts[ids[s]], 1, ids[s]);
    out[s] = nn.empty() ? 0.0 : nn.front().d2;
  });
  return out;
}

inline void check_sizes(const GaussianCloud& cloud, const Segmentation& seg) {
  require(seg.membership.size() == cloud.size(), ErrorKind::argument, "segmentation size does not match the cloud");
}

}  // namespace detail

/// Mean distance from each member to its k = round(sqrt(n)) nearest members;
/// members whose mean exceeds mu + sigma of those means are dropped.
inline Segmentation statistical_filter(const GaussianCloud& cloud, const Segmentation& seg) {
  detail::check_sizes(cloud, seg);
  Segmentation out = seg;
  out.stage = Stage::filtered;
  const auto members = detail::member_indices(seg.membership);
  const std::size_t n = members.size();
  if (n < 2) {
    warn("statistical filter needs at least two members; segmentation left unchanged");
    return out;
  }
  const std::size_t k = std::min<std::size_t>(n - 1, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))))));
  const KdTree tree(cloud.positions, members);
  const auto mean_dist = tree.mean_knn_distances(k);  // aligned with tree.ids()
  const auto [lo, hi] = std::minmax_element(mean_dist.begin(), mean_dist.end());
  if (*lo == *hi) return out;  // all means equal: nothing is strictly above the threshold
  double mu = 0.0;
  for (double d : mean_dist) mu += d;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double d : mean_dist) var += (d - mu) * (d - mu);
  const double threshold = mu + std::sqrt(var / static_cast<double>(n));
  for (std::size_t s = 0; s < n; ++s)
    if (mean_dist[s] > threshold) out.membership[tree.ids()[s]] = 0;
  return out;
}

struct MaskProjection {
  std::vector<std::uint8_t> validated;  ///< members whose visible mean falls inside the mask
  std::vector<std::uint8_t> unwanted;   ///< any Gaussian whose visible mean falls outside it
};

/// A Gaussian is visible at the pixel nearest its projected mean when its blend
/// weight there is at least 1/255. `table` may pass a prebuilt full-cloud table.
inline MaskProjection project_mask_to_gaussians(const GaussianCloud& cloud, const Camera& cam, const Mask& mask,
                                                const Segmentation& seg, const BlendTable* table = nullptr) {
  detail::check_sizes(cloud, seg);
  require(mask.size() == cam.pixel_count(), ErrorKind::argument, "mask size does not match camera " + cam.id);
  std::optional<BlendTable> own;
  if (!table) table = &own.emplace(build_blend_table(cloud, cam));
  require(table->width == cam.width && table->height == cam.height && table->gaussian_count == cloud.size(),
          ErrorKind::argument, "blend table does not match camera and cloud");
  MaskProjection out;
  out.validated.assign(cloud.size(), 0);
  out.unwanted.assign(cloud.size(), 0);
  for (const auto& p : project(cloud, cam)) {
    const long x = std::lround(p.mean.x()), y = std::lround(p.mean.y());
    if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) continue;
    const std::size_t pix = static_cast<std::size_t>(y) * static_cast<std::size_t>(cam.width) + static_cast<std::size_t>(x);
    if (table->weight_of(pix, p.gaussian_index) < kMinAlpha) continue;
    if (mask[pix]) {
      if (seg.membership[p.gaussian_index]) out.validated[p.gaussian_index] = 1;
    } else {
      out.unwanted[p.gaussian_index] = 1;
    }
  }
  require(count_true(out.validated) > 0, ErrorKind::data,
          "mask validates no segmented Gaussian in view " + cam.id + " (prompt and scene disagree)");
  return out;
}

/// Squared growth distance for region growing: max over seeds of the squared
/// nearest-seed distance; a single seed falls back to the mean member NN distance.
inline double region_grow_threshold2(const GaussianCloud& cloud, const std::vector<std::size_t>& seeds,
                                     const std::vector<std::size_t>& members) {
  if (seeds.size() >= 2) {
    const KdTree tree(cloud.positions, seeds);
    const auto d2 = detail::nearest_d2(cloud.positions, tree);
    return *std::max_element(d2.begin(), d2.end());
  }
  if (members.size() < 2) return 0.0;
  const KdTree tree(cloud.positions, members);
  const auto d2 = detail::nearest_d2(cloud.positions, tree);
  double mean = 0.0;
  for (double v : d2) mean += std::sqrt(v);
  mean /= static_cast<double>(d2.size());
  return mean * mean;
}

/// Breadth-first growth from the seeds over members, linking members within
/// the growth distance. Returns the reached members.
inline Segmentation region_grow_filter(const GaussianCloud& cloud, const Segmentation& seg,
                                       const std::vector<std::uint8_t>& seeds) {
  detail::check_sizes(cloud, seg);
  require(seeds.size() == cloud.size(), ErrorKind::argument, "seed flags do not match the cloud");
  const auto seed_ids = detail::member_indices(seeds);
  require(!seed_ids.empty(), ErrorKind::argument, "region growing needs at least one seed");
  for (std::size_t s : seed_ids)
    require(seg.membership[s] != 0, ErrorKind::argument, "seed " + std::to_string(s) + " is not a member");
  const auto members = detail::member_indices(seg.membership);
  const double t2 = region_grow_threshold2(cloud, seed_ids, members);

  Segmentation out = seg;
  out.stage = Stage::filtered;
  out.membership.assign(cloud.size(), 0);
  const KdTree tree(cloud.positions, members);
  std::deque<std::size_t> frontier(seed_ids.begin(), seed_ids.end());
  for (std::size_t s : seed_ids) out.membership[s] = 1;
  while (!frontier.empty()) {
    const std::size_t g = frontier.front();
    frontier.pop_front();
    for (std::size_t nb : tree.radius(cloud.positions[g], t2)) {
      if (out.membership[nb]) continue;
      out.membership[nb] = 1;
      frontier.push_back(nb);
    }
  }
  return out;
}

/// Squared ball radius: max over members of the squared nearest-member distance.
inline double ball_radius2(const GaussianCloud& cloud, const std::vector<std::size_t>& members) {
  const KdTree tree(cloud.positions, members);
  const auto d2 = detail::nearest_d2(cloud.positions, tree);
  return d2.empty() ? 0.0 : *std::max_element(d2.begin(), d2.end());
}

/// Adds every non-member within the ball radius of some member (one pass).
/// Gaussians flagged in `exclude` are never added.
inline Segmentation ball_grow(const GaussianCloud& cloud, const Segmentation& seg,
                              const std::vector<std::uint8_t>* exclude = nullptr) {
  detail::check_sizes(cloud, seg);
  Segmentation out = seg;
  out.stage = Stage::grown;
  const auto members = detail::member_indices(seg.membership);
  if (members.size() < 2) {
    warn("ball growing needs at least two members; segmentation left unchanged");
    return out;
  }
  const double r2 = ball_radius2(cloud, members);
  const KdTree tree(cloud.positions, members);
  std::vector<std::uint8_t> add(cloud.size(), 0);
  parallel_for(cloud.size(), [&](std::size_t i) {
    if (seg.membership[i] || (exclude && (*exclude)[i])) return;
    if (tree.any_within(cloud.positions[i], r2)) add[i] = 1;
  }, 2048);
  for (std::size_t i = 0; i < add.size(); ++i)
    if (add[i]) out.membership[i] = 1;
  return out;
}

struct PostResult {
  Segmentation filtered;
  Segmentation grown;
  double filtering_ms = 0.0;
  double growing_ms = 0.0;
};

/// Mask context for mask-style prompts.
struct MaskContext {
  const Camera* camera = nullptr;
  const Mask* mask = nullptr;
  const BlendTable* table = nullptr;  ///< optional prebuilt full-cloud table for `camera`
};

/// Points/scribbles: statistical filter, then ball growing. Masks: project the
/// mask, drop unwanted members, region-grow from the validated seeds, then ball
/// growing with the unwanted Gaussians excluded.
inline PostResult postprocess(const GaussianCloud& cloud, const Segmentation& raw, PromptKind kind,
                              const MaskContext& ctx = {}) {
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); };
  detail::check_sizes(cloud, raw);
  if (raw.count() == 0) throw Error(ErrorKind::data, "raw segmentation is empty", "filtering");
  const bool mask_kind = uses_mask_postprocess(kind);
  require(mask_kind == (ctx.mask != nullptr && ctx.camera != nullptr), ErrorKind::argument,
          "mask context must be given exactly for mask-style prompts");
  PostResult out;
  try {
    auto t0 = Clock::now();
    std::vector<std::uint8_t> unwanted;
    if (!mask_kind) {
      out.filtered = statistical_filter(cloud, raw);
    } else {
      auto proj = project_mask_to_gaussians(cloud, *ctx.camera, *ctx.mask, raw, ctx.table);
      Segmentation kept = raw;
      for (std::size_t i = 0; i < kept.membership.size(); ++i)
        if (proj.unwanted[i]) kept.membership[i] = 0;
      out.filtered = region_grow_filter(cloud, kept, proj.validated);
      unwanted = std::move(proj.unwanted);
    }
    out.filtering_ms = ms_since(t0);
    t0 = Clock::now();
    out.grown = ball_grow(cloud, out.filtered, unwanted.empty() ? nullptr : &unwanted);
    out.growing_ms = ms_since(t0);
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw Error(e.kind(), e.what(), out.filtered.size() ? "growing" : "filtering");
  }
  return out;
}

}  // namespace gsseg
