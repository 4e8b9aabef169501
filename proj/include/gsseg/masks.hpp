#pragma once

#include <algorithm>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gsseg/common.hpp"
#include "gsseg/scene.hpp"
#include "gsseg/splat.hpp"
#include "gsseg/tensor.hpp"

namespace gsseg {

struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
};

using Mask = std::vector<std::uint8_t>;  ///< H*W, row-major, 0/1

/// Multi-granularity binary masks of one view with a per-pixel membership
/// index (sorted ids of the masks containing each pixel).
class MaskStack {
public:
  MaskStack() = default;

  MaskStack(std::string view_id, int width, int height, std::vector<Mask> masks)
      : view_id_(std::move(view_id)), width_(width), height_(height), masks_(std::move(masks)) {
    require(width_ > 0 && height_ > 0, ErrorKind::argument, "mask stack needs a positive image size");
    const std::size_t hw = pixel_count();
    for (auto& m : masks_) {
      require(m.size() == hw, ErrorKind::format, "mask size does not match the view " + view_id_);
      for (auto& v : m) v = v ? 1 : 0;
    }
    build_index();
  }

  const std::string& view_id() const { return view_id_; }
  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_); }
  std::size_t mask_count() const { return masks_.size(); }
  const Mask& mask(std::size_t i) const { return masks_.at(i); }
  const std::vector<Mask>& masks() const { return masks_; }

  std::size_t pixel_index(Pixel p) const {
    return static_cast<std::size_t>(p.y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(p.x);
  }
  Pixel pixel_at(std::size_t index) const {
    return {static_cast<int>(index % static_cast<std::size_t>(width_)), static_cast<int>(index / static_cast<std::size_t>(width_))};
  }
  bool contains(Pixel p) const { return p.x >= 0 && p.y >= 0 && p.x < width_ && p.y < height_; }

  std::span<const std::uint32_t> membership(std::size_t pixel) const {
    return {member_ids_.data() + member_offsets_[pixel], member_offsets_[pixel + 1] - member_offsets_[pixel]};
  }
  std::span<const std::uint32_t> membership(Pixel p) const { return membership(pixel_index(p)); }

  /// Pixels covered by at least one mask, ascending.
  const std::vector<std::uint32_t>& covered_pixels() const { return covered_; }
  const std::vector<std::uint32_t>& mask_pixels(std::size_t m) const { return mask_pixels_.at(m); }

  Tensor to_tensor() const {
    std::vector<std::uint8_t> data;
    data.reserve(masks_.size() * pixel_count());
    for (const auto& m : masks_) data.insert(data.end(), m.begin(), m.end());
    return Tensor::bytes({static_cast<std::uint32_t>(masks_.size()), static_cast<std::uint32_t>(height_),
                          static_cast<std::uint32_t>(width_)},
                         std::move(data));
  }

  static MaskStack from_tensor(std::string view_id, const Tensor& t) {
    require(t.dtype == DType::u8 && t.dims.size() == 3, ErrorKind::format, "mask tensor must be u8 [M, H, W]");
    const std::size_t hw = static_cast<std::size_t>(t.dims[1]) * t.dims[2];
    std::vector<Mask> masks(t.dims[0]);
    for (std::size_t m = 0; m < masks.size(); ++m)
      masks[m].assign(t.u8.begin() + static_cast<std::ptrdiff_t>(m * hw), t.u8.begin() + static_cast<std::ptrdiff_t>((m + 1) * hw));
    return MaskStack(std::move(view_id), static_cast<int>(t.dims[2]), static_cast<int>(t.dims[1]), std::move(masks));
  }

private:
  void build_index() {
    const std::size_t hw = pixel_count();
    member_offsets_.assign(hw + 1, 0);
    mask_pixels_.assign(masks_.size(), {});
    for (std::size_t m = 0; m < masks_.size(); ++m)
      for (std::size_t p = 0; p < hw; ++p)
        if (masks_[m][p]) {
          ++member_offsets_[p + 1];
          mask_pixels_[m].push_back(static_cast<std::uint32_t>(p));
        }
    for (std::size_t p = 0; p < hw; ++p) member_offsets_[p + 1] += member_offsets_[p];
    member_ids_.resize(member_offsets_[hw]);
    std::vector<std::uint32_t> cursor(member_offsets_.begin(), member_offsets_.end() - 1);
    for (std::size_t m = 0; m < masks_.size(); ++m)
      for (std::uint32_t p : mask_pixels_[m]) member_ids_[cursor[p]++] = static_cast<std::uint32_t>(m);
    covered_.clear();
    for (std::size_t p = 0; p < hw; ++p)
      if (member_offsets_[p + 1] > member_offsets_[p]) covered_.push_back(static_cast<std::uint32_t>(p));
  }

  std::string view_id_;
  int width_ = 0;
  int height_ = 0;
  std::vector<Mask> masks_;
  std::vector<std::uint32_t> member_offsets_;
  std::vector<std::uint32_t> member_ids_;
  std::vector<std::vector<std::uint32_t>> mask_pixels_;
  std::vector<std::uint32_t> covered_;
};

/// Low-resolution guidance features of one view. Cell (r, c) covers image
/// rows [r*H/rows, (r+1)*H/rows) and columns [c*W/cols, (c+1)*W/cols).
struct GuidanceFeatureMap {
  std::string view_id;
  int rows = 0;
  int cols = 0;
  int image_width = 0;
  int image_height = 0;
  FeatureMatrix values;  ///< rows*cols x C_sam

  std::size_t cell_count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  std::size_t channels() const { return static_cast<std::size_t>(values.cols()); }

  /// Image pixel sampled for cell `cell` (nearest to the cell center).
  Pixel cell_center(std::size_t cell) const {
    const auto r = static_cast<double>(cell / static_cast<std::size_t>(cols));
    const auto c = static_cast<double>(cell % static_cast<std::size_t>(cols));
    return {static_cast<int>(std::floor((c + 0.5) * image_width / cols)),
            static_cast<int>(std::floor((r + 0.5) * image_height / rows))};
  }

  /// Nearest-neighbor downsampling of a full-resolution mask to the grid.
  Mask downsample(const Mask& mask) const {
    require(mask.size() == static_cast<std::size_t>(image_width) * static_cast<std::size_t>(image_height),
            ErrorKind::argument, "mask size does not match guidance alignment");
    Mask cells(cell_count());
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const Pixel p = cell_center(k);
      cells[k] = mask[static_cast<std::size_t>(p.y) * static_cast<std::size_t>(image_width) + static_cast<std::size_t>(p.x)];
    }
    return cells;
  }

  Tensor to_tensor() const {
    std::vector<float> data(static_cast<std::size_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(values.data()[i]);
    return Tensor::floats({static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols),
                           static_cast<std::uint32_t>(values.cols())},
                          std::move(data));
  }

  static GuidanceFeatureMap from_tensor(std::string view_id, const Tensor& t, int image_width, int image_height) {
    require(t.dtype == DType::f32 && t.dims.size() == 3, ErrorKind::format, "guidance tensor must be f32 [Hf, Wf, C]");
    require(t.dims[0] >= 1 && t.dims[1] >= 1 && t.dims[2] >= 1, ErrorKind::format, "guidance grid must be non-empty");
    require(static_cast<int>(t.dims[0]) <= image_height && static_cast<int>(t.dims[1]) <= image_width, ErrorKind::format,
            "guidance grid larger than the view " + view_id);
    GuidanceFeatureMap g;
    g.view_id = std::move(view_id);
    g.rows = static_cast<int>(t.dims[0]);
    g.cols = static_cast<int>(t.dims[1]);
    g.image_width = image_width;
    g.image_height = image_height;
    g.values.resize(static_cast<Eigen::Index>(g.cell_count()), t.dims[2]);
    for (Eigen::Index i = 0; i < g.values.size(); ++i) {
      const float v = t.f32[static_cast<std::size_t>(i)];
      require(std::isfinite(v), ErrorKind::data, "non-finite guidance value in view " + g.view_id);
      g.values.data()[i] = v;
    }
    return g;
  }
};

inline MaskStack load_stack(const std::filesystem::path& path, const Camera& cam) {
  MaskStack stack = MaskStack::from_tensor(cam.id, load_tensor(path));
  require(stack.width() == cam.width && stack.height() == cam.height, ErrorKind::format,
          path.string() + ": mask size " + std::to_string(stack.width()) + "x" + std::to_string(stack.height()) +
              " does not match camera " + cam.id);
  return stack;
}

inline GuidanceFeatureMap load_guidance(const std::filesystem::path& path, const Camera& cam) {
  return GuidanceFeatureMap::from_tensor(cam.id, load_tensor(path), cam.width, cam.height);
}

inline void save_stack(const MaskStack& stack, const std::filesystem::path& path) { save_tensor(path, stack.to_tensor()); }
inline void save_guidance(const GuidanceFeatureMap& g, const std::filesystem::path& path) { save_tensor(path, g.to_tensor()); }

/// Mask-IoU correspondence of two pixels. Intersection-free pairs map to -1;
/// a pair involving a pixel outside every mask carries no signal and maps to 0.
inline double corr(Pixel p1, Pixel p2, const MaskStack& stack) {
  const auto a = stack.membership(p1);
  const auto b = stack.membership(p2);
  if (a.empty() || b.empty()) return 0.0;
  std::size_t inter = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  if (inter == 0) return -1.0;
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

struct PixelPair {
  Pixel p1;
  Pixel p2;
  double corr = 0.0;
};

/// Both pixels uniform inside mask `m`.
inline std::vector<PixelPair> sample_pairs_in_mask(const MaskStack& stack, std::size_t m, std::size_t n, Rng& rng) {
  const auto& pixels = stack.mask_pixels(m);
  require(!pixels.empty(), ErrorKind::argument, "cannot sample pairs from an empty mask");
  std::uniform_int_distribution<std::size_t> pick(0, pixels.size() - 1);
  std::vector<PixelPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Pixel a = stack.pixel_at(pixels[pick(rng)]);
    const Pixel b = stack.pixel_at(pixels[pick(rng)]);
    out.push_back({a, b, corr(a, b, stack)});
  }
  return out;
}

/// Stochastic estimator of the all-pairs correspondence sum: half the pairs
/// uniform over the union of mask supports, half inside one random mask.
inline std::vector<PixelPair> sample_pairs(const MaskStack& stack, std::size_t n, Rng& rng) {
  require(n >= 1, ErrorKind::argument, "sample_pairs needs n >= 1");
  const auto& covered = stack.covered_pixels();
  require(!covered.empty(), ErrorKind::argument, "cannot sample pairs from an empty mask stack (view " + stack.view_id() + ")");
  std::vector<std::size_t> nonempty;
  for (std::size_t m = 0; m < stack.mask_count(); ++m)
    if (!stack.mask_pixels(m).empty()) nonempty.push_back(m);

  std::uniform_int_distribution<std::size_t> pick_any(0, covered.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_mask(0, nonempty.size() - 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<PixelPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Pixel a, b;
    if (coin(rng)) {
      a = stack.pixel_at(covered[pick_any(rng)]);
      b = stack.pixel_at(covered[pick_any(rng)]);
    } else {
      const auto& pixels = stack.mask_pixels(nonempty[pick_mask(rng)]);
      std::uniform_int_distribution<std::size_t> pick(0, pixels.size() - 1);
      a = stack.pixel_at(pixels[pick(rng)]);
      b = stack.pixel_at(pixels[pick(rng)]);
    }
    out.push_back({a, b, corr(a, b, stack)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic masks and guidance features

/// Quarter id per Gaussian within its object: 2 * (world x above the object's
/// centroid) + (world y above it). Halves are quarter / 2, so the subpart
/// (quarter) masks nest inside the part (half) masks.
inline std::vector<int> object_parts(const GaussianCloud& cloud, const GroundTruthLabels& labels) {
  const int count = labels.max_label();
  std::vector<Eigen::Vector3d> sums(static_cast<std::size_t>(count) + 1, Eigen::Vector3d::Zero());
  std::vector<std::size_t> counts(static_cast<std::size_t>(count) + 1, 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto l = static_cast<std::size_t>(labels.gaussian_labels[i]);
    sums[l] += cloud.positions[i];
    ++counts[l];
  }
  std::vector<int> parts(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto l = static_cast<std::size_t>(labels.gaussian_labels[i]);
    const Eigen::Vector3d c = sums[l] / static_cast<double>(counts[l]);
    parts[i] = 2 * (cloud.positions[i].x() > c.x() ? 1 : 0) + (cloud.positions[i].y() > c.y() ? 1 : 0);
  }
  return parts;
}

struct DenseLabels {
  std::vector<int> label;    ///< 0 = none
  std::vector<int> quarter;  ///< quarter of the dominant object, -1 = none
};

/// Per pixel, the label with the largest summed blend weight among pixels with
/// accumulated alpha >= 0.5 (ties resolve to the lower label), and likewise the
/// dominant quarter of that object.
inline DenseLabels dominant_labels(const BlendTable& table, const GroundTruthLabels& labels,
                                   const std::vector<int>* parts = nullptr) {
  const int count = labels.max_label();
  const std::size_t hw = table.pixel_count();
  DenseLabels out{std::vector<int>(hw, 0), std::vector<int>(hw, -1)};
  std::vector<double> per_label(static_cast<std::size_t>(count) + 1);
  for (std::size_t p = 0; p < hw; ++p) {
    if (table.alpha[p] < 0.5) continue;
    std::fill(per_label.begin(), per_label.end(), 0.0);
    const auto ids = table.contributors(p);
    const auto ws = table.contributor_weights(p);
    for (std::size_t k = 0; k < ids.size(); ++k) per_label[static_cast<std::size_t>(labels.gaussian_labels[ids[k]])] += ws[k];
    int best = 0;
    for (int l = 1; l <= count; ++l)
      if (per_label[static_cast<std::size_t>(l)] > per_label[static_cast<std::size_t>(best)]) best = l;
    if (best == 0) continue;
    out.label[p] = best;
    if (parts) {
      double side[4] = {0.0, 0.0, 0.0, 0.0};
      for (std::size_t k = 0; k < ids.size(); ++k)
        if (labels.gaussian_labels[ids[k]] == best) side[(*parts)[ids[k]]] += ws[k];
      out.quarter[p] = static_cast<int>(std::max_element(side, side + 4) - side);
    }
  }
  return out;
}

/// Objects paired with their nearest neighbor (by centroid), deduplicated.
inline std::vector<std::pair<int, int>> adjacent_objects(const GaussianCloud& cloud, const GroundTruthLabels& labels) {
  const int count = labels.max_label();
  std::vector<Eigen::Vector3d> centroid(static_cast<std::size_t>(count) + 1, Eigen::Vector3d::Zero());
  std::vector<double> n(static_cast<std::size_t>(count) + 1, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto l = static_cast<std::size_t>(labels.gaussian_labels[i]);
    centroid[l] += cloud.positions[i];
    n[l] += 1.0;
  }
  std::vector<std::pair<int, int>> pairs;
  for (int a = 1; a <= count; ++a) {
    if (n[static_cast<std::size_t>(a)] == 0.0) continue;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int b = 1; b <= count; ++b) {
      if (b == a || n[static_cast<std::size_t>(b)] == 0.0) continue;
      const double d = (centroid[static_cast<std::size_t>(a)] / n[static_cast<std::size_t>(a)] -
                        centroid[static_cast<std::size_t>(b)] / n[static_cast<std::size_t>(b)])
                           .squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = b;
      }
    }
    if (best < 0) continue;
    const std::pair<int, int> key{std::min(a, best), std::max(a, best)};
    if (std::find(pairs.begin(), pairs.end(), key) == pairs.end()) pairs.push_back(key);
  }
  return pairs;
}

/// Mask levels: whole objects; + halves of each object; + quarters.
enum class Granularity { objects = 1, parts = 2, subparts = 3 };

/// Per view: one mask per visible object, then (by level) the visible halves
/// and quarters of each object. Levels nest: quarter within half within object.
/// With `coarse`, unions of adjacent visible objects are appended.
inline std::vector<MaskStack> synth_masks(const GaussianCloud& cloud, const GroundTruthLabels& labels,
                                          const std::vector<Camera>& cameras, Granularity level, bool coarse = false) {
  const int count = labels.max_label();
  const auto parts = object_parts(cloud, labels);
  const auto adjacency = coarse ? adjacent_objects(cloud, labels) : std::vector<std::pair<int, int>>{};
  std::vector<MaskStack> stacks;
  for (const auto& cam : cameras) {
    const auto table = build_blend_table(cloud, cam);
    const auto dense = dominant_labels(table, labels, &parts);
    const std::size_t hw = cam.pixel_count();
    std::vector<Mask> masks;
    std::vector<std::uint8_t> visible(static_cast<std::size_t>(count) + 1, 0);
    for (int l = 1; l <= count; ++l) {
      Mask whole(hw, 0);
      std::vector<Mask> halves(2, Mask(hw, 0)), quarters(4, Mask(hw, 0));
      for (std::size_t p = 0; p < hw; ++p) {
        if (dense.label[p] != l) continue;
        whole[p] = 1;
        halves[static_cast<std::size_t>(dense.quarter[p] / 2)][p] = 1;
        quarters[static_cast<std::size_t>(dense.quarter[p])][p] = 1;
      }
      if (count_true(whole) == 0) continue;
      visible[static_cast<std::size_t>(l)] = 1;
      masks.push_back(std::move(whole));
      if (level >= Granularity::parts)
        for (auto& h : halves)
          if (count_true(h) > 0) masks.push_back(std::move(h));
      if (level >= Granularity::subparts)
        for (auto& q : quarters)
          if (count_true(q) > 0) masks.push_back(std::move(q));
    }
    for (const auto& [a, b] : adjacency) {
      if (!visible[static_cast<std::size_t>(a)] || !visible[static_cast<std::size_t>(b)]) continue;
      Mask both(hw, 0);
      for (std::size_t p = 0; p < hw; ++p) both[p] = (dense.label[p] == a || dense.label[p] == b) ? 1 : 0;
      masks.push_back(std::move(both));
    }
    stacks.emplace_back(cam.id, cam.width, cam.height, std::move(masks));
  }
  return stacks;
}

struct GuidanceSynthSpec {
  std::size_t channels = 32;
  int stride = 4;  ///< image pixels per grid cell along each axis
  double scale = 1.0;  ///< overall embedding magnitude
  double part_weight = 0.5;
  double noise = 0.05;
  std::uint64_t seed = 0;
};

/// Stand-in for offline foundation-model features: each cell carries an
/// embedding of the object dominating its center pixel, plus smaller half and quarter terms.
inline std::vector<GuidanceFeatureMap> synth_guidance(const GaussianCloud& cloud, const GroundTruthLabels& labels,
                                                      const std::vector<Camera>& cameras, const GuidanceSynthSpec& spec) {
  require(spec.channels >= 1 && spec.stride >= 1, ErrorKind::argument, "invalid guidance synth spec");
  const int count = labels.max_label();
  const auto parts = object_parts(cloud, labels);
  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto c = static_cast<Eigen::Index>(spec.channels);
  auto random_unit = [&] {
    Eigen::RowVectorXd v(c);
    for (Eigen::Index i = 0; i < c; ++i) v[i] = gauss(rng);
    return Eigen::RowVectorXd(v.normalized());
  };
  std::vector<Eigen::RowVectorXd> object_embed, half_embed, quarter_embed;
  for (int l = 0; l <= count; ++l) object_embed.push_back(random_unit());
  for (int l = 0; l <= 2 * count + 1; ++l) half_embed.push_back(spec.part_weight * random_unit());
  for (int l = 0; l <= 4 * count + 3; ++l) quarter_embed.push_back(0.5 * spec.part_weight * random_unit());

  std::vector<GuidanceFeatureMap> maps;
  for (const auto& cam : cameras) {
    const auto table = build_blend_table(cloud, cam);
    const auto dense = dominant_labels(table, labels, &parts);
    GuidanceFeatureMap g;
    g.view_id = cam.id;
    g.rows = std::max(1, cam.height / spec.stride);
    g.cols = std::max(1, cam.width / spec.stride);
    g.image_width = cam.width;
    g.image_height = cam.height;
    g.values.resize(static_cast<Eigen::Index>(g.cell_count()), c);
    for (std::size_t k = 0; k < g.cell_count(); ++k) {
      const Pixel p = g.cell_center(k);
      const std::size_t pix = static_cast<std::size_t>(p.y) * static_cast<std::size_t>(cam.width) + static_cast<std::size_t>(p.x);
      const int l = dense.label[pix];
      Eigen::RowVectorXd v = object_embed[static_cast<std::size_t>(l)];
      if (l > 0) {
        v += half_embed[static_cast<std::size_t>(2 * l + dense.quarter[pix] / 2)];
        v += quarter_embed[static_cast<std::size_t>(4 * l + dense.quarter[pix])];
      }
      for (Eigen::Index i = 0; i < c; ++i) v[i] += spec.noise * gauss(rng);
      g.values.row(static_cast<Eigen::Index>(k)) = spec.scale * v;
    }
    maps.push_back(std::move(g));
  }
  return maps;
}

}  // namespace gsseg
