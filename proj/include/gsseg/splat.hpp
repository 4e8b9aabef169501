#pragma once

// Software splat rasterizer: EWA projection, per-pixel front-to-back alpha
// blending and the (linear) feature gradient. Geometry is frozen, so the
// per-pixel blend weights of a view are computed once into a BlendTable and
// rendering any per-Gaussian attribute becomes a sparse product.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Geometry>

#include "gsseg/common.hpp"
#include "gsseg/scene.hpp"

namespace gsseg {

inline constexpr double kNearPlane = 0.2;
inline constexpr double kLowPassVariance = 0.3;
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;

struct Projected2D {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
  Eigen::Vector3d conic;  ///< (a, b, c) of cov^-1 = [[a, b], [b, c]]
  double depth = 0.0;
  double radius = 0.0;  ///< 3 sigma of the major axis, pixels
  std::size_t gaussian_index = 0;
};

inline Eigen::Matrix3d covariance_3d(const Eigen::Vector3d& scale, const Eigen::Quaterniond& rotation) {
  const Eigen::Matrix3d m = rotation.toRotationMatrix() * scale.asDiagonal();
  return m * m.transpose();
}

/// Projects one Gaussian; returns false when it is culled.
inline bool project_one(const GaussianCloud& cloud, const Camera& cam, std::size_t i, Projected2D& out) {
  const Eigen::Vector3d t = cam.to_camera(cloud.positions[i]);
  if (t.z() <= kNearPlane) return false;
  const double inv_z = 1.0 / t.z();
  const double lim_x = 1.3 * 0.5 * cam.width / cam.fx;
  const double lim_y = 1.3 * 0.5 * cam.height / cam.fy;
  const double tx = std::clamp(t.x() * inv_z, -lim_x, lim_x) * t.z();
  const double ty = std::clamp(t.y() * inv_z, -lim_y, lim_y) * t.z();
  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx * inv_z, 0.0, -cam.fx * tx * inv_z * inv_z, 0.0, cam.fy * inv_z, -cam.fy * ty * inv_z * inv_z;
  const Eigen::Matrix<double, 2, 3> jw = jac * cam.world_to_camera.topLeftCorner<3, 3>();
  Eigen::Matrix2d cov = jw * covariance_3d(cloud.scales[i], cloud.rotations[i]) * jw.transpose();
  cov(0, 0) += kLowPassVariance;
  cov(1, 1) += kLowPassVariance;
  const double det = cov.determinant();
  if (!(det > 0.0)) return false;

  const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
  out.radius = 3.0 * std::sqrt(lambda_max);
  out.mean = {cam.fx * t.x() * inv_z + cam.cx, cam.fy * t.y() * inv_z + cam.cy};
  if (out.mean.x() + out.radius < 0.0 || out.mean.x() - out.radius > cam.width - 1 || out.mean.y() + out.radius < 0.0 ||
      out.mean.y() - out.radius > cam.height - 1)
    return false;
  out.cov = cov;
  out.conic = {cov(1, 1) / det, -cov(0, 1) / det, cov(0, 0) / det};
  out.depth = t.z();
  out.gaussian_index = i;
  return true;
}

/// Visible Gaussians sorted front to back (ties by index). `include`, when
/// given, restricts projection to flagged Gaussians.
inline std::vector<Projected2D> project(const GaussianCloud& cloud, const Camera& cam,
                                        const std::vector<std::uint8_t>* include = nullptr) {
  std::vector<Projected2D> out;
  out.reserve(cloud.size());
  Projected2D p;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (include && !(*include)[i]) continue;
    if (project_one(cloud, cam, i, p)) out.push_back(p);
  }
  std::sort(out.begin(), out.end(), [](const Projected2D& a, const Projected2D& b) {
    return a.depth != b.depth ? a.depth < b.depth : a.gaussian_index < b.gaussian_index;
  });
  return out;
}

/// opacity * exp(-0.5 d^T cov^-1 d), clamped to kMaxAlpha.
inline double alpha_at(const Projected2D& proj, double opacity, const Eigen::Vector2d& pixel) {
  const double dx = pixel.x() - proj.mean.x();
  const double dy = pixel.y() - proj.mean.y();
  const double power = -0.5 * (proj.conic[0] * dx * dx + proj.conic[2] * dy * dy) - proj.conic[1] * dx * dy;
  if (power > 0.0) return 0.0;
  return std::min(kMaxAlpha, opacity * std::exp(power));
}

/// Per-pixel ordered contributors and blend weights w = alpha * T for one view.
struct BlendTable {
  int width = 0;
  int height = 0;
  std::size_t gaussian_count = 0;
  std::vector<std::uint32_t> offsets;  ///< CSR row starts, size width*height + 1
  std::vector<std::uint32_t> gaussians;
  std::vector<double> weights;
  std::vector<double> alpha;  ///< accumulated alpha, 1 - final transmittance

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t entry_count() const { return weights.size(); }

  std::span<const std::uint32_t> contributors(std::size_t pixel) const {
    return {gaussians.data() + offsets[pixel], offsets[pixel + 1] - offsets[pixel]};
  }
  std::span<const double> contributor_weights(std::size_t pixel) const {
    return {weights.data() + offsets[pixel], offsets[pixel + 1] - offsets[pixel]};
  }

  /// Blend weight of Gaussian `g` at `pixel` (0 if it does not contribute).
  double weight_of(std::size_t pixel, std::size_t g) const {
    for (std::uint32_t k = offsets[pixel]; k < offsets[pixel + 1]; ++k)
      if (gaussians[k] == g) return weights[k];
    return 0.0;
  }
};

inline BlendTable build_blend_table(const GaussianCloud& cloud, const Camera& cam,
                                    const std::vector<std::uint8_t>* include = nullptr) {
  const auto projected = project(cloud, cam, include);
  BlendTable table;
  table.width = cam.width;
  table.height = cam.height;
  table.gaussian_count = cloud.size();
  const std::size_t hw = cam.pixel_count();
  std::vector<double> transmittance(hw, 1.0);
  std::vector<std::uint8_t> done(hw, 0);

  struct Entry {
    std::uint32_t pixel;
    std::uint32_t gaussian;
    double weight;
  };
  std::vector<Entry> entries;
  entries.reserve(projected.size() * 16);
  for (const auto& p : projected) {
    const double opacity = cloud.opacities[p.gaussian_index];
    const int x0 = std::max(0, static_cast<int>(std::ceil(p.mean.x() - p.radius)));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(p.mean.x() + p.radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(p.mean.y() - p.radius)));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(p.mean.y() + p.radius)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * static_cast<std::size_t>(cam.width) + static_cast<std::size_t>(x);
        if (done[pix]) continue;
        const double a = alpha_at(p, opacity, Eigen::Vector2d(static_cast<double>(x), static_cast<double>(y)));
        if (a < kMinAlpha) continue;
        const double next_t = transmittance[pix] * (1.0 - a);
        if (next_t < kMinTransmittance) {
          done[pix] = 1;
          continue;
        }
        entries.push_back({static_cast<std::uint32_t>(pix), static_cast<std::uint32_t>(p.gaussian_index),
                           a * transmittance[pix]});
        transmittance[pix] = next_t;
      }
    }
  }

  // Counting sort by pixel keeps the front-to-back order within each pixel.
  table.offsets.assign(hw + 1, 0);
  for (const auto& e : entries) ++table.offsets[e.pixel + 1];
  std::partial_sum(table.offsets.begin(), table.offsets.end(), table.offsets.begin());
  table.gaussians.resize(entries.size());
  table.weights.resize(entries.size());
  std::vector<std::uint32_t> cursor(table.offsets.begin(), table.offsets.end() - 1);
  for (const auto& e : entries) {
    const std::uint32_t k = cursor[e.pixel]++;
    table.gaussians[k] = e.gaussian;
    table.weights[k] = e.weight;
  }
  table.alpha.resize(hw);
  for (std::size_t i = 0; i < hw; ++i) table.alpha[i] = 1.0 - transmittance[i];
  return table;
}

/// H*W rows of rendered values plus the accumulated alpha channel.
struct FeatureMap {
  int width = 0;
  int height = 0;
  FeatureMatrix values;
  std::vector<double> alpha;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t channels() const { return static_cast<std::size_t>(values.cols()); }
  auto at(int x, int y) const { return values.row(static_cast<Eigen::Index>(y) * width + x); }
};

/// Blends per-Gaussian rows of `attributes` (N x C) with the table weights.
inline FeatureMap render_attributes(const BlendTable& table, const FeatureMatrix& attributes) {
  require(static_cast<std::size_t>(attributes.rows()) == table.gaussian_count, ErrorKind::argument,
          "attribute rows do not match the Gaussian count of the blend table");
  FeatureMap out;
  out.width = table.width;
  out.height = table.height;
  out.alpha = table.alpha;
  const std::size_t hw = table.pixel_count();
  out.values = FeatureMatrix::Zero(static_cast<Eigen::Index>(hw), attributes.cols());
  for (std::size_t p = 0; p < hw; ++p) {
    auto row = out.values.row(static_cast<Eigen::Index>(p));
    for (std::uint32_t k = table.offsets[p]; k < table.offsets[p + 1]; ++k)
      row.noalias() += table.weights[k] * attributes.row(table.gaussians[k]);
  }
  return out;
}

inline FeatureMap render_features(const BlendTable& table, const FeatureMatrix& features) {
  return render_attributes(table, features);
}

inline FeatureMap render_features(const GaussianCloud& cloud, const Camera& cam) {
  return render_attributes(build_blend_table(cloud, cam), cloud.features);
}

inline FeatureMatrix color_matrix(const GaussianCloud& cloud) {
  FeatureMatrix colors(static_cast<Eigen::Index>(cloud.size()), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) colors.row(static_cast<Eigen::Index>(i)) = cloud.colors[i].transpose();
  return colors;
}

/// RGB image (H*W x 3) over a black background.
inline FeatureMap render_color(const GaussianCloud& cloud, const Camera& cam) {
  return render_attributes(build_blend_table(cloud, cam), color_matrix(cloud));
}

/// dL/df for every Gaussian given dL/dF^r (H*W x C): grad_i = sum_p w_{p,i} upstream_p.
inline FeatureMatrix backward_features(const BlendTable& table, const FeatureMatrix& upstream) {
  require(static_cast<std::size_t>(upstream.rows()) == table.pixel_count(), ErrorKind::argument,
          "upstream gradient rows do not match the image size");
  FeatureMatrix grad = FeatureMatrix::Zero(static_cast<Eigen::Index>(table.gaussian_count), upstream.cols());
  const std::size_t hw = table.pixel_count();
  for (std::size_t p = 0; p < hw; ++p) {
    const std::uint32_t begin = table.offsets[p];
    const std::uint32_t end = table.offsets[p + 1];
    if (begin == end) continue;
    const auto up = upstream.row(static_cast<Eigen::Index>(p));
    for (std::uint32_t k = begin; k < end; ++k) grad.row(table.gaussians[k]).noalias() += table.weights[k] * up;
  }
  return grad;
}

inline FeatureMatrix backward_features(const GaussianCloud& cloud, const Camera& cam, const FeatureMatrix& upstream) {
  require(upstream.cols() == cloud.features.cols(), ErrorKind::argument, "upstream channel count mismatch");
  return backward_features(build_blend_table(cloud, cam), upstream);
}

}  // namespace gsseg
