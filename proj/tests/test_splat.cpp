#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "test_util.hpp"

using namespace gsseg;
using namespace gsseg::testing;

namespace {

GaussianCloud one_gaussian(const Eigen::Vector3d& pos, double scale, double opacity, std::size_t dim = 2) {
  GaussianCloud c;
  c.resize(1, dim);
  c.positions[0] = pos;
  c.scales[0] = Eigen::Vector3d::Constant(scale);
  c.opacities[0] = opacity;
  return c;
}

/// Direct per-pixel front-to-back blending from the projected splats, with
/// its own sort, alpha formula (explicit inverse) and transmittance loop.
FeatureMatrix brute_render(const GaussianCloud& cloud, const Camera& cam, std::vector<double>& alpha_out) {
  auto proj = project(cloud, cam);
  std::stable_sort(proj.begin(), proj.end(), [](const Projected2D& a, const Projected2D& b) {
    return std::make_pair(a.depth, a.gaussian_index) < std::make_pair(b.depth, b.gaussian_index);
  });
  const auto hw = static_cast<Eigen::Index>(cam.pixel_count());
  FeatureMatrix out = FeatureMatrix::Zero(hw, cloud.features.cols());
  alpha_out.assign(cam.pixel_count(), 0.0);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      double t = 1.0;
      const Eigen::Index p = static_cast<Eigen::Index>(y) * cam.width + x;
      for (const auto& g : proj) {
        const Eigen::Vector2d d = Eigen::Vector2d(x, y) - g.mean;
        if (std::abs(d.x()) > g.radius || std::abs(d.y()) > g.radius) continue;
        const double a = std::min(0.99, cloud.opacities[g.gaussian_index] * std::exp(-0.5 * d.dot(g.cov.inverse() * d)));
        if (a < 1.0 / 255.0) continue;
        if (t * (1.0 - a) < 1e-4) break;
        out.row(p) += a * t * cloud.features.row(static_cast<Eigen::Index>(g.gaussian_index));
        t *= 1.0 - a;
      }
      alpha_out[static_cast<std::size_t>(p)] = 1.0 - t;
    }
  return out;
}

}  // namespace

TEST(Project, OnAxisGaussianLandsAtPrincipalPoint) {
  const auto cam = axis_camera(32, 24, 40.0);
  const auto cloud = one_gaussian({0, 0, 5}, 0.2, 0.5);
  const auto p = project(cloud, cam);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_NEAR(p[0].mean.x(), cam.cx, 1e-12);
  EXPECT_NEAR(p[0].mean.y(), cam.cy, 1e-12);
  EXPECT_DOUBLE_EQ(p[0].depth, 5.0);
}

TEST(Project, IsotropicCovarianceMatchesClosedForm) {
  for (double d : {2.0, 5.0, 9.0}) {
    for (double s : {0.05, 0.3}) {
      auto cam = axis_camera(64, 64, 50.0);
      cam.fy = 70.0;
      const auto p = project(one_gaussian({0, 0, d}, s, 0.5), cam);
      ASSERT_EQ(p.size(), 1u);
      const double ex = std::pow(cam.fx * s / d, 2), ey = std::pow(cam.fy * s / d, 2);
      EXPECT_NEAR(p[0].cov(0, 0) - kLowPassVariance, ex, 1e-9 * ex + 1e-12);
      EXPECT_NEAR(p[0].cov(1, 1) - kLowPassVariance, ey, 1e-9 * ey + 1e-12);
      EXPECT_NEAR(p[0].cov(0, 1), 0.0, 1e-12);
    }
  }
}

TEST(Project, BehindCameraAndOutsideFrustumAreCulled) {
  const auto cam = axis_camera(32, 32, 40.0);
  EXPECT_TRUE(project(one_gaussian({0, 0, -5}, 0.2, 0.5), cam).empty());
  EXPECT_TRUE(project(one_gaussian({0, 0, 0.1}, 0.2, 0.5), cam).empty());
  EXPECT_TRUE(project(one_gaussian({50, 0, 5}, 0.1, 0.5), cam).empty());
}

TEST(Project, SortedByDepth) {
  Rng rng(5);
  const auto cloud = random_cloud(40, 1, rng);
  const auto p = project(cloud, axis_camera(32, 32, 30.0));
  for (std::size_t i = 1; i < p.size(); ++i) EXPECT_LE(p[i - 1].depth, p[i].depth);
}

TEST(Alpha, CenterOneSigmaAndClamp) {
  const auto cam = axis_camera(64, 64, 50.0);
  auto cloud = one_gaussian({0.1, -0.2, 4}, 0.3, 0.8);
  cloud.rotations[0] = Eigen::Quaterniond(Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()));
  cloud.scales[0] = {0.1, 0.3, 0.2};
  const auto p = project(cloud, cam).at(0);
  EXPECT_DOUBLE_EQ(alpha_at(p, 0.8, p.mean), 0.8);
  EXPECT_DOUBLE_EQ(alpha_at(p, 1.0, p.mean), kMaxAlpha);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(p.cov);
  for (int k = 0; k < 2; ++k) {
    const Eigen::Vector2d at = p.mean + std::sqrt(eig.eigenvalues()[k]) * eig.eigenvectors().col(k);
    EXPECT_NEAR(alpha_at(p, 1.0, at), std::exp(-0.5), 1e-9);
  }
}

TEST(Render, SingleGaussianIsAlphaTimesFeature) {
  const auto cam = axis_camera(16, 16, 20.0);
  auto cloud = one_gaussian({0, 0, 4}, 0.3, 0.7);
  cloud.features.row(0) << 2.0, -3.0;
  const auto map = render_features(cloud, cam);
  const auto p = project(cloud, cam).at(0);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const double a = alpha_at(p, 0.7, Eigen::Vector2d(x, y));
      const Eigen::RowVector2d expect = a >= kMinAlpha ? Eigen::RowVector2d(a * cloud.features.row(0)) : Eigen::RowVector2d::Zero();
      EXPECT_NEAR((map.at(x, y) - expect).norm(), 0.0, 1e-12);
    }
}

TEST(Render, TwoGaussiansExpandFrontToBack) {
  const auto cam = axis_camera(16, 16, 20.0);
  GaussianCloud cloud;
  cloud.resize(2, 2);
  // back Gaussian first in storage order to check depth sorting
  cloud.positions = {{0, 0, 6}, {0, 0, 3}};
  cloud.scales = {Eigen::Vector3d::Constant(0.5), Eigen::Vector3d::Constant(0.3)};
  cloud.opacities = {0.6, 0.5};
  cloud.features << 0.0, 1.0, 1.0, 0.0;
  const auto map = render_features(cloud, cam);
  const auto proj = project(cloud, cam);
  const Eigen::Vector2d c(8, 8);
  const double a1 = alpha_at(proj[0], 0.5, c), a2 = alpha_at(proj[1], 0.6, c);
  EXPECT_NEAR(map.at(8, 8)(0), a1, 1e-12);
  EXPECT_NEAR(map.at(8, 8)(1), (1 - a1) * a2, 1e-12);
}

TEST(Render, MatchesDirectSummationOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto cloud = random_cloud(20, 3, rng);
    const auto cam = axis_camera(24, 20, 18.0);
    std::vector<double> alpha;
    const auto expect = brute_render(cloud, cam, alpha);
    const auto table = build_blend_table(cloud, cam);
    const auto map = render_features(table, cloud.features);
    EXPECT_LT((map.values - expect).cwiseAbs().maxCoeff(), 1e-12) << "seed " << seed;
    for (std::size_t p = 0; p < alpha.size(); ++p) {
      EXPECT_NEAR(table.alpha[p], alpha[p], 1e-12);
      EXPECT_LE(table.alpha[p], 1.0);
      double sum = 0.0;
      for (double w : table.contributor_weights(p)) sum += w;
      EXPECT_NEAR(sum, table.alpha[p], 1e-12);
    }
  }
}

TEST(Render, ColorUsesSameWeights) {
  Rng rng(2);
  const auto cloud = random_cloud(15, 1, rng);
  const auto cam = axis_camera(16, 16, 14.0);
  const auto img = render_color(cloud, cam);
  GaussianCloud as_features = cloud;
  as_features.features = color_matrix(cloud);
  EXPECT_EQ(img.values, render_features(as_features, cam).values);
  EXPECT_EQ(img.channels(), 3u);
}

TEST(Render, IncludeRestrictsContributors) {
  Rng rng(9);
  const auto cloud = random_cloud(30, 1, rng);
  const auto cam = axis_camera(16, 16, 14.0);
  std::vector<std::uint8_t> keep(30, 0);
  for (std::size_t i = 0; i < 30; i += 3) keep[i] = 1;
  const auto table = build_blend_table(cloud, cam, &keep);
  for (std::uint32_t g : table.gaussians) EXPECT_TRUE(keep[g]);
  const auto sub = cloud.subset(keep);
  const auto sub_table = build_blend_table(sub, cam);
  for (std::size_t p = 0; p < table.pixel_count(); ++p) EXPECT_NEAR(table.alpha[p], sub_table.alpha[p], 1e-12);
}

// Properties over 100 random scenes: linearity in features and weight sums.
TEST(RenderProperty, LinearityAndWeightSums) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    auto cloud = random_cloud(5 + seed % 40, 4, rng);
    const auto cam = axis_camera(20, 16, 16.0);
    const auto table = build_blend_table(cloud, cam);
    FeatureMatrix a = FeatureMatrix::Random(static_cast<Eigen::Index>(cloud.size()), 4);
    FeatureMatrix b = FeatureMatrix::Random(static_cast<Eigen::Index>(cloud.size()), 4);
    const auto fa = render_features(table, a), fb = render_features(table, b);
    const auto fab = render_features(table, FeatureMatrix(a + b));
    ASSERT_LE((fab.values - fa.values - fb.values).cwiseAbs().maxCoeff(), 1e-5) << "seed " << seed;
    const auto f2 = render_features(table, FeatureMatrix(2.5 * a));
    ASSERT_LE((f2.values - 2.5 * fa.values).cwiseAbs().maxCoeff(), 1e-5);
    for (std::size_t p = 0; p < table.pixel_count(); ++p) {
      double sum = 0.0;
      for (double w : table.contributor_weights(p)) {
        ASSERT_GE(w, 0.0);
        sum += w;
      }
      ASSERT_NEAR(sum, table.alpha[p], 1e-6);
      ASSERT_GE(table.alpha[p], 0.0);
      ASSERT_LE(table.alpha[p], 1.0);
    }
  }
}

TEST(Backward, ZeroUpstreamAndSingleWeight) {
  const auto cam = axis_camera(8, 8, 10.0);
  auto cloud = one_gaussian({0, 0, 4}, 0.3, 0.7, 3);
  const auto zero = backward_features(cloud, cam, FeatureMatrix::Zero(64, 3));
  EXPECT_EQ(zero, FeatureMatrix::Zero(1, 3));

  const auto table = build_blend_table(cloud, cam);
  FeatureMatrix up = FeatureMatrix::Zero(64, 3);
  const std::size_t pix = 4 * 8 + 4;
  up.row(static_cast<Eigen::Index>(pix)) << 1.0, -2.0, 0.5;
  const double w = table.weight_of(pix, 0);
  EXPECT_GT(w, 0.0);
  const auto g = backward_features(table, up);
  EXPECT_NEAR((g.row(0) - w * up.row(static_cast<Eigen::Index>(pix))).norm(), 0.0, 1e-15);
}

TEST(Backward, ShapeMismatchIsArgumentError) {
  const auto cam = axis_camera(8, 8, 10.0);
  const auto cloud = one_gaussian({0, 0, 4}, 0.3, 0.7, 3);
  EXPECT_EQ(error_kind_of([&] { backward_features(cloud, cam, FeatureMatrix::Zero(63, 3)); }), ErrorKind::argument);
  EXPECT_EQ(error_kind_of([&] { backward_features(cloud, cam, FeatureMatrix::Zero(64, 2)); }), ErrorKind::argument);
}

// Central finite differences of L = <U, F(f)> against the analytic gradient.
TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(77 + seed);
    auto cloud = random_cloud(10 + seed, 3, rng);
    const auto cam = axis_camera(12, 12, 10.0);
    const auto table = build_blend_table(cloud, cam);
    const FeatureMatrix up = FeatureMatrix::Random(144, 3);
    const auto grad = backward_features(table, up);
    auto loss = [&](const FeatureMatrix& f) { return render_features(table, f).values.cwiseProduct(up).sum(); };
    const double h = 1e-3;
    for (Eigen::Index i = 0; i < grad.rows(); ++i)
      for (Eigen::Index c = 0; c < 3; ++c) {
        FeatureMatrix plus = cloud.features, minus = cloud.features;
        plus(i, c) += h;
        minus(i, c) -= h;
        const double fd = (loss(plus) - loss(minus)) / (2 * h);
        ASSERT_NEAR(fd, grad(i, c), 1e-4 * std::max(1.0, std::abs(grad(i, c)))) << "seed " << seed;
      }
  }
}
