#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace gsseg;
using namespace gsseg::testing;

namespace {

Positions gaussian_blob(std::size_t n, const Eigen::Vector3d& centre, double sigma, Rng& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  Positions out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(centre + Eigen::Vector3d(g(rng), g(rng), g(rng)));
  return out;
}

Segmentation seg_of(std::vector<std::uint8_t> m) {
  Segmentation s;
  s.membership = std::move(m);
  s.scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.membership.size()));
  return s;
}

Positions random_points(std::size_t n, Rng& rng, bool quantised) {
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::uniform_int_distribution<int> q(0, 6);
  Positions p;
  for (std::size_t i = 0; i < n; ++i)
    p.push_back(quantised ? Eigen::Vector3d(q(rng), q(rng), q(rng)) : Eigen::Vector3d(u(rng), u(rng), u(rng)));
  return p;
}

}  // namespace

// k-NN and radius queries against brute force, including heavy ties on a lattice.
TEST(KdTree, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(seed);
    const auto pts = random_points(seed < 3 ? 2000 : 700, rng, seed % 2 == 1);
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < pts.size(); i += 1 + seed % 3) subset.push_back(i);
    const KdTree tree(pts, subset);
    for (std::size_t t = 0; t < 100; ++t) {
      const Eigen::Vector3d q = pts[(t * 37) % pts.size()];
      const std::size_t k = 1 + t % 20;
      const auto got = tree.knn(q, k, subset[t % subset.size()]);
      const auto want = oracle::knn(pts, subset, q, k, subset[t % subset.size()]);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        ASSERT_EQ(got[i].index, want[i].index);
        ASSERT_EQ(got[i].d2, want[i].d2);
      }
      // distance-only query: same multiset of distances, k up to a few hundred
      const std::size_t big_k = std::min<std::size_t>(subset.size() - 1, 1 + (t * 13) % 300);
      auto d2s = tree.knn_d2(q, big_k, subset[t % subset.size()]);
      std::sort(d2s.begin(), d2s.end());
      const auto ref = oracle::knn(pts, subset, q, big_k, subset[t % subset.size()]);
      ASSERT_EQ(d2s.size(), ref.size());
      for (std::size_t i = 0; i < d2s.size(); ++i) ASSERT_EQ(d2s[i], ref[i].d2);
      const double r2 = 0.3 * static_cast<double>(t % 10);
      std::vector<std::size_t> brute;
      for (std::size_t i : subset)
        if (oracle::d2(pts[i], q) <= r2) brute.push_back(i);
      ASSERT_EQ(tree.radius(q, r2), brute);
      ASSERT_EQ(tree.any_within(q, r2), !brute.empty());
    }
  }
}

TEST(KdTree, MeanKnnDistancesMatchBruteForce) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(100 + seed);
    auto pts = random_points(seed < 3 ? 1500 : 400, rng, seed % 2 == 1);
    pts.push_back(pts.front());  // an exact duplicate counts at distance 0
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < pts.size(); i += 1 + seed % 2) subset.push_back(i);
    if (subset.back() != pts.size() - 1) subset.push_back(pts.size() - 1);
    const KdTree tree(pts, subset);
    for (std::size_t k : {std::size_t{1}, std::size_t{7}, static_cast<std::size_t>(std::lround(std::sqrt(subset.size()))),
                          subset.size() - 1}) {
      const auto got = tree.mean_knn_distances(k);
      ASSERT_EQ(got.size(), tree.size());
      for (std::size_t s = 0; s < tree.size(); ++s) {
        const std::size_t id = tree.ids()[s];
        double want = 0.0;
        for (const auto& nb : oracle::knn(pts, subset, pts[id], k, id)) want += std::sqrt(nb.d2);
        ASSERT_NEAR(got[s], want / static_cast<double>(k), 1e-12 * (1.0 + want));
      }
    }
  }
}

TEST(StatisticalFilter, TightClusterPlusOutlier) {
  Rng rng(1);
  auto pts = gaussian_blob(100, Eigen::Vector3d::Zero(), 0.1, rng);
  pts.push_back({20, 0, 0});
  const auto cloud = oracle::cloud_at(pts);
  const auto out = statistical_filter(cloud, seg_of(std::vector<std::uint8_t>(101, 1)));
  EXPECT_EQ(out.membership[100], 0);
  EXPECT_EQ(out.membership, oracle::statistical_filter(pts, std::vector<std::uint8_t>(101, 1)));
  EXPECT_EQ(out.stage, Stage::filtered);
}

TEST(StatisticalFilter, UniformGridKeepsEverything) {
  // square (k = 2) and cube (k = 3) vertices: every mean distance is exactly 1
  const Positions square{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  EXPECT_EQ(statistical_filter(oracle::cloud_at(square), seg_of(std::vector<std::uint8_t>(4, 1))).count(), 4u);
  Positions cube;
  for (int i = 0; i < 8; ++i) cube.push_back({i & 1, (i >> 1) & 1, (i >> 2) & 1});
  EXPECT_EQ(statistical_filter(oracle::cloud_at(cube), seg_of(std::vector<std::uint8_t>(8, 1))).count(), 8u);
}

TEST(StatisticalFilter, MirroredClustersShareFate) {
  Rng rng(5);
  auto half = gaussian_blob(60, {3, 0, 0}, 0.5, rng);
  Positions pts = half;
  for (const auto& p : half) pts.push_back({-p.x(), -p.y(), -p.z()});
  const auto out = statistical_filter(oracle::cloud_at(pts), seg_of(std::vector<std::uint8_t>(120, 1)));
  for (std::size_t i = 0; i < 60; ++i) EXPECT_EQ(out.membership[i], out.membership[i + 60]) << i;
}

TEST(StatisticalFilter, SmallInputUnchangedWithWarning) {
  std::vector<std::string> warnings;
  auto prev = warning_sink();
  warning_sink() = [&](std::string_view w) { warnings.emplace_back(w); };
  const auto out = statistical_filter(oracle::cloud_at({{0, 0, 0}, {1, 1, 1}}), seg_of({1, 0}));
  warning_sink() = prev;
  EXPECT_EQ(out.membership, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(StatisticalFilterProperty, MatchesOracleAndShrinks) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    Rng rng(seed);
    const auto pts = random_points(300 + 100 * seed, rng, seed % 3 == 0);
    std::bernoulli_distribution b(0.6);
    std::vector<std::uint8_t> m(pts.size());
    for (auto& v : m) v = b(rng);
    const auto out = statistical_filter(oracle::cloud_at(pts), seg_of(m));
    ASSERT_EQ(out.membership, oracle::statistical_filter(pts, m)) << seed;
    for (std::size_t i = 0; i < m.size(); ++i) ASSERT_LE(out.membership[i], m[i]);
  }
}

TEST(BallGrow, DuplicatesGiveZeroRadius) {
  const Positions pts{{0, 0, 0}, {0, 0, 0}, {0.01, 0, 0}, {5, 5, 5}};
  const auto out = ball_grow(oracle::cloud_at(pts), seg_of({1, 1, 0, 0}));
  EXPECT_EQ(out.membership, (std::vector<std::uint8_t>{1, 1, 0, 0}));
  EXPECT_EQ(out.stage, Stage::grown);
}

TEST(BallGrow, RecoversNearAndIgnoresFar) {
  // members spaced 1 apart -> r = 1
  Positions pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {2.9, 0, 0}, {0, 0.9, 0}, {100, 0, 0}, {101, 0, 0}, {3.95, 0, 0}};
  const auto out = ball_grow(oracle::cloud_at(pts), seg_of({1, 1, 1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(out.membership, (std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0}));  // single pass: 3.95 not chained
  const std::vector<std::uint8_t> exclude{0, 0, 0, 1, 0, 0, 0, 0};
  EXPECT_EQ(ball_grow(oracle::cloud_at(pts), seg_of({1, 1, 1, 0, 0, 0, 0, 0}), &exclude).membership[3], 0);
}

TEST(BallGrowProperty, MatchesOracleAndGrows) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    Rng rng(100 + seed);
    const auto pts = random_points(200 + 120 * seed, rng, seed % 4 == 0);
    std::bernoulli_distribution b(0.3);
    std::vector<std::uint8_t> m(pts.size());
    for (auto& v : m) v = b(rng);
    const auto out = ball_grow(oracle::cloud_at(pts), seg_of(m));
    ASSERT_EQ(out.membership, oracle::ball_grow(pts, m)) << seed;
    for (std::size_t i = 0; i < m.size(); ++i) ASSERT_GE(out.membership[i], m[i]);
  }
}

TEST(RegionGrow, SeedsEqualMembersIsFixpoint) {
  Rng rng(2);
  const auto pts = gaussian_blob(50, Eigen::Vector3d::Zero(), 1.0, rng);
  std::vector<std::uint8_t> m(50, 1);
  EXPECT_EQ(region_grow_filter(oracle::cloud_at(pts), seg_of(m), m).membership, m);
}

TEST(RegionGrow, SeparatedClustersAndChain) {
  // seeds spaced 1 apart -> t = 1; second cluster 10 away
  Positions pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {13, 0, 0}, {14, 0, 0}};
  const auto out = region_grow_filter(oracle::cloud_at(pts), seg_of({1, 1, 1, 1, 1, 1}), {1, 1, 0, 0, 0, 0});
  EXPECT_EQ(out.membership, (std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0}));
  // exact-spacing chain reached end to end (<= comparison)
  Positions chain;
  for (int i = 0; i < 20; ++i) chain.push_back({0.5 * i, 0, 0});
  std::vector<std::uint8_t> seeds(20, 0);
  seeds[0] = seeds[1] = 1;
  EXPECT_EQ(region_grow_filter(oracle::cloud_at(chain), seg_of(std::vector<std::uint8_t>(20, 1)), seeds).count(), 20u);
}

TEST(RegionGrow, Errors) {
  const auto cloud = oracle::cloud_at({{0, 0, 0}, {1, 0, 0}});
  EXPECT_EQ(error_kind_of([&] { region_grow_filter(cloud, seg_of({1, 1}), {0, 0}); }), ErrorKind::argument);
  EXPECT_EQ(error_kind_of([&] { region_grow_filter(cloud, seg_of({1, 0}), {0, 1}); }), ErrorKind::argument);
}

TEST(RegionGrowProperty, EqualsUnionFindOracle) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Rng rng(200 + seed);
    const auto pts = random_points(150 + 150 * seed, rng, seed % 3 == 2);
    std::bernoulli_distribution member(0.5), seed_flag(0.02);
    std::vector<std::uint8_t> m(pts.size()), s(pts.size(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      m[i] = member(rng);
      if (m[i] && seed_flag(rng)) s[i] = 1;
    }
    if (seed % 4 == 0) std::fill(s.begin(), s.end(), 0);  // single-seed fallback
    const auto first = oracle::members_of(m).front();
    s[first] = 1;
    const auto out = region_grow_filter(oracle::cloud_at(pts), seg_of(m), s);
    const double t2 = oracle::region_grow_t2(pts, m, s);
    ASSERT_EQ(out.membership, oracle::region_grow(pts, m, s, t2)) << seed;
  }
}

namespace {

SynthScene post_scene() {
  SynthSpec spec;
  spec.objects = 3;
  spec.gaussians_per_object = 200;
  spec.views = 2;
  spec.holdout_views = 0;
  spec.width = spec.height = 48;
  spec.seed = 4;
  return synth_scene(spec);
}

}  // namespace

TEST(MaskProjection, FullFrameAndEmpty) {
  const auto s = post_scene();
  const auto& cam = s.cameras[0];
  std::vector<std::uint8_t> all(s.cloud.size(), 1);
  const auto table = build_blend_table(s.cloud, cam);
  const auto r = project_mask_to_gaussians(s.cloud, cam, Mask(cam.pixel_count(), 1), seg_of(all), &table);
  std::size_t visible = 0;
  for (const auto& p : project(s.cloud, cam)) {
    const long x = std::lround(p.mean.x()), y = std::lround(p.mean.y());
    if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) continue;
    const bool vis = table.weight_of(static_cast<std::size_t>(y * cam.width + x), p.gaussian_index) >= kMinAlpha;
    visible += vis;
    EXPECT_EQ(r.validated[p.gaussian_index], vis ? 1 : 0);
  }
  EXPECT_EQ(count_true(r.validated), visible);
  EXPECT_EQ(count_true(r.unwanted), 0u);
  EXPECT_EQ(error_kind_of([&] { project_mask_to_gaussians(s.cloud, cam, Mask(cam.pixel_count(), 0), seg_of(all)); }),
            ErrorKind::data);
}

TEST(MaskProjection, HalfFrameMatchesProjectedMeans) {
  const auto s = post_scene();
  const auto& cam = s.cameras[1];
  Mask left(cam.pixel_count(), 0);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width / 2; ++x) left[static_cast<std::size_t>(y * cam.width + x)] = 1;
  std::vector<std::uint8_t> members(s.cloud.size(), 0);
  for (std::size_t i = 0; i < members.size(); i += 2) members[i] = 1;
  const auto table = build_blend_table(s.cloud, cam);
  const auto r = project_mask_to_gaussians(s.cloud, cam, left, seg_of(members), &table);
  for (const auto& p : project(s.cloud, cam)) {
    const long x = std::lround(p.mean.x()), y = std::lround(p.mean.y());
    const bool inside = x >= 0 && y >= 0 && x < cam.width && y < cam.height;
    const bool vis = inside && table.weight_of(static_cast<std::size_t>(y * cam.width + x), p.gaussian_index) >= kMinAlpha;
    EXPECT_EQ(r.validated[p.gaussian_index], vis && x < cam.width / 2 && members[p.gaussian_index]);
    EXPECT_EQ(r.unwanted[p.gaussian_index], vis && x >= cam.width / 2);
  }
}

TEST(Postprocess, PointPipelineRemovesOutliersAndRecoversNeighbours) {
  Rng rng(9);
  auto pts = gaussian_blob(400, Eigen::Vector3d::Zero(), 1.0, rng);
  const std::size_t inliers = pts.size();
  for (int k = 0; k < 4; ++k) pts.push_back(Eigen::Vector3d(15.0 + 5 * k, -20.0 * (k % 2), 12.0));
  std::vector<std::uint8_t> raw(pts.size(), 1);
  for (std::size_t i = 0; i < inliers; i += 10) raw[i] = 0;  // withheld neighbours
  const auto r = postprocess(oracle::cloud_at(pts), seg_of(raw), PromptKind::points);
  for (std::size_t i = inliers; i < pts.size(); ++i) EXPECT_EQ(r.grown.membership[i], 0);
  const auto expect = oracle::ball_grow(pts, oracle::statistical_filter(pts, raw));
  EXPECT_EQ(r.grown.membership, expect);
  std::size_t recovered = 0;
  for (std::size_t i = 0; i < inliers; i += 10) recovered += r.grown.membership[i];
  EXPECT_GE(recovered, 36u);
}

TEST(Postprocess, MaskPipelineKeepsSeedsAndErrors) {
  const auto s = post_scene();
  const auto& cam = s.cameras[0];
  const auto stacks = synth_masks(s.cloud, s.labels, {cam}, Granularity::objects);
  const Mask& mask = stacks[0].mask(0);
  std::vector<std::uint8_t> raw(s.cloud.size(), 0);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = s.labels.gaussian_labels[i] == 1;
  MaskContext ctx{&cam, &mask, nullptr};
  const auto r = postprocess(s.cloud, seg_of(raw), PromptKind::mask, ctx);
  const auto proj = project_mask_to_gaussians(s.cloud, cam, mask, seg_of(raw));
  for (std::size_t i = 0; i < raw.size(); ++i)
    if (proj.validated[i]) EXPECT_EQ(r.grown.membership[i], 1);
  EXPECT_EQ(r.grown.stage, Stage::grown);
  try {
    postprocess(s.cloud, seg_of(std::vector<std::uint8_t>(s.cloud.size(), 0)), PromptKind::points);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_EQ(e.stage(), "filtering");
  }
  EXPECT_EQ(error_kind_of([&] { postprocess(s.cloud, seg_of(raw), PromptKind::mask); }), ErrorKind::argument);
}
