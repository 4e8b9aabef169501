#include <gtest/gtest.h>

#include <map>
#include <set>

#include "test_util.hpp"

using namespace gsseg;
using namespace gsseg::testing;

namespace {

Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m(static_cast<std::size_t>(w * h), 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m[static_cast<std::size_t>(y * w + x)] = 1;
  return m;
}

MaskStack random_stack(int w, int h, int masks, Rng& rng) {
  std::uniform_int_distribution<int> ux(0, w), uy(0, h);
  std::vector<Mask> ms;
  for (int m = 0; m < masks; ++m) {
    int x0 = ux(rng), x1 = ux(rng), y0 = uy(rng), y1 = uy(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    ms.push_back(rect_mask(w, h, x0, y0, x1, y1));
  }
  return MaskStack("v", w, h, std::move(ms));
}

/// Set-arithmetic definition: IoU of the sets of masks containing each pixel,
/// empty intersection -> -1, pixel outside every mask -> 0.
double corr_oracle(const MaskStack& s, Pixel a, Pixel b) {
  std::set<std::size_t> sa, sb;
  for (std::size_t m = 0; m < s.mask_count(); ++m) {
    if (s.mask(m)[s.pixel_index(a)]) sa.insert(m);
    if (s.mask(m)[s.pixel_index(b)]) sb.insert(m);
  }
  if (sa.empty() || sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (auto m : sa) inter += sb.count(m);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return inter == 0 ? -1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST(Stack, FullFrameMaskMembership) {
  const MaskStack s("v", 5, 4, {Mask(20, 1)});
  for (std::size_t p = 0; p < 20; ++p) {
    ASSERT_EQ(s.membership(p).size(), 1u);
    EXPECT_EQ(s.membership(p)[0], 0u);
  }
  EXPECT_EQ(s.covered_pixels().size(), 20u);
}

TEST(Stack, DisjointHalves) {
  const MaskStack s("v", 6, 2, {rect_mask(6, 2, 0, 0, 3, 2), rect_mask(6, 2, 3, 0, 6, 2)});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 6; ++x) {
      const auto m = s.membership(Pixel{x, y});
      ASSERT_EQ(m.size(), 1u);
      EXPECT_EQ(m[0], x < 3 ? 0u : 1u);
    }
}

TEST(Stack, MembershipIndexMatchesMasks) {
  Rng rng(4);
  const auto s = random_stack(9, 7, 12, rng);
  for (std::size_t p = 0; p < s.pixel_count(); ++p) {
    std::vector<std::uint32_t> expect;
    for (std::size_t m = 0; m < s.mask_count(); ++m)
      if (s.mask(m)[p]) expect.push_back(static_cast<std::uint32_t>(m));
    const auto got = s.membership(p);
    EXPECT_EQ(std::vector<std::uint32_t>(got.begin(), got.end()), expect);
  }
}

TEST(Stack, SixteenNestedMasksRoundTripBitExactly) {
  std::vector<Mask> ms;
  for (int k = 0; k < 16; ++k) ms.push_back(rect_mask(40, 30, k, k / 2, 40 - k, 30 - k / 2));
  const MaskStack s("view3", 40, 30, ms);
  const auto dir = temp_dir("stack");
  save_stack(s, dir / "m.gsten");
  const auto bytes = read_file(dir / "m.gsten");
  const auto back = load_stack(dir / "m.gsten", axis_camera(40, 30, 10.0, "view3"));
  EXPECT_EQ(back.masks(), s.masks());
  save_stack(back, dir / "m2.gsten");
  EXPECT_EQ(read_file(dir / "m2.gsten"), bytes);
  // header: magic, version 1, dtype u8, three dims
  EXPECT_EQ(bytes.substr(0, 5), "GSTEN");
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(bytes[6], 0);
  EXPECT_EQ(bytes[7], 3);
  EXPECT_EQ(bytes.size(), 8u + 12u + 16u * 40u * 30u);
}

TEST(Stack, CameraSizeMismatchIsFormatError) {
  const auto dir = temp_dir("stack");
  save_stack(MaskStack("v", 8, 8, {Mask(64, 1)}), dir / "m.gsten");
  EXPECT_EQ(error_kind_of([&] { load_stack(dir / "m.gsten", axis_camera(8, 9, 10.0, "v")); }), ErrorKind::format);
  EXPECT_EQ(error_kind_of([] { MaskStack("v", 4, 4, {Mask(15, 0)}); }), ErrorKind::format);
}

TEST(Corr, WorkedExamples) {
  // A covers columns 0-3, B covers columns 2-3, C covers columns 4-5.
  const MaskStack s("v", 6, 1, {rect_mask(6, 1, 0, 0, 4, 1), rect_mask(6, 1, 2, 0, 4, 1), rect_mask(6, 1, 4, 0, 6, 1)});
  EXPECT_DOUBLE_EQ(corr({0, 0}, {1, 0}, s), 1.0);   // both only in A
  EXPECT_DOUBLE_EQ(corr({2, 0}, {0, 0}, s), 0.5);   // {A,B} vs {A}
  EXPECT_DOUBLE_EQ(corr({0, 0}, {4, 0}, s), -1.0);  // {A} vs {C}
  const MaskStack partial("v", 3, 1, {rect_mask(3, 1, 0, 0, 1, 1)});
  EXPECT_DOUBLE_EQ(corr({1, 0}, {2, 0}, partial), 0.0);
  EXPECT_DOUBLE_EQ(corr({0, 0}, {2, 0}, partial), 0.0);
}

// Exhaustive comparison against the set definition on 8x8 images.
TEST(Corr, MatchesExhaustiveSetOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int masks = 1 + static_cast<int>(seed % 16);
    const auto s = random_stack(8, 8, masks, rng);
    for (int a = 0; a < 64; ++a)
      for (int b = 0; b < 64; ++b) {
        const Pixel pa{a % 8, a / 8}, pb{b % 8, b / 8};
        ASSERT_DOUBLE_EQ(corr(pa, pb, s), corr_oracle(s, pa, pb)) << "seed " << seed;
      }
  }
}

TEST(CorrProperty, SymmetricAndSelfOne) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(100 + seed);
    const auto s = random_stack(10, 6, 1 + static_cast<int>(seed % 10), rng);
    for (std::size_t a = 0; a < s.pixel_count(); ++a) {
      if (!s.membership(a).empty()) ASSERT_DOUBLE_EQ(corr(s.pixel_at(a), s.pixel_at(a), s), 1.0);
      for (std::size_t b = 0; b < s.pixel_count(); b += 3) {
        const double v = corr(s.pixel_at(a), s.pixel_at(b), s);
        ASSERT_DOUBLE_EQ(v, corr(s.pixel_at(b), s.pixel_at(a), s));
        ASSERT_GE(v, -1.0);
        ASSERT_LE(v, 1.0);
      }
    }
  }
}

TEST(Pairs, FullMaskGivesOnlyOnes) {
  const MaskStack s("v", 7, 5, {Mask(35, 1)});
  Rng rng(1);
  for (const auto& p : sample_pairs(s, 500, rng)) EXPECT_EQ(p.corr, 1.0);
}

TEST(Pairs, DisjointMasksGiveOnlyPlusMinusOne) {
  const MaskStack s("v", 8, 8, {rect_mask(8, 8, 0, 0, 4, 8), rect_mask(8, 8, 4, 0, 8, 8)});
  Rng rng(2);
  std::set<double> seen;
  for (const auto& p : sample_pairs(s, 5000, rng)) {
    seen.insert(p.corr);
    EXPECT_EQ(p.corr, corr_oracle(s, p.p1, p.p2));
    EXPECT_TRUE(s.contains(p.p1) && s.contains(p.p2));
  }
  EXPECT_EQ(seen, (std::set<double>{-1.0, 1.0}));
}

TEST(Pairs, PixelsComeFromMaskSupport) {
  Rng srng(8);
  const auto s = random_stack(12, 9, 4, srng);
  Rng rng(3);
  for (const auto& p : sample_pairs(s, 2000, rng)) {
    EXPECT_FALSE(s.membership(p.p1).empty());
    EXPECT_FALSE(s.membership(p.p2).empty());
  }
}

TEST(Pairs, DeterministicUnderSeed) {
  Rng srng(8);
  const auto s = random_stack(12, 9, 6, srng);
  Rng a(42), b(42);
  const auto pa = sample_pairs(s, 300, a), pb = sample_pairs(s, 300, b);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].p1, pb[i].p1);
    EXPECT_EQ(pa[i].p2, pb[i].p2);
  }
}

TEST(Pairs, EmptyStackAndZeroCountAreErrors) {
  Rng rng(0);
  const MaskStack empty("v", 4, 4, {Mask(16, 0)});
  EXPECT_EQ(error_kind_of([&] { sample_pairs(empty, 10, rng); }), ErrorKind::argument);
  const MaskStack none("v", 4, 4, {});
  EXPECT_EQ(error_kind_of([&] { sample_pairs(none, 10, rng); }), ErrorKind::argument);
  const MaskStack full("v", 4, 4, {Mask(16, 1)});
  EXPECT_EQ(error_kind_of([&] { sample_pairs(full, 0, rng); }), ErrorKind::argument);
}

// Monte-Carlo mean inside one mask converges to the exhaustive mean.
TEST(Pairs, MonteCarloMeanConverges) {
  Rng srng(11);
  const auto s = random_stack(8, 8, 6, srng);
  for (std::size_t m = 0; m < s.mask_count(); ++m) {
    const auto& px = s.mask_pixels(m);
    if (px.empty()) continue;
    double exact = 0.0;
    for (auto a : px)
      for (auto b : px) exact += corr_oracle(s, s.pixel_at(a), s.pixel_at(b));
    exact /= static_cast<double>(px.size() * px.size());
    Rng rng(m);
    double mc = 0.0;
    const auto pairs = sample_pairs_in_mask(s, m, 100000, rng);
    for (const auto& p : pairs) mc += p.corr;
    mc /= static_cast<double>(pairs.size());
    EXPECT_NEAR(mc, exact, 0.02) << "mask " << m;
  }
}

TEST(Guidance, TensorRoundTripAndDownsample) {
  GuidanceFeatureMap g;
  g.view_id = "v";
  g.rows = 2;
  g.cols = 3;
  g.image_width = 12;
  g.image_height = 8;
  g.values = FeatureMatrix::Random(6, 5);
  const auto back = GuidanceFeatureMap::from_tensor("v", g.to_tensor(), 12, 8);
  EXPECT_LT((back.values - g.values).cwiseAbs().maxCoeff(), 1e-6);
  // cell (r, c) samples pixel (floor((c + 0.5) * 4), floor((r + 0.5) * 4))
  EXPECT_EQ(g.cell_center(0), (Pixel{2, 2}));
  EXPECT_EQ(g.cell_center(5), (Pixel{10, 6}));
  Mask m(96, 0);
  m[6 * 12 + 10] = 1;
  EXPECT_EQ(g.downsample(m), (Mask{0, 0, 0, 0, 0, 1}));
  EXPECT_EQ(error_kind_of([&] { GuidanceFeatureMap::from_tensor("v", g.to_tensor(), 2, 1); }), ErrorKind::format);
  auto bad = g.to_tensor();
  bad.f32[3] = std::numeric_limits<float>::infinity();
  EXPECT_EQ(error_kind_of([&] { GuidanceFeatureMap::from_tensor("v", bad, 12, 8); }), ErrorKind::data);
}

namespace {

SynthScene small_scene(int objects, std::uint64_t seed = 0) {
  SynthSpec spec;
  spec.objects = objects;
  spec.gaussians_per_object = 150;
  spec.views = 3;
  spec.holdout_views = 0;
  spec.width = spec.height = 32;
  spec.seed = seed;
  return synth_scene(spec);
}

}  // namespace

TEST(SynthMasks, SingleObjectOneMaskEqualToCoverage) {
  const auto s = small_scene(1);
  const auto stacks = synth_masks(s.cloud, s.labels, s.cameras, Granularity::objects);
  ASSERT_EQ(stacks.size(), s.cameras.size());
  for (std::size_t v = 0; v < stacks.size(); ++v) {
    ASSERT_EQ(stacks[v].mask_count(), 1u);
    const auto table = build_blend_table(s.cloud, s.cameras[v]);
    for (std::size_t p = 0; p < table.pixel_count(); ++p)
      EXPECT_EQ(stacks[v].mask(0)[p], table.alpha[p] >= 0.5 ? 1 : 0);
  }
}

TEST(SynthMasks, CoarseLevelAddsUnions) {
  const auto s = small_scene(3);
  const auto stacks = synth_masks(s.cloud, s.labels, s.cameras, Granularity::objects, true);
  for (const auto& st : stacks) EXPECT_GE(st.mask_count(), 4u);
  const auto parts = synth_masks(s.cloud, s.labels, s.cameras, Granularity::parts);
  for (const auto& st : parts) EXPECT_GE(st.mask_count(), 4u);
}

// Object masks equal the per-pixel argmax of summed blend weight per label.
TEST(SynthMasks, ObjectMasksFollowBlendWeightArgmax) {
  const auto s = small_scene(3, 5);
  const auto stacks = synth_masks(s.cloud, s.labels, s.cameras, Granularity::objects);
  for (std::size_t v = 0; v < stacks.size(); ++v) {
    const auto table = build_blend_table(s.cloud, s.cameras[v]);
    std::map<int, Mask> expect;
    for (std::size_t p = 0; p < table.pixel_count(); ++p) {
      if (table.alpha[p] < 0.5) continue;
      std::map<int, double> sum;
      const auto ids = table.contributors(p);
      const auto ws = table.contributor_weights(p);
      for (std::size_t k = 0; k < ids.size(); ++k) sum[s.labels.gaussian_labels[ids[k]]] += ws[k];
      int best = 0;
      double bw = -1.0;
      for (auto [l, w] : sum)
        if (w > bw) bw = w, best = l;
      auto& m = expect[best];
      if (m.empty()) m.assign(table.pixel_count(), 0);
      m[p] = 1;
    }
    std::vector<Mask> expect_list;
    for (auto& [l, m] : expect) expect_list.push_back(m);
    EXPECT_EQ(stacks[v].masks(), expect_list) << "view " << v;
  }
}

TEST(SynthMasks, FinerLevelsNestInsideObjects) {
  const auto s = small_scene(2, 3);
  const auto coarse = synth_masks(s.cloud, s.labels, s.cameras, Granularity::objects);
  const auto fine = synth_masks(s.cloud, s.labels, s.cameras, Granularity::subparts);
  for (std::size_t v = 0; v < fine.size(); ++v) {
    EXPECT_GT(fine[v].mask_count(), coarse[v].mask_count());
    // union of all masks is unchanged; every mask lies inside one object mask
    EXPECT_EQ(fine[v].covered_pixels(), coarse[v].covered_pixels());
    for (const auto& m : fine[v].masks()) {
      bool inside_one = false;
      for (const auto& o : coarse[v].masks()) {
        bool inside = true;
        for (std::size_t p = 0; p < m.size(); ++p) inside &= !m[p] || o[p];
        inside_one |= inside;
      }
      EXPECT_TRUE(inside_one);
    }
  }
}

TEST(SynthGuidance, ShapesAndSameObjectSimilarity) {
  const auto s = small_scene(2, 1);
  GuidanceSynthSpec spec;
  spec.channels = 16;
  const auto maps = synth_guidance(s.cloud, s.labels, s.cameras, spec);
  ASSERT_EQ(maps.size(), s.cameras.size());
  for (const auto& g : maps) {
    EXPECT_EQ(g.rows, 8);
    EXPECT_EQ(g.cols, 8);
    EXPECT_EQ(g.channels(), 16u);
    EXPECT_TRUE(g.values.allFinite());
  }
  const auto again = synth_guidance(s.cloud, s.labels, s.cameras, spec);
  EXPECT_EQ(again[0].values, maps[0].values);
}
