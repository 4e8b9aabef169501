#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace gsseg;
using namespace gsseg::testing;

namespace {

Mask random_mask(std::size_t n, double p, Rng& rng) {
  std::bernoulli_distribution b(p);
  Mask m(n);
  for (auto& v : m) v = b(rng);
  return m;
}

SynthOutput small_synth(int objects, std::uint64_t seed) {
  SynthSpec spec;
  spec.objects = objects;
  spec.gaussians_per_object = 200;
  spec.views = 4;
  spec.holdout_views = 2;
  spec.width = spec.height = 48;
  spec.feature_dim = 16;
  spec.seed = seed;
  return synth_all(spec, Granularity::objects);
}

/// Scene whose features are label embeddings plus small noise.
SceneData separable_scene(int objects, std::uint64_t seed) {
  auto s = scene_from_synth(small_synth(objects, seed));
  s.cloud.features = synthesize_features(*s.labels, 16, 0.02, seed);
  s.trained = true;
  return s;
}

}  // namespace

TEST(MaskMetrics, IdenticalAndDisjoint) {
  Rng rng(1);
  const Mask a = random_mask(64, 0.5, rng);
  EXPECT_EQ(mask_iou(a, a), 1.0);
  EXPECT_EQ(pixel_acc(a, a), 1.0);
  Mask left(64, 0), right(64, 0);
  for (int i = 0; i < 64; ++i) (i % 8 < 4 ? left : right)[static_cast<std::size_t>(i)] = 1;
  EXPECT_EQ(mask_iou(left, right), 0.0);
  EXPECT_EQ(pixel_acc(left, right), 0.0);
  EXPECT_EQ(mask_iou(Mask(9, 0), Mask(9, 0)), 1.0);
  EXPECT_EQ(error_kind_of([] { mask_iou(Mask(3), Mask(4)); }), ErrorKind::argument);
}

TEST(MaskMetrics, MatchSetArithmeticOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Mask a = random_mask(1024, 0.1 + 0.015 * static_cast<double>(seed), rng);
    const Mask b = random_mask(1024, 0.3, rng);
    std::set<std::size_t> sa, sb, inter, uni;
    for (std::size_t i = 0; i < 1024; ++i) {
      if (a[i]) sa.insert(i);
      if (b[i]) sb.insert(i);
    }
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(inter, inter.end()));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(uni, uni.end()));
    EXPECT_EQ(mask_iou(a, b), static_cast<double>(inter.size()) / static_cast<double>(uni.size()));
    EXPECT_EQ(mask_iou(a, b), mask_iou(b, a));
    std::size_t sym_diff = uni.size() - inter.size();
    EXPECT_EQ(pixel_acc(a, b), static_cast<double>(1024 - sym_diff) / 1024.0);
    Mask not_a(1024);
    for (std::size_t i = 0; i < 1024; ++i) not_a[i] = !a[i];
    EXPECT_EQ(pixel_acc(a, not_a), 0.0);
  }
}

TEST(MembershipMask, EmptyFullAndSingleObject) {
  const auto synth = small_synth(1, 3);
  const auto& cloud = synth.scene.cloud;
  const auto& cam = synth.scene.cameras[0];
  EXPECT_EQ(count_true(render_membership_mask(cloud, std::vector<std::uint8_t>(cloud.size(), 0), cam)), 0u);
  const auto table = build_blend_table(cloud, cam);
  const auto full = render_membership_mask(cloud, std::vector<std::uint8_t>(cloud.size(), 1), cam);
  for (std::size_t p = 0; p < full.size(); ++p) EXPECT_EQ(full[p], table.alpha[p] >= 0.5 ? 1 : 0);
  // single object: rendered mask against the ground-truth object mask
  const auto stacks = synth_masks(cloud, synth.scene.labels, {cam}, Granularity::objects);
  const auto mask = render_membership_mask(cloud, synth.scene.labels.membership(1), cam);
  EXPECT_GE(mask_iou(mask, stacks[0].mask(0)), 0.95);
}

TEST(LabelIou, ExactEmptyAndHalfOverlap) {
  GroundTruthLabels labels{{1, 1, 1, 1, 2, 2, 2, 2, 0, 0}};
  EXPECT_EQ(gaussian_label_iou({1, 1, 1, 1, 0, 0, 0, 0, 0, 0}, labels, 1), 1.0);
  EXPECT_EQ(gaussian_label_iou(std::vector<std::uint8_t>(10, 0), labels, 1), 0.0);
  // k = 2 shared, union 6
  EXPECT_DOUBLE_EQ(gaussian_label_iou({0, 0, 1, 1, 1, 1, 0, 0, 0, 0}, labels, 1), 1.0 / 3.0);
  EXPECT_EQ(error_kind_of([&] { gaussian_label_iou(std::vector<std::uint8_t>(10, 0), labels, 7); }), ErrorKind::argument);
}

TEST(Timing, PhasesWithinTotalAndSkippedStagesZero) {
  const auto scene = separable_scene(2, 1);
  Prompt p;
  p.view = scene.cameras[0].id;
  p.positive_points = {mask_center_pixel(best_view_for(scene, 1).second, scene.cameras[0].width)};
  p.view = best_view_for(scene, 1).first->id;
  const auto run = run_segmentation(scene, p);
  const auto& t = run.timing;
  EXPECT_GT(t.total_ms, 0.0);
  EXPECT_LE(t.retrieving_ms + t.filtering_ms + t.growing_ms, t.total_ms + 1e-9);
  const auto raw_only = run_segmentation(scene, p, RunOptions{false});
  EXPECT_EQ(raw_only.timing.filtering_ms, 0.0);
  EXPECT_EQ(raw_only.timing.growing_ms, 0.0);
  EXPECT_EQ(raw_only.final.membership, raw_only.raw.membership);
}

TEST(Timing, RepeatedRunStatistics) {
  EvalReport r;
  r.retrieval_repeats_ms = {1.0, 2.0, 3.0, 4.0};
  const auto [mean, var] = r.retrieval_stats();
  EXPECT_DOUBLE_EQ(mean, 2.5);
  EXPECT_DOUBLE_EQ(var, 1.25);
  const auto j = r.to_json();
  EXPECT_EQ(j["retrieval_repeats"]["runs"], 4);
  EXPECT_DOUBLE_EQ(j["retrieval_repeats"]["variance_ms2"].get<double>(), 1.25);
}

TEST(Report, AggregatesAndCsv) {
  EvalReport r;
  r.views = {{"a", 0.5, 0.9}, {"b", 1.0, 0.7}};
  r.objects = {{1, 0.25, 10}, {2, 0.75, 12}};
  EXPECT_DOUBLE_EQ(r.miou(), 0.75);
  EXPECT_DOUBLE_EQ(r.macc(), 0.8);
  EXPECT_DOUBLE_EQ(r.mean_label_iou(), 0.5);
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "kind,key,iou,acc");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

// The evaluation harnesses run prompt -> match -> post -> render unattended.
TEST(Protocols, SeparableFeaturesScoreHigh) {
  const auto scene = separable_scene(3, 2);
  const auto labels3d = eval_labels3d(scene);
  ASSERT_EQ(labels3d.objects.size(), 3u);
  for (const auto& o : labels3d.objects) EXPECT_GE(o.label_iou, 0.9) << "label " << o.label;
  const auto prop = eval_propagate(scene);
  EXPECT_FALSE(prop.views.empty());
  EXPECT_GE(prop.miou(), 0.9);
  EXPECT_EQ(prop.timings.size(), 3u);
}

TEST(Protocols, UntrainedSceneIsStateError) {
  auto scene = separable_scene(2, 0);
  scene.trained = false;
  EXPECT_EQ(error_kind_of([&] { eval_labels3d(scene); }), ErrorKind::state);
}
