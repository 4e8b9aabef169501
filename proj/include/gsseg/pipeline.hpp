#pragma once

// Scene directories, the prompt -> match -> post inference path, and the two
// evaluation protocols (3D label IoU from point prompts, 2D mask propagation).

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsseg/distill.hpp"
#include "gsseg/eval.hpp"
#include "gsseg/masks.hpp"
#include "gsseg/match.hpp"
#include "gsseg/post.hpp"
#include "gsseg/prompt.hpp"
#include "gsseg/scene.hpp"
#include "gsseg/splat.hpp"

namespace gsseg {

/// Blend tables per view id, built on first use and shared across threads.
class TableCache {
public:
  std::shared_ptr<const BlendTable> get(const GaussianCloud& cloud, const Camera& cam) {
    {
      std::lock_guard lock(mutex_);
      auto it = tables_.find(cam.id);
      if (it != tables_.end()) return it->second;
    }
    auto table = std::make_shared<const BlendTable>(build_blend_table(cloud, cam));
    std::lock_guard lock(mutex_);
    return tables_.emplace(cam.id, std::move(table)).first->second;
  }

private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const BlendTable>> tables_;
};

struct SceneData {
  std::string name;
  GaussianCloud cloud;
  std::vector<Camera> cameras;
  std::vector<Camera> holdout;
  std::optional<GroundTruthLabels> labels;
  std::map<std::string, GuidanceFeatureMap> guidance;
  std::optional<Projector> projector;
  bool trained = false;
  std::shared_ptr<TableCache> tables = std::make_shared<TableCache>();

  /// Training or held-out camera by id; unknown ids are argument errors.
  const Camera& camera(const std::string& id) const {
    for (const auto& c : cameras)
      if (c.id == id) return c;
    for (const auto& c : holdout)
      if (c.id == id) return c;
    fail(ErrorKind::argument, "unknown view '" + id + "'");
  }

  void set_model(const TrainedModel& model) {
    require(static_cast<std::size_t>(model.features.rows()) == cloud.size(), ErrorKind::format,
            "trained features have " + std::to_string(model.features.rows()) + " rows, scene has " +
                std::to_string(cloud.size()) + " Gaussians");
    cloud.features = model.features;
    projector = model.projector;
    trained = true;
  }
};

// ---------------------------------------------------------------------------
// Scene directory layout:
//   scene.ply, cameras.json, [cameras_holdout.json], [labels.json],
//   [masks/<view>.gsten], [guidance/<view>.gsten], [features/ (trained sidecar)]

namespace layout {
inline std::filesystem::path ply(const std::filesystem::path& d) { return d / "scene.ply"; }
inline std::filesystem::path cameras(const std::filesystem::path& d) { return d / "cameras.json"; }
inline std::filesystem::path holdout(const std::filesystem::path& d) { return d / "cameras_holdout.json"; }
inline std::filesystem::path labels(const std::filesystem::path& d) { return d / "labels.json"; }
inline std::filesystem::path masks(const std::filesystem::path& d) { return d / "masks"; }
inline std::filesystem::path guidance(const std::filesystem::path& d) { return d / "guidance"; }
inline std::filesystem::path features(const std::filesystem::path& d) { return d / "features"; }
}  // namespace layout

inline std::map<std::string, GuidanceFeatureMap> load_guidance_dir(const std::filesystem::path& dir,
                                                                   const std::vector<Camera>& cams) {
  std::map<std::string, GuidanceFeatureMap> out;
  for (const auto& cam : cams) {
    const auto file = dir / (cam.id + ".gsten");
    if (std::filesystem::exists(file)) out.emplace(cam.id, load_guidance(file, cam));
  }
  return out;
}

/// Mask stacks for every camera; a view without a file is a format error.
inline std::vector<MaskStack> load_mask_dir(const std::filesystem::path& dir, const std::vector<Camera>& cams) {
  std::vector<MaskStack> out;
  for (const auto& cam : cams) {
    const auto file = dir / (cam.id + ".gsten");
    require(std::filesystem::exists(file), ErrorKind::format, "no mask stack for view " + cam.id + " in " + dir.string());
    out.push_back(load_stack(file, cam));
  }
  return out;
}

/// Loads a scene directory. Features come from `features_dir` if given, else
/// from <dir>/features when present; otherwise the scene is untrained.
inline SceneData load_scene(const std::filesystem::path& dir, const std::optional<std::filesystem::path>& features_dir = {},
                            std::size_t feature_dim = kDefaultFeatureDim) {
  require(std::filesystem::is_directory(dir), ErrorKind::argument, "scene directory not found: " + dir.string());
  SceneData s;
  s.name = dir.filename().string();
  if (s.name.empty()) s.name = dir.parent_path().filename().string();
  s.cloud = load_ply(layout::ply(dir), feature_dim);
  s.cameras = load_cameras(layout::cameras(dir));
  if (std::filesystem::exists(layout::holdout(dir))) s.holdout = load_cameras(layout::holdout(dir));
  if (std::filesystem::exists(layout::labels(dir))) {
    s.labels = load_labels(layout::labels(dir));
    require(s.labels->gaussian_labels.size() == s.cloud.size(), ErrorKind::format, "labels.json size does not match scene");
  }
  s.guidance = load_guidance_dir(layout::guidance(dir), s.cameras);
  const auto fdir = features_dir.value_or(layout::features(dir));
  if (features_dir || std::filesystem::exists(fdir / "manifest.json")) s.set_model(load_trained(fdir));
  return s;
}

struct SynthOutput {
  SynthScene scene;
  std::vector<MaskStack> stacks;
  std::vector<GuidanceFeatureMap> guidance;
};

inline SynthOutput synth_all(const SynthSpec& spec, Granularity level = Granularity::subparts, bool coarse = false) {
  SynthOutput out;
  out.scene = synth_scene(spec);
  out.stacks = synth_masks(out.scene.cloud, out.scene.labels, out.scene.cameras, level, coarse);
  GuidanceSynthSpec g;
  g.channels = 32;
  g.seed = spec.seed + 7;
  out.guidance = synth_guidance(out.scene.cloud, out.scene.labels, out.scene.cameras, g);
  return out;
}

inline void write_scene_dir(const std::filesystem::path& dir, const SynthSpec& spec, const SynthOutput& s) {
  std::filesystem::create_directories(layout::masks(dir));
  std::filesystem::create_directories(layout::guidance(dir));
  save_ply(s.scene.cloud, layout::ply(dir));
  save_cameras(s.scene.cameras, layout::cameras(dir));
  save_cameras(s.scene.holdout_cameras, layout::holdout(dir));
  save_labels(s.scene.labels, layout::labels(dir));
  for (const auto& st : s.stacks) save_stack(st, layout::masks(dir) / (st.view_id() + ".gsten"));
  for (const auto& g : s.guidance) save_guidance(g, layout::guidance(dir) / (g.view_id + ".gsten"));
  write_file(dir / "spec.json", synth_spec_to_json(spec).dump(2));
}

/// In-memory equivalent of writing and loading a synthetic scene directory.
inline SceneData scene_from_synth(const SynthOutput& s, std::string name = "synthetic") {
  SceneData d;
  d.name = std::move(name);
  d.cloud = s.scene.cloud;
  d.cameras = s.scene.cameras;
  d.holdout = s.scene.holdout_cameras;
  d.labels = s.scene.labels;
  for (const auto& g : s.guidance) d.guidance.emplace(g.view_id, g);
  return d;
}

/// Trained-like features without training: a random unit embedding per label
/// plus isotropic noise. Used for latency benchmarks at scales where training
/// is not the point.
inline FeatureMatrix synthesize_features(const GroundTruthLabels& labels, std::size_t dim, double noise, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto c = static_cast<Eigen::Index>(dim);
  std::vector<Eigen::RowVectorXd> embed;
  for (int l = 0; l <= labels.max_label(); ++l) {
    Eigen::RowVectorXd v(c);
    for (Eigen::Index i = 0; i < c; ++i) v[i] = gauss(rng);
    embed.push_back(v.normalized());
  }
  FeatureMatrix f(static_cast<Eigen::Index>(labels.gaussian_labels.size()), c);
  for (std::size_t i = 0; i < labels.gaussian_labels.size(); ++i) {
    auto row = f.row(static_cast<Eigen::Index>(i));
    row = embed[static_cast<std::size_t>(labels.gaussian_labels[i])];
    for (Eigen::Index k = 0; k < c; ++k) row[k] += noise * gauss(rng);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Inference

struct RunOptions {
  bool postprocess = true;
};

struct SegmentationRun {
  Segmentation raw;
  Segmentation filtered;
  Segmentation final;
  Timing timing;
  std::string query_mode;  ///< points | kmeans | pooled | guidance_kmeans
  std::size_t query_count = 0;

  nlohmann::json summary() const {
    return {{"counts", {{"raw", raw.count()}, {"filtered", filtered.count()}, {"grown", final.count()}}},
            {"timing", timing.to_json()},
            {"query_mode", query_mode},
            {"query_count", query_count}};
  }
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Prompt -> queries -> scores -> raw segmentation -> post-processing.
inline SegmentationRun run_segmentation(const SceneData& scene, const Prompt& prompt, const RunOptions& opt = {}) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  require(scene.trained, ErrorKind::state, "scene '" + scene.name + "' has no trained features");
  const Camera& cam = scene.camera(prompt.view);
  validate_prompt(prompt, cam);

  SegmentationRun run;
  std::shared_ptr<const BlendTable> table;
  try {
    table = scene.tables->get(scene.cloud, cam);
    const FeatureMap rendered = render_features(*table, scene.cloud.features);
    QuerySet qs;
    switch (prompt.kind) {
      case PromptKind::points:
        qs = point_queries(rendered, prompt);
        run.query_mode = "points";
        break;
      case PromptKind::scribble:
      case PromptKind::mask:
        qs = kmeans_queries(rendered, prompt);
        run.query_mode = "kmeans";
        break;
      case PromptKind::sam_based: {
        auto g = scene.guidance.find(cam.id);
        require(g != scene.guidance.end(), ErrorKind::state, "no guidance features for view " + cam.id);
        require(scene.projector.has_value(), ErrorKind::state, "trained model has no guidance projector");
        const auto sam = sam_based_queries(project_guidance(g->second, *scene.projector), g->second, rendered,
                                           prompt.positive_mask, prompt.config);
        qs = sam.queries;
        run.query_mode = sam.accepted_pooled_query ? "pooled" : "guidance_kmeans";
        break;
      }
    }
    run.query_count = qs.positives.size() + qs.negatives.size();
    run.raw = select(score(scene.cloud.features, qs), qs.metric);
    run.raw.stage = Stage::raw;
    run.raw.prompt_id = prompt.id;
  } catch (const Error& e) {
    throw Error(e.kind(), e.what(), "retrieving");
  }
  run.timing.retrieving_ms = detail::elapsed_ms(start);

  if (!opt.postprocess) {
    run.filtered = run.raw;
    run.final = run.raw;
  } else {
    MaskContext ctx;
    if (uses_mask_postprocess(prompt.kind)) {
      ctx.camera = &cam;
      ctx.mask = &prompt.positive_mask;
      ctx.table = table.get();
    }
    const auto post = postprocess(scene.cloud, run.raw, prompt.kind, ctx);
    run.filtered = post.filtered;
    run.final = post.grown;
    run.timing.filtering_ms = post.filtering_ms;
    run.timing.growing_ms = post.growing_ms;
  }
  run.filtered.prompt_id = run.final.prompt_id = prompt.id;
  run.timing.total_ms = detail::elapsed_ms(start);
  return run;
}

// ---------------------------------------------------------------------------
// Evaluation protocols

/// Pixels where `label` dominates the full render of `cam`.
inline Mask visible_label_mask(const SceneData& scene, const Camera& cam, int label) {
  const auto table = scene.tables->get(scene.cloud, cam);
  const auto dense = dominant_labels(*table, *scene.labels);
  Mask m(cam.pixel_count(), 0);
  for (std::size_t p = 0; p < m.size(); ++p) m[p] = dense.label[p] == label ? 1 : 0;
  return m;
}

/// Training view where the label covers the most pixels, with that mask.
inline std::pair<const Camera*, Mask> best_view_for(const SceneData& scene, int label) {
  const Camera* best = nullptr;
  Mask best_mask;
  std::size_t best_area = 0;
  for (const auto& cam : scene.cameras) {
    Mask m = visible_label_mask(scene, cam, label);
    const std::size_t area = count_true(m);
    if (area > best_area) {
      best_area = area;
      best = &cam;
      best_mask = std::move(m);
    }
  }
  return {best, std::move(best_mask)};
}

/// Mask pixel closest to the mask's centroid (ties: lowest pixel index).
inline Pixel mask_center_pixel(const Mask& mask, int width) {
  double sx = 0.0, sy = 0.0, n = 0.0;
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (mask[p]) {
      sx += static_cast<double>(p % static_cast<std::size_t>(width));
      sy += static_cast<double>(p / static_cast<std::size_t>(width));
      n += 1.0;
    }
  require(n > 0.0, ErrorKind::argument, "empty mask has no center");
  sx /= n;
  sy /= n;
  Pixel best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    const double x = static_cast<double>(p % static_cast<std::size_t>(width));
    const double y = static_cast<double>(p / static_cast<std::size_t>(width));
    const double d = (x - sx) * (x - sx) + (y - sy) * (y - sy);
    if (d < best_d) {
      best_d = d;
      best = {static_cast<int>(x), static_cast<int>(y)};
    }
  }
  return best;
}

inline std::vector<int> object_labels(const GroundTruthLabels& labels) {
  std::vector<int> out;
  for (int l = 1; l <= labels.max_label(); ++l)
    if (labels.has_label(l)) out.push_back(l);
  return out;
}

/// One point prompt per object at its visible-mask center in its best view;
/// scores the final segmentation against the object's Gaussian set.
inline EvalReport eval_labels3d(const SceneData& scene) {
  require(scene.labels.has_value(), ErrorKind::argument, "labels3d evaluation needs ground-truth labels");
  EvalReport report;
  report.protocol = "labels3d";
  report.scene = {{"name", scene.name}, {"gaussians", scene.cloud.size()}, {"views", scene.cameras.size()}};
  for (int label : object_labels(*scene.labels)) {
    const auto [cam, mask] = best_view_for(scene, label);
    ObjectScore score{label, 0.0, 0};
    if (cam) {
      Prompt p;
      p.id = "object" + std::to_string(label);
      p.view = cam->id;
      p.kind = PromptKind::points;
      p.positive_points = {mask_center_pixel(mask, cam->width)};
      const auto run = run_segmentation(scene, p);
      score.label_iou = gaussian_label_iou(run.final.membership, *scene.labels, label);
      score.members = run.final.count();
      report.timings.push_back(run.timing);
    }
    report.objects.push_back(score);
  }
  return report;
}

/// One mask prompt per object (its visible mask in its best training view);
/// the final segmentation is rendered into every held-out view and compared
/// with the object's own rendered mask there. Views where the object is not
/// rendered at all are skipped.
inline EvalReport eval_propagate(const SceneData& scene) {
  require(scene.labels.has_value(), ErrorKind::argument, "propagation evaluation needs ground-truth labels");
  const auto& views = scene.holdout.empty() ? scene.cameras : scene.holdout;
  EvalReport report;
  report.protocol = "propagate";
  report.scene = {{"name", scene.name}, {"gaussians", scene.cloud.size()}, {"views", views.size()}};
  for (int label : object_labels(*scene.labels)) {
    const auto [cam, mask] = best_view_for(scene, label);
    if (!cam) continue;
    Prompt p;
    p.id = "object" + std::to_string(label);
    p.view = cam->id;
    p.kind = PromptKind::mask;
    p.positive_mask = mask;
    const auto run = run_segmentation(scene, p);
    report.timings.push_back(run.timing);
    report.objects.push_back({label, gaussian_label_iou(run.final.membership, *scene.labels, label), run.final.count()});
    const auto gt_members = scene.labels->membership(label);
    for (const auto& v : views) {
      const Mask gt = render_membership_mask(scene.cloud, gt_members, v);
      if (count_true(gt) == 0) continue;
      const Mask pred = render_membership_mask(scene.cloud, run.final.membership, v);
      report.views.push_back({"object" + std::to_string(label) + "/" + v.id, mask_iou(pred, gt), pixel_acc(pred, gt)});
    }
  }
  return report;
}

}  // namespace gsseg
