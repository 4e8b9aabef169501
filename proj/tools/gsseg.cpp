// gsseg command-line entry point: synth, extract-check, train, segment, eval,
// serve, bench. Exit codes: 0 ok, 2 usage/validation, 3 state, 4 data/format.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gsseg/gsseg.hpp"
#include "gsseg/service.hpp"

namespace fs = std::filesystem;
using namespace gsseg;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument:
    case ErrorKind::config: return 2;
    case ErrorKind::state: return 3;
    case ErrorKind::format:
    case ErrorKind::data: return 4;
    case ErrorKind::internal: return 1;
  }
  return 1;
}

/// Usage errors name the offending flag.
void need_dir(const std::string& flag, const fs::path& p) {
  require(!p.empty(), ErrorKind::argument, flag + ": required");
  require(fs::is_directory(p), ErrorKind::argument, flag + ": directory not found: " + p.string());
}

void need_file(const std::string& flag, const fs::path& p) {
  require(!p.empty(), ErrorKind::argument, flag + ": required");
  require(fs::is_regular_file(p), ErrorKind::argument, flag + ": file not found: " + p.string());
}

nlohmann::json read_json(const std::string& flag, const fs::path& p) {
  need_file(flag, p);
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, flag + ": " + p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path spec, out;
  std::optional<std::uint64_t> seed;
  int granularity = 3;
  bool coarse = false;
};

int run_synth(const SynthArgs& a) {
  SynthSpec spec;
  if (!a.spec.empty()) spec = synth_spec_from_json(read_json("--spec", a.spec));
  if (a.seed) spec.seed = *a.seed;
  require(a.granularity >= 1 && a.granularity <= 3, ErrorKind::argument, "--granularity: must be 1, 2 or 3");
  require(!a.out.empty(), ErrorKind::argument, "--out: required");
  const auto s = synth_all(spec, static_cast<Granularity>(a.granularity), a.coarse);
  write_scene_dir(a.out, spec, s);
  std::cout << "wrote " << a.out.string() << ": " << s.scene.cloud.size() << " Gaussians, " << s.scene.cameras.size()
            << " views, " << s.scene.holdout_cameras.size() << " held-out views\n";
  return 0;
}

struct CheckArgs {
  fs::path scene, masks, guidance;
};

int run_extract_check(const CheckArgs& a) {
  need_dir("--scene", a.scene);
  const auto cams = load_cameras(layout::cameras(a.scene));
  const fs::path masks = a.masks.empty() ? layout::masks(a.scene) : a.masks;
  const fs::path guidance = a.guidance.empty() ? layout::guidance(a.scene) : a.guidance;
  need_dir("--masks", masks);
  const auto stacks = load_mask_dir(masks, cams);
  const auto guides = fs::is_directory(guidance) ? load_guidance_dir(guidance, cams) : std::map<std::string, GuidanceFeatureMap>{};
  std::size_t channels = 0;
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const auto& st = stacks[v];
    std::size_t empty = 0;
    for (std::size_t m = 0; m < st.mask_count(); ++m) empty += st.mask_pixels(m).empty();
    std::cout << cams[v].id << ": " << st.mask_count() << " masks (" << empty << " empty), coverage "
              << st.covered_pixels().size() << "/" << st.pixel_count() << " px";
    if (auto g = guides.find(cams[v].id); g != guides.end()) {
      require(channels == 0 || channels == g->second.channels(), ErrorKind::format,
              "guidance channel count differs in view " + cams[v].id);
      channels = g->second.channels();
      std::cout << ", guidance " << g->second.rows << "x" << g->second.cols << "x" << g->second.channels();
    }
    std::cout << "\n";
    if (st.mask_count() == 0) warn("view " + cams[v].id + " has no masks");
  }
  std::cout << "ok: " << cams.size() << " views checked\n";
  return 0;
}

struct TrainArgs {
  fs::path scene, cameras, masks, guidance, out;
  int iters = 2000;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  std::size_t pairs = 4096;
  bool no_guidance = false;
};

int run_train(const TrainArgs& a) {
  require(a.iters >= 1, ErrorKind::argument, "--iters: must be >= 1");
  require(a.lambda >= 0.0, ErrorKind::argument, "--lambda: must be >= 0");
  require(!a.scene.empty(), ErrorKind::argument, "--scene: required");
  const bool scene_dir = fs::is_directory(a.scene);
  const fs::path ply = scene_dir ? layout::ply(a.scene) : a.scene;
  const fs::path cameras = !a.cameras.empty() ? a.cameras : scene_dir ? layout::cameras(a.scene) : fs::path{};
  const fs::path masks = !a.masks.empty() ? a.masks : scene_dir ? layout::masks(a.scene) : fs::path{};
  fs::path guidance = !a.guidance.empty() ? a.guidance : scene_dir ? layout::guidance(a.scene) : fs::path{};
  const fs::path out = !a.out.empty() ? a.out : scene_dir ? layout::features(a.scene) : fs::path{};
  need_file("--scene", ply);
  need_file("--cameras", cameras);
  need_dir("--masks", masks);
  if (!a.guidance.empty()) need_dir("--guidance", guidance);
  require(!out.empty(), ErrorKind::argument, "--out: required");

  GaussianCloud cloud = load_ply(ply, kDefaultFeatureDim, a.seed);
  const auto cams = load_cameras(cameras);
  const auto stacks = load_mask_dir(masks, cams);
  std::vector<GuidanceFeatureMap> guides;
  if (!a.no_guidance && !guidance.empty() && fs::is_directory(guidance))
    for (auto& [id, g] : load_guidance_dir(guidance, cams)) guides.push_back(std::move(g));

  TrainConfig cfg;
  cfg.iterations = a.iters;
  cfg.lambda = a.lambda;
  cfg.seed = a.seed;
  cfg.pairs_per_view = a.pairs;
  const auto result = train({cloud, cams, stacks, guides.empty() ? nullptr : &guides}, cfg);

  TrainedModel model;
  model.features = result.features;
  model.projector = result.projector;
  model.guidance_channels = guides.empty() ? 0 : guides.front().channels();
  model.iterations = a.iters;
  model.lambda = a.lambda;
  model.seed = a.seed;
  save_trained(model, out);
  std::string csv = "iteration,total,guidance,correspondence\n";
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    const auto& r = result.history[i];
    csv += std::to_string(i) + "," + std::to_string(r.total) + "," + std::to_string(r.guidance) + "," +
           std::to_string(r.correspondence) + "\n";
  }
  write_file(out / "loss.csv", csv);
  const auto& last = result.history.back();
  std::cout << "trained " << a.iters << " iterations on " << cams.size() << " views; final loss " << last.total
            << " (guidance " << last.guidance << ", correspondence " << last.correspondence << "); wrote "
            << out.string() << "\n";
  return 0;
}

struct SegmentArgs {
  fs::path scene, features, prompt, out, export_ply;
  std::optional<std::uint64_t> seed;
  bool no_post = false;
};

int run_segment(const SegmentArgs& a) {
  need_dir("--scene", a.scene);
  if (!a.features.empty()) require(fs::exists(a.features), ErrorKind::state, "--features: not found: " + a.features.string());
  const auto prompt_json = read_json("--prompt", a.prompt);
  require(!a.out.empty(), ErrorKind::argument, "--out: required");
  std::optional<fs::path> fdir;
  if (!a.features.empty()) fdir = a.features;
  const SceneData scene = load_scene(a.scene, fdir);
  require(scene.trained, ErrorKind::state, "scene " + a.scene.string() + " has no trained features (run train first)");
  Prompt prompt = parse_prompt(prompt_json, [&](const std::string& view) {
    const Camera& c = scene.camera(view);
    return std::pair{c.width, c.height};
  }, a.prompt.parent_path());
  if (a.seed) prompt.config.seed = *a.seed;
  RunOptions opt;
  opt.postprocess = !a.no_post;
  const auto run = run_segmentation(scene, prompt, opt);
  nlohmann::json out = segmentation_to_json(run.final);
  out["stages"] = {{"raw", run.raw.count()}, {"filtered", run.filtered.count()}, {"grown", run.final.count()}};
  out["query_mode"] = run.query_mode;
  write_file(a.out, out.dump(2));
  if (!a.export_ply.empty()) {
    require(run.final.count() > 0, ErrorKind::data, "--export: segmentation is empty");
    save_segmentation(scene.cloud, run.final.membership, a.export_ply);
  }
  std::cout << "segmented " << run.final.count() << "/" << scene.cloud.size() << " Gaussians (raw " << run.raw.count()
            << ", filtered " << run.filtered.count() << ") | " << run.timing << "\n";
  return 0;
}

struct EvalArgs {
  fs::path scene, features, labels, report, csv, segmentation;
  std::string protocol = "labels3d";
  int label = 0;
  std::optional<std::uint64_t> seed;
};

int run_eval(const EvalArgs& a) {
  need_dir("--scene", a.scene);
  require(a.protocol == "labels3d" || a.protocol == "propagate", ErrorKind::argument,
          "--protocol: must be labels3d or propagate");
  std::optional<fs::path> fdir;
  if (!a.features.empty()) fdir = a.features;
  SceneData scene = load_scene(a.scene, fdir);
  if (!a.labels.empty()) {
    need_file("--labels", a.labels);
    scene.labels = load_labels(a.labels);
  }
  require(scene.labels.has_value(), ErrorKind::argument, "--labels: required (no labels.json in the scene)");
  require(scene.labels->gaussian_labels.size() == scene.cloud.size(), ErrorKind::format, "--labels: size does not match scene");

  EvalReport report;
  if (!a.segmentation.empty()) {
    // Score a given segmentation against one label instead of running prompts.
    require(a.label > 0, ErrorKind::argument, "--label: required with --segmentation");
    const Segmentation seg = segmentation_from_json(read_json("--segmentation", a.segmentation));
    require(seg.size() == scene.cloud.size(), ErrorKind::format, "--segmentation: size does not match scene");
    report.protocol = a.protocol;
    report.scene = {{"name", scene.name}, {"gaussians", scene.cloud.size()}};
    report.objects.push_back({a.label, gaussian_label_iou(seg.membership, *scene.labels, a.label), seg.count()});
    if (a.protocol == "propagate") {
      const auto gt_members = scene.labels->membership(a.label);
      for (const auto& v : scene.holdout.empty() ? scene.cameras : scene.holdout) {
        const Mask gt = render_membership_mask(scene.cloud, gt_members, v);
        if (count_true(gt) == 0) continue;
        const Mask pred = render_membership_mask(scene.cloud, seg.membership, v);
        report.views.push_back({v.id, mask_iou(pred, gt), pixel_acc(pred, gt)});
      }
    }
  } else {
    require(scene.trained, ErrorKind::state, "scene " + a.scene.string() + " has no trained features (run train first)");
    report = a.protocol == "labels3d" ? eval_labels3d(scene) : eval_propagate(scene);
  }
  if (!a.report.empty()) write_file(a.report, report.to_json().dump(2));
  if (!a.csv.empty()) write_file(a.csv, report.to_csv());
  std::cout << a.protocol << ": ";
  if (!report.views.empty()) std::cout << "mIoU " << report.miou() << ", mAcc " << report.macc() << ", ";
  std::cout << "mean label IoU " << report.mean_label_iou() << " over " << report.objects.size() << " object(s)\n";
  return 0;
}

struct ServeArgs {
  fs::path scenes = ".";
  std::string host = "127.0.0.1";
  int port = 8080;
  bool allow_untrained = false;
};

int run_serve(const ServeArgs& a) {
  need_dir("--scenes", a.scenes);
  Service service({a.scenes, a.allow_untrained});
  const auto ids = service.load_all();
  std::cout << "loaded " << ids.size() << " scene(s) from " << a.scenes.string() << "; listening on " << a.host << ":"
            << a.port << std::endl;
  require(service.server().listen(a.host, a.port), ErrorKind::config,
          "--port: cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

struct BenchArgs {
  int gaussians = 100000;
  int objects = 5;
  int repeats = 5;
  int size = 128;
  std::uint64_t seed = 0;
  fs::path report;
};

int run_bench(const BenchArgs& a) {
  require(a.gaussians >= a.objects && a.objects >= 1, ErrorKind::argument, "--gaussians: must be >= --objects >= 1");
  require(a.repeats >= 1, ErrorKind::argument, "--repeats: must be >= 1");
  SynthSpec spec;
  spec.objects = a.objects;
  spec.gaussians_per_object = a.gaussians / a.objects;
  spec.seed = a.seed;
  spec.width = spec.height = a.size;
  spec.holdout_views = 0;
  const SynthScene synth = synth_scene(spec);
  SceneData scene;
  scene.name = "bench";
  scene.cloud = synth.cloud;
  scene.cameras = synth.cameras;
  scene.labels = synth.labels;
  scene.cloud.features = synthesize_features(synth.labels, spec.feature_dim, 0.3, a.seed + 1);
  scene.trained = true;

  const auto [cam, mask] = best_view_for(scene, 1);
  require(cam != nullptr, ErrorKind::data, "object 1 is not visible in any view");
  Prompt p;
  p.id = "bench";
  p.view = cam->id;
  p.positive_points = {mask_center_pixel(mask, cam->width)};
  // Fresh table cache per request so every run pays the full rendering cost.
  EvalReport report;
  report.protocol = "bench";
  report.scene = {{"gaussians", scene.cloud.size()}, {"width", spec.width}, {"height", spec.height}, {"seed", a.seed}};
  for (int r = 0; r < a.repeats; ++r) {
    scene.tables = std::make_shared<TableCache>();
    const auto run = run_segmentation(scene, p);
    report.timings.push_back(run.timing);
    report.retrieval_repeats_ms.push_back(run.timing.retrieving_ms);
    std::cout << "run " << r << ": " << run.final.count() << " members | " << run.timing << "\n";
  }
  const auto [mean, var] = report.retrieval_stats();
  std::cout << "retrieval mean " << mean << " ms, variance " << var << " ms^2\n";
  if (!a.report.empty()) write_file(a.report, report.to_json().dump(2));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Promptable segmentation of Gaussian-splat scenes"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic labelled scene directory");
  c_synth->add_option("--spec", synth.spec, "Synthetic scene spec JSON (defaults used when omitted)");
  c_synth->add_option("--out", synth.out, "Output scene directory")->required();
  c_synth->add_option("--seed", synth.seed, "Overrides the spec seed");
  c_synth->add_option("--granularity", synth.granularity, "Mask levels: 1 objects, 2 +halves, 3 +quarters");
  c_synth->add_flag("--coarse", synth.coarse, "Also emit unions of adjacent objects");

  CheckArgs check;
  std::uint64_t check_seed = 0;
  auto* c_check = app.add_subcommand("extract-check", "Validate precomputed masks and guidance features");
  c_check->add_option("--scene", check.scene, "Scene directory")->required();
  c_check->add_option("--masks", check.masks, "Mask directory (default <scene>/masks)");
  c_check->add_option("--guidance", check.guidance, "Guidance directory (default <scene>/guidance)");
  c_check->add_option("--seed", check_seed, "Unused; accepted for uniformity");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Distill masks into per-Gaussian features");
  c_train->add_option("--scene", tr.scene, "Scene PLY or scene directory")->required();
  c_train->add_option("--cameras", tr.cameras, "cameras.json");
  c_train->add_option("--masks", tr.masks, "Mask stack directory");
  c_train->add_option("--guidance", tr.guidance, "Guidance feature directory");
  c_train->add_option("--out", tr.out, "Output feature directory");
  c_train->add_option("--iters", tr.iters, "Training iterations");
  c_train->add_option("--lambda", tr.lambda, "Correspondence loss weight");
  c_train->add_option("--seed", tr.seed, "Random seed");
  c_train->add_option("--pairs", tr.pairs, "Pixel pairs per step");
  c_train->add_flag("--no-guidance", tr.no_guidance, "Disable the guidance loss");

  SegmentArgs seg;
  auto* c_seg = app.add_subcommand("segment", "Segment a target from a prompt");
  c_seg->add_option("--scene", seg.scene, "Scene directory")->required();
  c_seg->add_option("--features", seg.features, "Trained feature directory (default <scene>/features)");
  c_seg->add_option("--prompt", seg.prompt, "Prompt JSON")->required();
  c_seg->add_option("--out", seg.out, "Segmentation JSON output")->required();
  c_seg->add_option("--export", seg.export_ply, "Also write the segmented Gaussians as PLY");
  c_seg->add_option("--seed", seg.seed, "Overrides the prompt's k-means seed");
  c_seg->add_flag("--no-post", seg.no_post, "Skip 3D post-processing");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate segmentation quality");
  c_eval->add_option("--scene", ev.scene, "Scene directory")->required();
  c_eval->add_option("--features", ev.features, "Trained feature directory");
  c_eval->add_option("--labels", ev.labels, "Ground-truth labels JSON (default <scene>/labels.json)");
  c_eval->add_option("--protocol", ev.protocol, "labels3d | propagate");
  c_eval->add_option("--report", ev.report, "JSON report output");
  c_eval->add_option("--csv", ev.csv, "CSV table output");
  c_eval->add_option("--segmentation", ev.segmentation, "Evaluate this segmentation JSON instead of prompting");
  c_eval->add_option("--label", ev.label, "Target label for --segmentation");
  c_eval->add_option("--seed", ev.seed, "Random seed");

  ServeArgs sv;
  std::uint64_t serve_seed = 0;
  if (const char* env = std::getenv("GSSEG_SCENES")) sv.scenes = env;
  if (const char* env = std::getenv("GSSEG_PORT")) sv.port = std::atoi(env);
  auto* c_serve = app.add_subcommand("serve", "Run the REST service");
  c_serve->add_option("--scenes", sv.scenes, "Directory of scene directories (env GSSEG_SCENES)");
  c_serve->add_option("--port", sv.port, "Port (env GSSEG_PORT)");
  c_serve->add_option("--host", sv.host, "Bind address");
  c_serve->add_flag("--allow-untrained", sv.allow_untrained, "Load scenes without trained features for viewing");
  c_serve->add_option("--seed", serve_seed, "Unused; accepted for uniformity");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Latency benchmark on a large synthetic scene");
  c_bench->add_option("--gaussians", bench.gaussians, "Total Gaussians");
  c_bench->add_option("--objects", bench.objects, "Objects");
  c_bench->add_option("--repeats", bench.repeats, "Repeated identical requests");
  c_bench->add_option("--size", bench.size, "View width and height in pixels");
  c_bench->add_option("--seed", bench.seed, "Random seed");
  c_bench->add_option("--report", bench.report, "JSON report output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const char* stage = app.get_subcommands().front()->get_name().c_str();
  try {
    if (*c_synth) return run_synth(synth);
    if (*c_check) return run_extract_check(check);
    if (*c_train) return run_train(tr);
    if (*c_seg) return run_segment(seg);
    if (*c_eval) return run_eval(ev);
    if (*c_serve) return run_serve(sv);
    if (*c_bench) return run_bench(bench);
  } catch (const Error& e) {
    std::cerr << "gsseg " << stage << (e.stage().empty() ? "" : " [" + e.stage() + "]") << ": " << to_string(e.kind())
              << " error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "gsseg " << stage << ": internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
