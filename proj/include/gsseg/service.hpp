#pragma once

// REST backend for interactive segmentation. One session per loaded scene;
// scene data is immutable after loading and only session history mutates.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsseg/pipeline.hpp"
#include "gsseg/png.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen headers.
#include <httplib.h>

namespace gsseg {

/// Highlight used by overlays, blended at 50%.
inline const Eigen::Vector3d kHighlightColor(1.0, 0.0, 1.0);
inline constexpr double kOverlayOpacity = 0.5;

struct HistoryEntry {
  std::string segmentation_id;
  nlohmann::json prompt;
  SegmentationRun run;
};

struct Session {
  std::string id;
  std::shared_ptr<const SceneData> scene;
  std::mutex mutex;
  std::vector<HistoryEntry> history;  ///< most recent last
  std::size_t next_segmentation = 1;

  const HistoryEntry* find(const std::string& sid) const {
    for (const auto& h : history)
      if (h.segmentation_id == sid) return &h;
    return nullptr;
  }
};

/// Pixel-wise sum of member blend weights in one view.
inline std::vector<double> member_weight(const BlendTable& table, const std::vector<std::uint8_t>& membership) {
  std::vector<double> out(table.pixel_count(), 0.0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const auto ids = table.contributors(p);
    const auto ws = table.contributor_weights(p);
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (membership[ids[k]]) out[p] += ws[k];
  }
  return out;
}

/// Plain color render, with the highlight blended in where members contribute
/// a blend weight of at least 1/255.
inline Image render_view(const SceneData& scene, const Camera& cam, const std::vector<std::uint8_t>* membership) {
  const auto table = scene.tables->get(scene.cloud, cam);
  const FeatureMap color = render_attributes(*table, color_matrix(scene.cloud));
  Image img = to_image(color);
  if (!membership) return img;
  const auto weight = member_weight(*table, *membership);
  for (std::size_t p = 0; p < weight.size(); ++p) {
    if (weight[p] < kMinAlpha) continue;
    for (int c = 0; c < 3; ++c)
      img.rgb[3 * p + static_cast<std::size_t>(c)] =
          to_byte((1.0 - kOverlayOpacity) * color.values(static_cast<Eigen::Index>(p), c) + kOverlayOpacity * kHighlightColor[c]);
  }
  return img;
}

inline int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument:
    case ErrorKind::config:
    case ErrorKind::format: return 400;
    case ErrorKind::data: return 422;
    case ErrorKind::state: return 409;
    case ErrorKind::internal: return 500;
  }
  return 500;
}

struct ServiceConfig {
  std::filesystem::path scenes_dir = ".";
  bool allow_untrained = false;  ///< accept scenes without trained features (render only)
};

class Service {
public:
  explicit Service(ServiceConfig cfg = {}) : cfg_(std::move(cfg)) { routes(); }

  httplib::Server& server() { return server_; }

  /// Registers an already loaded scene; returns its id.
  std::string add_scene(SceneData scene) {
    std::lock_guard lock(mutex_);
    std::string id = scene.name.empty() ? "scene" : scene.name;
    for (int k = 2; sessions_.count(id); ++k) id = scene.name + "-" + std::to_string(k);
    auto s = std::make_shared<Session>();
    s->id = id;
    s->scene = std::make_shared<const SceneData>(std::move(scene));
    sessions_.emplace(id, std::move(s));
    return id;
  }

  /// Loads a scene directory (relative paths resolve against the scenes dir).
  std::string load_scene_dir(const std::filesystem::path& path, const std::optional<std::filesystem::path>& features = {},
                             bool allow_untrained = false) {
    const auto dir = path.is_relative() ? cfg_.scenes_dir / path : path;
    SceneData scene = load_scene(dir, features);
    require(scene.trained || allow_untrained || cfg_.allow_untrained, ErrorKind::state,
            "scene " + dir.string() + " has no trained features (pass allow_untrained to load it for viewing)");
    return add_scene(std::move(scene));
  }

  /// Loads every subdirectory of the scenes dir that contains a scene.ply.
  std::vector<std::string> load_all() {
    std::vector<std::string> ids;
    if (!std::filesystem::is_directory(cfg_.scenes_dir)) return ids;
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(cfg_.scenes_dir))
      if (e.is_directory() && std::filesystem::exists(layout::ply(e.path()))) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      try {
        ids.push_back(load_scene_dir(d));
      } catch (const Error& e) {
        warn("skipping scene " + d.string() + ": " + e.what());
      }
    }
    return ids;
  }

  std::vector<std::string> scene_ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
  }

  std::shared_ptr<Session> session(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  static void send_json(Res& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(Res& res, int status, const std::string& kind, const std::string& message,
                         const std::string& stage = {}) {
    nlohmann::json err{{"kind", kind}, {"message", message}};
    if (!stage.empty()) err["stage"] = stage;
    send_json(res, status, {{"error", err}});
  }

  /// Runs a handler, mapping library errors to structured JSON responses.
  template <typename F>
  static void guarded(Res& res, F&& body) {
    try {
      body();
    } catch (const Error& e) {
      send_error(res, http_status(e.kind()), to_string(e.kind()), e.what(), e.stage());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "argument", std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  }

  std::shared_ptr<Session> session_or_404(const std::string& id, Res& res) const {
    auto s = session(id);
    if (!s) send_error(res, 404, "not_found", "unknown scene '" + id + "'");
    return s;
  }

  static nlohmann::json scene_summary(const Session& s) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& c : s.scene->cameras) views.push_back({{"id", c.id}, {"width", c.width}, {"height", c.height}});
    nlohmann::json holdout = nlohmann::json::array();
    for (const auto& c : s.scene->holdout) holdout.push_back({{"id", c.id}, {"width", c.width}, {"height", c.height}});
    return {{"id", s.id},
            {"gaussians", s.scene->cloud.size()},
            {"trained", s.scene->trained},
            {"views", views},
            {"holdout_views", holdout},
            {"guidance", !s.scene->guidance.empty() && s.scene->projector.has_value()}};
  }

  void routes() {
    server_.Get("/scenes", [this](const Req&, Res& res) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& id : scene_ids())
        if (auto s = session(id)) list.push_back(scene_summary(*s));
      send_json(res, 200, {{"scenes", list}});
    });

    server_.Post("/scenes", [this](const Req& req, Res& res) {
      guarded(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        require(body.is_object() && body.contains("path") && body["path"].is_string(), ErrorKind::argument,
                "body.path: required scene directory");
        std::optional<std::filesystem::path> features;
        if (body.contains("features")) features = body["features"].get<std::string>();
        const std::string id =
            load_scene_dir(body["path"].get<std::string>(), features, body.value("allow_untrained", false));
        send_json(res, 201, scene_summary(*session(id)));
      });
    });

    server_.Get(R"(/scenes/([^/]+))", [this](const Req& req, Res& res) {
      if (auto s = session_or_404(req.matches[1], res)) send_json(res, 200, scene_summary(*s));
    });

    server_.Get(R"(/scenes/([^/]+)/render)", [this](const Req& req, Res& res) {
      auto s = session_or_404(req.matches[1], res);
      if (!s) return;
      guarded(res, [&] {
        const std::string view = req.get_param_value("view");
        const Camera* cam = nullptr;
        for (const auto* list : {&s->scene->cameras, &s->scene->holdout})
          for (const auto& c : *list)
            if (c.id == view) cam = &c;
        if (!cam) return send_error(res, 404, "not_found", "unknown view '" + view + "'");
        const std::string overlay = req.get_param_value("overlay");
        std::vector<std::uint8_t> membership;
        bool with_overlay = false;
        if (overlay == "1" || overlay == "true") {
          std::lock_guard lock(s->mutex);
          const HistoryEntry* h = nullptr;
          if (req.has_param("segmentation")) {
            h = s->find(req.get_param_value("segmentation"));
            if (!h) return send_error(res, 404, "not_found", "unknown segmentation");
          } else if (!s->history.empty()) {
            h = &s->history.back();
          }
          if (h) {
            membership = h->run.final.membership;
            with_overlay = true;
          }
        }
        const Image img = render_view(*s->scene, *cam, with_overlay ? &membership : nullptr);
        res.status = 200;
        res.set_content(encode_png(img), "image/png");
      });
    });

    server_.Post(R"(/scenes/([^/]+)/segment)", [this](const Req& req, Res& res) {
      auto s = session_or_404(req.matches[1], res);
      if (!s) return;
      guarded(res, [&] {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
          fail(ErrorKind::argument, std::string("prompt: malformed JSON: ") + e.what());
        }
        const SceneData& scene = *s->scene;
        require(scene.trained, ErrorKind::state, "scene '" + s->id + "' has no trained features");
        const Prompt prompt = parse_prompt(body, [&](const std::string& view) {
          const Camera& c = scene.camera(view);
          return std::pair{c.width, c.height};
        }, cfg_.scenes_dir);
        RunOptions opt;
        opt.postprocess = body.value("postprocess", true);
        SegmentationRun run = run_segmentation(scene, prompt, opt);
        std::lock_guard lock(s->mutex);
        HistoryEntry entry{"seg" + std::to_string(s->next_segmentation++), prompt_to_json(prompt), std::move(run)};
        nlohmann::json out = entry.run.summary();
        out["segmentation_id"] = entry.segmentation_id;
        out["prompt_id"] = prompt.id;
        out["history_length"] = s->history.size() + 1;
        s->history.push_back(std::move(entry));
        send_json(res, 200, out);
      });
    });

    server_.Get(R"(/scenes/([^/]+)/segmentations/([^/]+))", [this](const Req& req, Res& res) {
      auto s = session_or_404(req.matches[1], res);
      if (!s) return;
      std::lock_guard lock(s->mutex);
      const HistoryEntry* h = s->find(req.matches[2]);
      if (!h) return send_error(res, 404, "not_found", "unknown segmentation '" + std::string(req.matches[2]) + "'");
      nlohmann::json out = segmentation_to_json(h->run.final);
      out["segmentation_id"] = h->segmentation_id;
      out["prompt"] = h->prompt;
      out["summary"] = h->run.summary();
      send_json(res, 200, out);
    });

    server_.Get(R"(/scenes/([^/]+)/segmentations/([^/]+)/export)", [this](const Req& req, Res& res) {
      auto s = session_or_404(req.matches[1], res);
      if (!s) return;
      std::vector<std::uint8_t> membership;
      {
        std::lock_guard lock(s->mutex);
        const HistoryEntry* h = s->find(req.matches[2]);
        if (!h) return send_error(res, 404, "not_found", "unknown segmentation '" + std::string(req.matches[2]) + "'");
        membership = h->run.final.membership;
      }
      if (count_true(membership) == 0) return send_error(res, 409, "state", "cannot export an empty segmentation");
      res.status = 200;
      res.set_header("Content-Disposition", "attachment; filename=\"" + std::string(req.matches[2]) + ".ply\"");
      res.set_content(encode_ply(s->scene->cloud.subset(membership)), "application/octet-stream");
    });

    server_.Delete(R"(/scenes/([^/]+)/prompts/last)", [this](const Req& req, Res& res) {
      auto s = session_or_404(req.matches[1], res);
      if (!s) return;
      std::lock_guard lock(s->mutex);
      if (s->history.empty()) return send_error(res, 409, "state", "nothing to undo");
      s->history.pop_back();
      nlohmann::json out{{"history_length", s->history.size()}};
      out["segmentation_id"] = s->history.empty() ? nlohmann::json(nullptr) : nlohmann::json(s->history.back().segmentation_id);
      send_json(res, 200, out);
    });
  }

  ServiceConfig cfg_;
  httplib::Server server_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace gsseg
