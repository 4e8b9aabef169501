#pragma once

// Prompts (points, scribbles, masks, guidance-based masks) and their
// conversion into signed query sets.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <boost/beast/core/detail/base64.hpp>
#include <json.hpp>

#include "gsseg/common.hpp"
#include "gsseg/kmeans.hpp"
#include "gsseg/masks.hpp"
#include "gsseg/splat.hpp"
#include "gsseg/tensor.hpp"

namespace gsseg {

enum class PromptKind { points, scribble, mask, sam_based };
enum class Metric { cosine, dot };

inline const char* to_string(PromptKind k) {
  switch (k) {
    case PromptKind::points: return "points";
    case PromptKind::scribble: return "scribble";
    case PromptKind::mask: return "mask";
    case PromptKind::sam_based: return "sam_based";
  }
  return "?";
}

inline bool uses_mask_postprocess(PromptKind k) { return k == PromptKind::mask || k == PromptKind::sam_based; }

struct PromptConfig {
  std::size_t kmeans_k = 5;
  double accept_ratio = 0.9;
  int kmeans_max_iterations = 50;
  std::uint64_t seed = 0;

  void validate() const {
    require(kmeans_k >= 1, ErrorKind::argument, "prompt.config.k: must be >= 1");
    require(accept_ratio >= 0.0 && accept_ratio <= 1.0, ErrorKind::argument, "prompt.config.ratio: must be in [0,1]");
    require(kmeans_max_iterations >= 1, ErrorKind::argument, "prompt.config.max_iterations: must be >= 1");
  }
};

using Stroke = std::vector<Pixel>;

struct Prompt {
  std::string id;
  std::string view;
  PromptKind kind = PromptKind::points;
  std::vector<Pixel> positive_points;
  std::vector<Pixel> negative_points;
  std::vector<Stroke> positive_strokes;
  std::vector<Stroke> negative_strokes;
  Mask positive_mask;  ///< mask prompts; the reference mask for sam_based
  Mask negative_mask;
  PromptConfig config;
};

struct QuerySet {
  std::vector<Eigen::RowVectorXd> positives;
  std::vector<Eigen::RowVectorXd> negatives;
  Metric metric = Metric::cosine;
};

// ---------------------------------------------------------------------------
// Rasterization and validation

/// 1-px Bresenham polyline dilated by a 3x3 neighborhood, clipped to the image.
inline Mask rasterize_strokes(const std::vector<Stroke>& strokes, int width, int height) {
  Mask out(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  auto stamp = [&](int x, int y) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int px = x + dx, py = y + dy;
        if (px >= 0 && py >= 0 && px < width && py < height)
          out[static_cast<std::size_t>(py) * static_cast<std::size_t>(width) + static_cast<std::size_t>(px)] = 1;
      }
  };
  for (const auto& s : strokes) {
    if (s.empty()) continue;
    stamp(s.front().x, s.front().y);
    for (std::size_t i = 1; i < s.size(); ++i) {
      int x0 = s[i - 1].x, y0 = s[i - 1].y;
      const int x1 = s[i].x, y1 = s[i].y;
      const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
      const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
      int err = dx + dy;
      while (true) {
        stamp(x0, y0);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
          err += dy;
          x0 += sx;
        }
        if (e2 <= dx) {
          err += dx;
          y0 += sy;
        }
      }
    }
  }
  return out;
}

/// Checks coordinates and mask sizes against the prompt's view.
inline void validate_prompt(const Prompt& p, const Camera& cam) {
  auto inside = [&](Pixel px) { return px.x >= 0 && px.y >= 0 && px.x < cam.width && px.y < cam.height; };
  auto check_points = [&](const std::vector<Pixel>& pts, const char* field) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      require(inside(pts[i]), ErrorKind::argument,
              std::string("prompt.") + field + "[" + std::to_string(i) + "]: pixel (" + std::to_string(pts[i].x) + "," +
                  std::to_string(pts[i].y) + ") outside view " + cam.id);
  };
  p.config.validate();
  const std::size_t hw = cam.pixel_count();
  switch (p.kind) {
    case PromptKind::points:
      require(!p.positive_points.empty(), ErrorKind::argument, "prompt.positives: at least one positive point required");
      check_points(p.positive_points, "positives");
      check_points(p.negative_points, "negatives");
      break;
    case PromptKind::scribble:
      require(!p.positive_strokes.empty() && !p.positive_strokes.front().empty(), ErrorKind::argument,
              "prompt.positives: at least one positive stroke required");
      for (std::size_t i = 0; i < p.positive_strokes.size(); ++i)
        check_points(p.positive_strokes[i], ("positives[" + std::to_string(i) + "]").c_str());
      for (std::size_t i = 0; i < p.negative_strokes.size(); ++i)
        check_points(p.negative_strokes[i], ("negatives[" + std::to_string(i) + "]").c_str());
      break;
    case PromptKind::mask:
    case PromptKind::sam_based:
      require(p.positive_mask.size() == hw, ErrorKind::argument, "prompt.positives: mask size does not match view " + cam.id);
      require(count_true(p.positive_mask) > 0, ErrorKind::argument, "prompt.positives: mask is empty");
      require(p.negative_mask.empty() || p.negative_mask.size() == hw, ErrorKind::argument,
              "prompt.negatives: mask size does not match view " + cam.id);
      break;
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline std::string base64_decode(std::string_view in) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::decoded_size(in.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), in.data(), in.size());
  // decoding stops at the first '='; only padding may follow
  const auto rest = in.substr(read);
  require(rest.size() <= 2 && rest.find_first_not_of('=') == std::string_view::npos && (in.size() % 4 == 0 || rest.empty()),
          ErrorKind::argument, "invalid base64 payload");
  out.resize(written);
  return out;
}

inline std::string base64_encode(std::string_view in) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(in.size()), '\0');
  out.resize(b64::encode(out.data(), in.data(), in.size()));
  return out;
}

inline Pixel parse_pixel(const nlohmann::json& j, const std::string& path) {
  require(j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number(), ErrorKind::argument,
          path + ": expected [x, y]");
  return {static_cast<int>(std::lround(j[0].get<double>())), static_cast<int>(std::lround(j[1].get<double>()))};
}

inline std::vector<Pixel> parse_points(const nlohmann::json& j, const std::string& path) {
  require(j.is_array(), ErrorKind::argument, path + ": expected an array of [x, y]");
  std::vector<Pixel> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_pixel(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

/// A flat [[x,y],...] is one stroke; [[[x,y],...],...] is a stroke list.
inline std::vector<Stroke> parse_strokes(const nlohmann::json& j, const std::string& path) {
  require(j.is_array(), ErrorKind::argument, path + ": expected strokes");
  if (j.empty()) return {};
  if (j[0].is_array() && !j[0].empty() && j[0][0].is_array()) {
    std::vector<Stroke> strokes;
    for (std::size_t i = 0; i < j.size(); ++i) strokes.push_back(parse_points(j[i], path + "[" + std::to_string(i) + "]"));
    return strokes;
  }
  return {parse_points(j, path)};
}

inline Mask mask_from_tensor(const Tensor& t, const std::string& path) {
  require(t.dtype == DType::u8 && (t.dims.size() == 2 || (t.dims.size() == 3 && t.dims[0] == 1)), ErrorKind::argument,
          path + ": mask tensor must be u8 [H, W] or [1, H, W]");
  Mask m = t.u8;
  for (auto& v : m) v = v ? 1 : 0;
  return m;
}

/// Mask reference: GSTEN file path, {"gsten_base64": ...}, {"pixels": [[x,y],...]}
/// or {"box": [x0, y0, x1, y1]} (inclusive).
inline Mask parse_mask_ref(const nlohmann::json& j, const std::string& path, const std::filesystem::path& base_dir,
                           int width, int height) {
  const std::size_t hw = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (j.is_string()) {
    std::filesystem::path file = j.get<std::string>();
    if (file.is_relative()) file = base_dir / file;
    try {
      return mask_from_tensor(load_tensor(file), path);
    } catch (const Error& e) {
      fail(ErrorKind::argument, path + ": " + e.what());
    }
  }
  require(j.is_object(), ErrorKind::argument, path + ": expected a mask reference");
  if (j.contains("gsten_base64")) {
    require(j["gsten_base64"].is_string(), ErrorKind::argument, path + ".gsten_base64: expected a string");
    try {
      return mask_from_tensor(decode_tensor(base64_decode(j["gsten_base64"].get<std::string>())), path);
    } catch (const Error& e) {
      fail(ErrorKind::argument, path + ".gsten_base64: " + e.what());
    }
  }
  Mask m(hw, 0);
  if (j.contains("pixels")) {
    for (const Pixel& p : parse_points(j["pixels"], path + ".pixels")) {
      require(p.x >= 0 && p.y >= 0 && p.x < width && p.y < height, ErrorKind::argument, path + ".pixels: pixel outside view");
      m[static_cast<std::size_t>(p.y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(p.x)] = 1;
    }
    return m;
  }
  if (j.contains("box")) {
    const auto& b = j["box"];
    require(b.is_array() && b.size() == 4, ErrorKind::argument, path + ".box: expected [x0, y0, x1, y1]");
    const int x0 = std::max(0, b[0].get<int>()), y0 = std::max(0, b[1].get<int>());
    const int x1 = std::min(width - 1, b[2].get<int>()), y1 = std::min(height - 1, b[3].get<int>());
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) m[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = 1;
    return m;
  }
  fail(ErrorKind::argument, path + ": unknown mask reference (use a path, gsten_base64, pixels or box)");
}

}  // namespace detail

/// Parses the prompt JSON; `view_size` resolves the view id to (width, height).
template <typename ViewSize>
Prompt parse_prompt(const nlohmann::json& j, ViewSize&& view_size, const std::filesystem::path& base_dir = ".") {
  require(j.is_object(), ErrorKind::argument, "prompt: expected a JSON object");
  Prompt p;
  require(j.contains("view"), ErrorKind::argument, "prompt.view: required");
  p.view = j["view"].is_string() ? j["view"].get<std::string>() : j["view"].dump();
  require(j.contains("kind") && j["kind"].is_string(), ErrorKind::argument, "prompt.kind: required string");
  const std::string kind = j["kind"].get<std::string>();
  if (kind == "points") p.kind = PromptKind::points;
  else if (kind == "scribble") p.kind = PromptKind::scribble;
  else if (kind == "mask" || kind == "box") p.kind = PromptKind::mask;
  else if (kind == "sam_based") p.kind = PromptKind::sam_based;
  else fail(ErrorKind::argument, "prompt.kind: unknown kind '" + kind + "'");
  p.id = j.value("id", std::string{});
  require(j.contains("positives"), ErrorKind::argument, "prompt.positives: required");

  if (j.contains("config")) {
    const auto& c = j["config"];
    require(c.is_object(), ErrorKind::argument, "prompt.config: expected an object");
    try {
      p.config.kmeans_k = c.value("k", p.config.kmeans_k);
      p.config.accept_ratio = c.value("ratio", p.config.accept_ratio);
      p.config.kmeans_max_iterations = c.value("max_iterations", p.config.kmeans_max_iterations);
      p.config.seed = c.value("seed", p.config.seed);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::argument, std::string("prompt.config: ") + e.what());
    }
  }
  switch (p.kind) {
    case PromptKind::points:
      p.positive_points = detail::parse_points(j["positives"], "prompt.positives");
      if (j.contains("negatives")) p.negative_points = detail::parse_points(j["negatives"], "prompt.negatives");
      break;
    case PromptKind::scribble:
      p.positive_strokes = detail::parse_strokes(j["positives"], "prompt.positives");
      if (j.contains("negatives")) p.negative_strokes = detail::parse_strokes(j["negatives"], "prompt.negatives");
      break;
    case PromptKind::mask:
    case PromptKind::sam_based: {
      const auto [w, h] = view_size(p.view);
      p.positive_mask = detail::parse_mask_ref(j["positives"], "prompt.positives", base_dir, w, h);
      if (j.contains("negatives") && !j["negatives"].is_null())
        p.negative_mask = detail::parse_mask_ref(j["negatives"], "prompt.negatives", base_dir, w, h);
      break;
    }
  }
  return p;
}

inline nlohmann::json prompt_to_json(const Prompt& p) {
  nlohmann::json j{{"view", p.view}, {"kind", to_string(p.kind)}};
  if (!p.id.empty()) j["id"] = p.id;
  auto pts = [](const std::vector<Pixel>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& px : v) a.push_back({px.x, px.y});
    return a;
  };
  switch (p.kind) {
    case PromptKind::points:
      j["positives"] = pts(p.positive_points);
      j["negatives"] = pts(p.negative_points);
      break;
    case PromptKind::scribble: {
      nlohmann::json pos = nlohmann::json::array(), neg = nlohmann::json::array();
      for (const auto& s : p.positive_strokes) pos.push_back(pts(s));
      for (const auto& s : p.negative_strokes) neg.push_back(pts(s));
      j["positives"] = pos;
      j["negatives"] = neg;
      break;
    }
    default:
      j["positive_mask_pixels"] = count_true(p.positive_mask);
      break;
  }
  j["config"] = {{"k", p.config.kmeans_k},
                 {"ratio", p.config.accept_ratio},
                 {"max_iterations", p.config.kmeans_max_iterations},
                 {"seed", p.config.seed}};
  return j;
}

// ---------------------------------------------------------------------------
// Query generation

/// One query per clicked pixel, read straight from the rendered map.
inline QuerySet point_queries(const FeatureMap& rendered, const Prompt& prompt) {
  require(prompt.kind == PromptKind::points, ErrorKind::argument, "point_queries needs a points prompt");
  require(!prompt.positive_points.empty(), ErrorKind::argument, "point prompt has no positive point");
  QuerySet qs;
  qs.metric = Metric::cosine;
  auto lookup = [&](Pixel p) {
    require(p.x >= 0 && p.y >= 0 && p.x < rendered.width && p.y < rendered.height, ErrorKind::argument,
            "prompt pixel (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") outside the view");
    return Eigen::RowVectorXd(rendered.at(p.x, p.y));
  };
  for (const auto& p : prompt.positive_points) qs.positives.push_back(lookup(p));
  for (const auto& p : prompt.negative_points) qs.negatives.push_back(lookup(p));
  return qs;
}

namespace detail {

/// Rows of `values` at the flagged indices, ascending.
inline FeatureMatrix gather_rows(const FeatureMatrix& values, const Mask& flags) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) idx.push_back(static_cast<Eigen::Index>(i));
  FeatureMatrix out(static_cast<Eigen::Index>(idx.size()), values.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = values.row(idx[k]);
  return out;
}

inline std::vector<Eigen::RowVectorXd> centroid_rows(const FeatureMatrix& points, const PromptConfig& cfg) {
  KmeansOptions opt;
  opt.clusters = cfg.kmeans_k;
  opt.max_iterations = cfg.kmeans_max_iterations;
  opt.seed = cfg.seed;
  const FeatureMatrix c = kmeans(points, opt);
  std::vector<Eigen::RowVectorXd> out;
  for (Eigen::Index i = 0; i < c.rows(); ++i) out.emplace_back(c.row(i));
  return out;
}

}  // namespace detail

/// Region pixels of a dense prompt (scribble or mask) at full resolution.
inline std::pair<Mask, Mask> dense_regions(const Prompt& prompt, int width, int height) {
  if (prompt.kind == PromptKind::scribble)
    return {rasterize_strokes(prompt.positive_strokes, width, height), rasterize_strokes(prompt.negative_strokes, width, height)};
  return {prompt.positive_mask, prompt.negative_mask};
}

/// K-means centroids of rendered features inside the positive (and negative) region.
inline QuerySet kmeans_queries(const FeatureMap& rendered, const Prompt& prompt) {
  require(prompt.kind == PromptKind::scribble || prompt.kind == PromptKind::mask, ErrorKind::argument,
          "kmeans_queries needs a scribble or mask prompt");
  const auto [pos, neg] = dense_regions(prompt, rendered.width, rendered.height);
  require(pos.size() == rendered.pixel_count() && count_true(pos) > 0, ErrorKind::argument,
          "dense prompt has an empty positive region");
  QuerySet qs;
  qs.metric = Metric::cosine;
  qs.positives = detail::centroid_rows(detail::gather_rows(rendered.values, pos), prompt.config);
  if (neg.size() == rendered.pixel_count() && count_true(neg) > 0)
    qs.negatives = detail::centroid_rows(detail::gather_rows(rendered.values, neg), prompt.config);
  return qs;
}

struct SamQueries {
  QuerySet queries;
  bool accepted_pooled_query = false;
  double overlap = 0.0;  ///< |M_temp ∩ M_ref| / |M_ref|
};

/// Guidance-based queries: the pooled query over M_ref if its own
/// segmentation of the rendered map covers enough of M_ref, otherwise K-means
/// centroids of the guidance grid inside M_ref. Negatives are not used here.
inline SamQueries sam_based_queries(const FeatureMatrix& guidance_grid, const GuidanceFeatureMap& alignment,
                                    const FeatureMap& rendered, const Mask& reference, const PromptConfig& cfg) {
  require(reference.size() == rendered.pixel_count(), ErrorKind::argument, "reference mask size mismatch");
  const std::size_t ref_count = count_true(reference);
  require(ref_count > 0, ErrorKind::argument, "reference mask is empty");
  require(guidance_grid.cols() == rendered.values.cols(), ErrorKind::argument, "guidance grid dimension mismatch");
  const Mask cells = alignment.downsample(reference);
  const auto pooled = mask_query(guidance_grid, cells);
  require(pooled.has_value(), ErrorKind::argument, "reference mask covers no guidance cell");

  SamQueries out;
  out.queries.metric = Metric::dot;
  const Eigen::VectorXd logits = rendered.values * pooled->transpose();
  std::size_t inter = 0;
  for (std::size_t p = 0; p < reference.size(); ++p)
    if (reference[p] && logits[static_cast<Eigen::Index>(p)] >= 0.0) ++inter;
  out.overlap = static_cast<double>(inter) / static_cast<double>(ref_count);
  if (out.overlap >= cfg.accept_ratio) {
    out.accepted_pooled_query = true;
    out.queries.positives.push_back(*pooled);
  } else {
    out.queries.positives = detail::centroid_rows(detail::gather_rows(guidance_grid, cells), cfg);
  }
  return out;
}

}  // namespace gsseg
