#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <json.hpp>

#include "gsseg/common.hpp"
#include "gsseg/tensor.hpp"

namespace gsseg {

/// Zeroth-order SH basis constant used to map f_dc to RGB.
inline constexpr double kShC0 = 0.28209479177387814;

/// Gaussian splat cloud. Geometry and appearance are frozen; only
/// `features` is trained.
struct GaussianCloud {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> scales;
  std::vector<Eigen::Quaterniond> rotations;
  std::vector<double> opacities;
  std::vector<Eigen::Vector3d> colors;
  FeatureMatrix features;

  std::size_t size() const { return positions.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }

  void resize(std::size_t n, std::size_t feature_dim) {
    positions.assign(n, Eigen::Vector3d::Zero());
    scales.assign(n, Eigen::Vector3d::Ones());
    rotations.assign(n, Eigen::Quaterniond::Identity());
    opacities.assign(n, 0.5);
    colors.assign(n, Eigen::Vector3d::Constant(0.5));
    features = FeatureMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(feature_dim));
  }

  /// Throws a data error naming the first offending element.
  void validate() const {
    const std::size_t n = size();
    require(scales.size() == n && rotations.size() == n && opacities.size() == n && colors.size() == n &&
                static_cast<std::size_t>(features.rows()) == n,
            ErrorKind::data, "attribute arrays disagree on Gaussian count");
    for (std::size_t i = 0; i < n; ++i) {
      const std::string at = " at Gaussian " + std::to_string(i);
      require(positions[i].allFinite() && scales[i].allFinite() && colors[i].allFinite(), ErrorKind::data,
              "non-finite attribute" + at);
      require((scales[i].array() > 0.0).all(), ErrorKind::data, "non-positive scale" + at);
      require(std::abs(rotations[i].norm() - 1.0) <= 1e-6, ErrorKind::data, "quaternion not unit-norm" + at);
      require(opacities[i] > 0.0 && opacities[i] < 1.0, ErrorKind::data, "opacity outside (0,1)" + at);
    }
    require(features.allFinite(), ErrorKind::data, "non-finite feature value");
  }

  /// Copy of the Gaussians whose flag is set, all attributes preserved.
  GaussianCloud subset(const std::vector<std::uint8_t>& keep) const {
    require(keep.size() == size(), ErrorKind::argument, "membership size does not match cloud");
    GaussianCloud out;
    const std::size_t m = count_true(keep);
    out.resize(m, feature_dim());
    std::size_t j = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (!keep[i]) continue;
      out.positions[j] = positions[i];
      out.scales[j] = scales[i];
      out.rotations[j] = rotations[i];
      out.opacities[j] = opacities[i];
      out.colors[j] = colors[i];
      out.features.row(static_cast<Eigen::Index>(j)) = features.row(static_cast<Eigen::Index>(i));
      ++j;
    }
    return out;
  }
};

/// Pinhole camera. Camera space is x right, y down, z forward.
struct Camera {
  std::string id;
  int width = 0;
  int height = 0;
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }

  void validate() const {
    require(width > 0 && height > 0, ErrorKind::data, "camera " + id + ": non-positive image size");
    require(fx > 0.0 && fy > 0.0, ErrorKind::data, "camera " + id + ": focal lengths must be positive");
    const Eigen::Matrix3d r = world_to_camera.topLeftCorner<3, 3>();
    require((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-5, ErrorKind::data,
            "camera " + id + ": rotation block is not orthonormal");
  }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return world_to_camera.topLeftCorner<3, 3>() * world + world_to_camera.topRightCorner<3, 1>();
  }

  Eigen::Vector3d center() const {
    const Eigen::Matrix3d r = world_to_camera.topLeftCorner<3, 3>();
    return -r.transpose() * world_to_camera.topRightCorner<3, 1>();
  }
};

/// Camera at `eye` looking at `target`, world z up.
inline Camera look_at(std::string id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target, int width, int height,
                      double focal) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up_hint = Eigen::Vector3d::UnitZ();
  if (std::abs(forward.dot(up_hint)) > 0.999) up_hint = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d right = forward.cross(up_hint).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  Camera cam;
  cam.id = std::move(id);
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.world_to_camera.setIdentity();
  cam.world_to_camera.topLeftCorner<3, 3>() = r;
  cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
  return cam;
}

struct GroundTruthLabels {
  std::vector<int> gaussian_labels;

  int max_label() const {
    return gaussian_labels.empty() ? 0 : *std::max_element(gaussian_labels.begin(), gaussian_labels.end());
  }

  std::vector<std::uint8_t> membership(int label) const {
    std::vector<std::uint8_t> m(gaussian_labels.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = gaussian_labels[i] == label ? 1 : 0;
    return m;
  }

  bool has_label(int label) const {
    return std::find(gaussian_labels.begin(), gaussian_labels.end(), label) != gaussian_labels.end();
  }
};

inline void init_features(GaussianCloud& cloud, std::size_t feature_dim, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1e-4, 1e-4);
  cloud.features.resize(static_cast<Eigen::Index>(cloud.size()), static_cast<Eigen::Index>(feature_dim));
  for (Eigen::Index i = 0; i < cloud.features.size(); ++i) cloud.features.data()[i] = u(rng);
}

// ---------------------------------------------------------------------------
// PLY

namespace detail {

struct PlyProperty {
  std::string name;
  std::string type;
  std::size_t offset = 0;
  std::size_t size = 0;
};

inline std::size_t ply_type_size(const std::string& type) {
  static const std::map<std::string, std::size_t> sizes{
      {"char", 1},   {"uchar", 1},  {"int8", 1},  {"uint8", 1},   {"short", 2},  {"ushort", 2}, {"int16", 2},
      {"uint16", 2}, {"int", 4},    {"uint", 4},  {"int32", 4},   {"uint32", 4}, {"float", 4},  {"float32", 4},
      {"double", 8}, {"float64", 8}};
  auto it = sizes.find(type);
  require(it != sizes.end(), ErrorKind::format, "unsupported PLY property type '" + type + "'");
  return it->second;
}

inline double ply_read_value(const unsigned char* p, const std::string& type) {
  auto load = [p]<typename T>(T) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
  };
  if (type == "float" || type == "float32") return load(float{});
  if (type == "double" || type == "float64") return load(double{});
  if (type == "uchar" || type == "uint8") return load(std::uint8_t{});
  if (type == "char" || type == "int8") return load(std::int8_t{});
  if (type == "short" || type == "int16") return load(std::int16_t{});
  if (type == "ushort" || type == "uint16") return load(std::uint16_t{});
  if (type == "int" || type == "int32") return load(std::int32_t{});
  return load(std::uint32_t{});
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace detail

/// Reads a binary little-endian 3DGS PLY. Opacity logits and log-scales are
/// mapped to their constrained ranges; features get the near-zero init.
inline GaussianCloud load_ply(const std::filesystem::path& path, std::size_t feature_dim = kDefaultFeatureDim,
                              std::uint64_t feature_seed = 0) {
  const std::string bytes = read_file(path);
  std::istringstream header(bytes);
  std::string line;
  std::getline(header, line);
  require(line == "ply" || line == "ply\r", ErrorKind::format, path.string() + ": missing 'ply' magic");

  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  std::size_t stride = 0;
  std::vector<detail::PlyProperty> props;
  bool format_ok = false;
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      require(fmt == "binary_little_endian", ErrorKind::format, path.string() + ": only binary_little_endian PLY is supported");
      format_ok = true;
    } else if (word == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
        seen_vertex = true;
      } else {
        require(seen_vertex, ErrorKind::format, path.string() + ": elements before 'vertex' are not supported");
      }
    } else if (word == "property") {
      std::string type, name;
      ls >> type;
      require(type != "list" || !in_vertex, ErrorKind::format, path.string() + ": list properties on vertex not supported");
      ls >> name;
      if (in_vertex) {
        const std::size_t sz = detail::ply_type_size(type);
        props.push_back({name, type, stride, sz});
        stride += sz;
      }
    } else if (word == "end_header") {
      break;
    }
  }
  require(format_ok, ErrorKind::format, path.string() + ": missing format line");
  require(seen_vertex, ErrorKind::format, path.string() + ": missing vertex element");
  const auto body_start = static_cast<std::size_t>(header.tellg());
  require(bytes.size() >= body_start + vertex_count * stride, ErrorKind::format, path.string() + ": truncated vertex data");

  auto find = [&](const std::string& name) -> const detail::PlyProperty& {
    for (const auto& p : props)
      if (p.name == name) return p;
    fail(ErrorKind::format, path.string() + ": missing PLY property '" + name + "'");
  };
  const std::vector<std::string> names{"x",       "y",       "z",       "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                                       "scale_0", "scale_1", "scale_2", "rot_0",  "rot_1",  "rot_2",  "rot_3"};
  std::vector<const detail::PlyProperty*> cols;
  for (const auto& n : names) cols.push_back(&find(n));
  bool has_higher_sh = false;
  for (const auto& p : props) has_higher_sh |= p.name.rfind("f_rest_", 0) == 0;
  if (has_higher_sh) warn(path.string() + ": higher-order SH coefficients ignored (DC color only)");

  GaussianCloud cloud;
  cloud.resize(vertex_count, 0);
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + body_start;
  double v[14];
  for (std::size_t i = 0; i < vertex_count; ++i) {
    const unsigned char* row = base + i * stride;
    for (std::size_t c = 0; c < names.size(); ++c) {
      v[c] = detail::ply_read_value(row + cols[c]->offset, cols[c]->type);
      require(std::isfinite(v[c]), ErrorKind::data,
              path.string() + ": non-finite value in '" + names[c] + "' at element " + std::to_string(i));
    }
    cloud.positions[i] = {v[0], v[1], v[2]};
    for (int k = 0; k < 3; ++k) cloud.colors[i][k] = std::clamp(0.5 + kShC0 * v[3 + k], 0.0, 1.0);
    cloud.opacities[i] = std::clamp(sigmoid(v[6]), 1e-7, 1.0 - 1e-7);
    cloud.scales[i] = {std::exp(v[7]), std::exp(v[8]), std::exp(v[9])};
    Eigen::Quaterniond q(v[10], v[11], v[12], v[13]);
    require(q.norm() > 0.0, ErrorKind::data, path.string() + ": zero quaternion at element " + std::to_string(i));
    cloud.rotations[i] = q.normalized();
  }
  init_features(cloud, feature_dim, feature_seed);
  return cloud;
}

/// 3DGS-layout binary PLY (no features; they live in the sidecar).
inline std::string encode_ply(const GaussianCloud& cloud) {
  std::ostringstream out;
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
  const char* props[] = {"x",       "y",       "z",       "nx",      "ny",    "nz",    "f_dc_0", "f_dc_1", "f_dc_2",
                         "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",  "rot_3"};
  for (const char* p : props) out << "property float " << p << "\n";
  out << "end_header\n";
  std::string body;
  body.reserve(cloud.size() * 17 * 4);
  auto put = [&body](double value) { detail::put_u32(body, std::bit_cast<std::uint32_t>(static_cast<float>(value))); };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) put(cloud.positions[i][k]);
    for (int k = 0; k < 3; ++k) put(0.0);
    for (int k = 0; k < 3; ++k) put((cloud.colors[i][k] - 0.5) / kShC0);
    put(detail::logit(cloud.opacities[i]));
    for (int k = 0; k < 3; ++k) put(std::log(cloud.scales[i][k]));
    const auto& q = cloud.rotations[i];
    put(q.w());
    put(q.x());
    put(q.y());
    put(q.z());
  }
  return out.str() + body;
}

inline void save_ply(const GaussianCloud& cloud, const std::filesystem::path& path) { write_file(path, encode_ply(cloud)); }

/// Saves the member Gaussians as a standalone PLY.
inline void save_segmentation(const GaussianCloud& cloud, const std::vector<std::uint8_t>& membership,
                              const std::filesystem::path& path) {
  save_ply(cloud.subset(membership), path);
}

// ---------------------------------------------------------------------------
// Cameras and labels

inline nlohmann::json camera_to_json(const Camera& cam) {
  std::vector<double> m(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m[static_cast<std::size_t>(4 * r + c)] = cam.world_to_camera(r, c);
  return {{"id", cam.id}, {"width", cam.width}, {"height", cam.height}, {"fx", cam.fx},
          {"fy", cam.fy}, {"cx", cam.cx},       {"cy", cam.cy},         {"world_to_camera", m}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
  try {
    Camera cam;
    cam.id = j.at("id").is_string() ? j.at("id").get<std::string>() : std::to_string(j.at("id").get<long long>());
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const auto m = j.at("world_to_camera").get<std::vector<double>>();
    require(m.size() == 16, ErrorKind::format, "world_to_camera must have 16 entries");
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = m[static_cast<std::size_t>(4 * r + c)];
    cam.validate();
    return cam;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("camera JSON: ") + e.what());
  }
}

inline constexpr int kCameraSchemaVersion = 1;

/// Accepts the bare array form or {"version": 1, "cameras": [...]}.
inline std::vector<Camera> cameras_from_json(const nlohmann::json& j) {
  const nlohmann::json* list = &j;
  if (j.is_object()) {
    const int version = j.value("version", -1);
    require(version == kCameraSchemaVersion, ErrorKind::format,
            "unknown camera schema version " + std::to_string(version));
    require(j.contains("cameras") && j["cameras"].is_array(), ErrorKind::format, "camera file lacks 'cameras' array");
    list = &j["cameras"];
  }
  require(list->is_array(), ErrorKind::format, "camera file must be a JSON array");
  std::vector<Camera> cams;
  for (const auto& c : *list) cams.push_back(camera_from_json(c));
  return cams;
}

inline std::vector<Camera> load_cameras(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  return cameras_from_json(j);
}

inline void save_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cams) j.push_back(camera_to_json(c));
  write_file(path, j.dump(2));
}

inline const Camera& find_camera(const std::vector<Camera>& cams, const std::string& id) {
  for (const auto& c : cams)
    if (c.id == id) return c;
  fail(ErrorKind::argument, "unknown view '" + id + "'");
}

inline GroundTruthLabels load_labels(const std::filesystem::path& path) {
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    GroundTruthLabels labels{j.at("gaussian_labels").get<std::vector<int>>()};
    for (int l : labels.gaussian_labels) require(l >= 0, ErrorKind::data, "negative label in " + path.string());
    return labels;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
}

inline void save_labels(const GroundTruthLabels& labels, const std::filesystem::path& path) {
  write_file(path, nlohmann::json{{"gaussian_labels", labels.gaussian_labels}}.dump());
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SynthSpec {
  int objects = 5;
  int gaussians_per_object = 500;
  double separation = 3.0;
  double radius = 1.0;
  std::uint64_t seed = 0;
  int views = 8;
  int holdout_views = 4;
  int width = 64;
  int height = 64;
  std::size_t feature_dim = kDefaultFeatureDim;
  /// Gaussian scale relative to the mean inter-point spacing of a blob.
  double scale_factor = 0.6;
  /// Radial thickness of the sampled shell as a fraction of the semi-axes;
  /// 1 fills the whole ellipsoid.
  double shell = 0.1;
};

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  return {{"objects", s.objects},         {"gaussians_per_object", s.gaussians_per_object},
          {"separation", s.separation},   {"radius", s.radius},
          {"seed", s.seed},               {"views", s.views},
          {"holdout_views", s.holdout_views}, {"width", s.width},
          {"height", s.height},           {"feature_dim", s.feature_dim},
          {"scale_factor", s.scale_factor}, {"shell", s.shell}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.objects = j.value("objects", s.objects);
    s.gaussians_per_object = j.value("gaussians_per_object", s.gaussians_per_object);
    s.separation = j.value("separation", s.separation);
    s.radius = j.value("radius", s.radius);
    s.seed = j.value("seed", s.seed);
    s.views = j.value("views", s.views);
    s.holdout_views = j.value("holdout_views", s.holdout_views);
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.scale_factor = j.value("scale_factor", s.scale_factor);
    s.shell = j.value("shell", s.shell);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("synth spec: ") + e.what());
  }
  return s;
}

struct SynthScene {
  GaussianCloud cloud;
  std::vector<Camera> cameras;          ///< training views
  std::vector<Camera> holdout_cameras;  ///< evaluation-only views
  GroundTruthLabels labels;
  std::vector<Eigen::Vector3d> centers;  ///< per object, index = label - 1
};

/// Desk-scale oracle scene: `objects` blobs, each a uniform sample of a thin
/// shell (or, with shell = 1, the whole volume) of an
/// axis-aligned ellipsoid of semi-axes <= radius, centers pairwise at least
/// `separation` apart, cameras on a ring looking at the centroid.
inline SynthScene synth_scene(const SynthSpec& spec) {
  require(spec.objects >= 1, ErrorKind::argument, "synth_scene needs at least one object");
  require(spec.gaussians_per_object >= 1, ErrorKind::argument, "gaussians_per_object must be >= 1");
  require(spec.separation > 0.0 && spec.radius > 0.0, ErrorKind::argument, "separation and radius must be positive");
  require(spec.views >= 1 && spec.holdout_views >= 0, ErrorKind::argument, "invalid view counts");
  require(spec.width > 0 && spec.height > 0, ErrorKind::argument, "invalid image size");
  require(spec.shell > 0.0 && spec.shell <= 1.0, ErrorKind::argument, "shell must be in (0, 1]");

  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SynthScene scene;
  // Object centers by rejection sampling in a slab that grows if crowded.
  double extent = spec.separation * std::sqrt(static_cast<double>(spec.objects)) * 1.1;
  for (int attempt = 0; static_cast<int>(scene.centers.size()) < spec.objects; ++attempt) {
    if (attempt > 0 && attempt % 2000 == 0) {
      extent *= 1.2;
      scene.centers.clear();
    }
    Eigen::Vector3d c(uniform(-0.5 * extent, 0.5 * extent), uniform(-0.5 * extent, 0.5 * extent),
                      uniform(-0.3 * spec.radius, 0.3 * spec.radius));
    if (spec.objects == 1) c.setZero();
    bool ok = true;
    for (const auto& o : scene.centers) ok &= (o - c).norm() >= spec.separation;
    if (ok) scene.centers.push_back(c);
  }

  const std::size_t n = static_cast<std::size_t>(spec.objects) * static_cast<std::size_t>(spec.gaussians_per_object);
  GaussianCloud& cloud = scene.cloud;
  cloud.resize(n, spec.feature_dim);
  scene.labels.gaussian_labels.resize(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::size_t idx = 0;
  for (int o = 0; o < spec.objects; ++o) {
    const Eigen::Vector3d axes(uniform(0.7, 1.0) * spec.radius, uniform(0.7, 1.0) * spec.radius,
                               uniform(0.7, 1.0) * spec.radius);
    // Mean spacing of points spread over the shell: area-based for thin
    // shells, volume-based for solid ones.
    const double p = 1.6075;
    const double area = 4.0 * M_PI *
                        std::pow((std::pow(axes.x() * axes.y(), p) + std::pow(axes.x() * axes.z(), p) +
                                  std::pow(axes.y() * axes.z(), p)) / 3.0, 1.0 / p);
    const double volume = 4.0 / 3.0 * M_PI * axes.prod() * (1.0 - std::pow(1.0 - spec.shell, 3));
    const double spacing = std::min(std::sqrt(area / spec.gaussians_per_object),
                                    std::cbrt(volume / spec.gaussians_per_object));
    const Eigen::Vector3d base_color(uniform(0.1, 0.9), uniform(0.1, 0.9), uniform(0.1, 0.9));
    for (int k = 0; k < spec.gaussians_per_object; ++k, ++idx) {
      // Uniform in the unit ball restricted to radii in [1 - shell, 1].
      Eigen::Vector3d dir;
      do {
        dir = {gauss(rng), gauss(rng), gauss(rng)};
      } while (dir.squaredNorm() < 1e-12);
      const double inner = std::pow(1.0 - spec.shell, 3);
      const double radius = std::cbrt(inner + (1.0 - inner) * unit(rng));
      cloud.positions[idx] = scene.centers[static_cast<std::size_t>(o)] + (radius * dir.normalized()).cwiseProduct(axes);
      cloud.scales[idx] = Eigen::Vector3d(uniform(0.8, 1.2), uniform(0.8, 1.2), uniform(0.8, 1.2)) *
                          (spec.scale_factor * spacing);
      cloud.rotations[idx] = Eigen::Quaterniond(gauss(rng), gauss(rng), gauss(rng), gauss(rng)).normalized();
      cloud.opacities[idx] = uniform(0.6, 0.95);
      for (int c = 0; c < 3; ++c) cloud.colors[idx][c] = std::clamp(base_color[c] + uniform(-0.05, 0.05), 0.0, 1.0);
      scene.labels.gaussian_labels[idx] = o + 1;
    }
  }
  init_features(cloud, spec.feature_dim, spec.seed ^ 0x5eedf00dULL);

  // Camera ring around the centroid, framed to the scene's bounding radius.
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& c : scene.centers) centroid += c;
  centroid /= static_cast<double>(scene.centers.size());
  double bound = 0.0;
  for (const auto& c : scene.centers) bound = std::max(bound, (c - centroid).norm());
  bound += spec.radius;
  const double distance = 3.0 * bound;
  const double focal = 0.45 * std::min(spec.width, spec.height) * distance / bound;
  auto ring = [&](const std::string& prefix, int count, double phase, double elev_lo, double elev_hi) {
    std::vector<Camera> cams;
    for (int v = 0; v < count; ++v) {
      const double azimuth = 2.0 * M_PI * (v + phase) / count;
      const double elevation = (v % 2 == 0 ? elev_lo : elev_hi) * M_PI / 180.0;
      const Eigen::Vector3d eye =
          centroid + distance * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth),
                                                std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
      cams.push_back(look_at(prefix + std::to_string(v), eye, centroid, spec.width, spec.height, focal));
    }
    return cams;
  };
  scene.cameras = ring("view", spec.views, 0.0, 25.0, 40.0);
  scene.holdout_cameras = ring("holdout", spec.holdout_views, 0.5, 32.0, 32.0);
  return scene;
}

}  // namespace gsseg
