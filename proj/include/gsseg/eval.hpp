#pragma once

// Metrics: 2D mask IoU / pixel accuracy, 3D label IoU, and timing reports.

#include <chrono>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsseg/match.hpp"
#include "gsseg/masks.hpp"
#include "gsseg/scene.hpp"
#include "gsseg/splat.hpp"

namespace gsseg {

inline double mask_iou(const Mask& pred, const Mask& gt) {
  require(pred.size() == gt.size(), ErrorKind::argument, "mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double pixel_acc(const Mask& pred, const Mask& gt) {
  require(pred.size() == gt.size(), ErrorKind::argument, "mask sizes differ");
  if (pred.empty()) return 1.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) agree += (pred[i] != 0) == (gt[i] != 0);
  return static_cast<double>(agree) / static_cast<double>(pred.size());
}

inline constexpr double kMembershipAlphaThreshold = 0.5;

/// Accumulated alpha of the member Gaussians alone, thresholded at 0.5.
inline Mask render_membership_mask(const GaussianCloud& cloud, const std::vector<std::uint8_t>& membership,
                                   const Camera& cam) {
  require(membership.size() == cloud.size(), ErrorKind::argument, "membership size does not match the cloud");
  Mask out(cam.pixel_count(), 0);
  if (count_true(membership) == 0) return out;
  const auto table = build_blend_table(cloud, cam, &membership);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = table.alpha[p] >= kMembershipAlphaThreshold ? 1 : 0;
  return out;
}

inline double gaussian_label_iou(const std::vector<std::uint8_t>& membership, const GroundTruthLabels& labels, int label) {
  require(membership.size() == labels.gaussian_labels.size(), ErrorKind::argument,
          "membership size does not match the labels");
  require(labels.has_label(label), ErrorKind::argument, "unknown label " + std::to_string(label));
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < membership.size(); ++i) {
    const bool a = membership[i] != 0, b = labels.gaussian_labels[i] == label;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Wall-clock split of one segmentation request, in milliseconds.
struct Timing {
  double retrieving_ms = 0.0;
  double filtering_ms = 0.0;
  double growing_ms = 0.0;
  double total_ms = 0.0;

  nlohmann::json to_json() const {
    return {{"retrieving_ms", retrieving_ms}, {"filtering_ms", filtering_ms}, {"growing_ms", growing_ms}, {"total_ms", total_ms}};
  }
};

inline std::ostream& operator<<(std::ostream& os, const Timing& t) {
  return os << "retrieving " << t.retrieving_ms << " ms | filtering " << t.filtering_ms << " ms | growing "
            << t.growing_ms << " ms | total " << t.total_ms << " ms";
}

struct ViewScore {
  std::string view;
  double iou = 0.0;
  double acc = 0.0;
};

struct ObjectScore {
  int label = 0;
  double label_iou = 0.0;
  std::size_t members = 0;
};

struct EvalReport {
  std::string protocol;
  nlohmann::json scene;  ///< metadata: Gaussian count, views, seed, ...
  std::vector<ViewScore> views;
  std::vector<ObjectScore> objects;
  std::vector<Timing> timings;
  std::vector<double> retrieval_repeats_ms;  ///< repeated identical retrieval runs

  double miou() const {
    double s = 0.0;
    for (const auto& v : views) s += v.iou;
    return views.empty() ? 0.0 : s / static_cast<double>(views.size());
  }
  double macc() const {
    double s = 0.0;
    for (const auto& v : views) s += v.acc;
    return views.empty() ? 0.0 : s / static_cast<double>(views.size());
  }
  double mean_label_iou() const {
    double s = 0.0;
    for (const auto& o : objects) s += o.label_iou;
    return objects.empty() ? 0.0 : s / static_cast<double>(objects.size());
  }

  /// Mean and population variance of the repeated retrieval timings.
  std::pair<double, double> retrieval_stats() const {
    if (retrieval_repeats_ms.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double t : retrieval_repeats_ms) mean += t;
    mean /= static_cast<double>(retrieval_repeats_ms.size());
    double var = 0.0;
    for (double t : retrieval_repeats_ms) var += (t - mean) * (t - mean);
    return {mean, var / static_cast<double>(retrieval_repeats_ms.size())};
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["protocol"] = protocol;
    j["scene"] = scene;
    j["views"] = nlohmann::json::array();
    for (const auto& v : views) j["views"].push_back({{"view", v.view}, {"iou", v.iou}, {"acc", v.acc}});
    j["objects"] = nlohmann::json::array();
    for (const auto& o : objects)
      j["objects"].push_back({{"label", o.label}, {"label_iou", o.label_iou}, {"members", o.members}});
    j["mIoU"] = miou();
    j["mAcc"] = macc();
    j["mean_label_iou"] = mean_label_iou();
    j["timing"] = nlohmann::json::array();
    for (const auto& t : timings) j["timing"].push_back(t.to_json());
    if (!retrieval_repeats_ms.empty()) {
      const auto [mean, var] = retrieval_stats();
      j["retrieval_repeats"] = {{"runs", retrieval_repeats_ms.size()}, {"mean_ms", mean}, {"variance_ms2", var}};
    }
    return j;
  }

  /// One row per view and per object: kind,key,iou,acc.
  std::string to_csv() const {
    std::string out = "kind,key,iou,acc\n";
    for (const auto& v : views) out += "view," + v.view + "," + std::to_string(v.iou) + "," + std::to_string(v.acc) + "\n";
    for (const auto& o : objects) out += "object," + std::to_string(o.label) + "," + std::to_string(o.label_iou) + ",\n";
    return out;
  }
};

}  // namespace gsseg
