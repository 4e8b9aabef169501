#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsseg/common.hpp"
#include "gsseg/prompt.hpp"
#include "gsseg/tensor.hpp"

namespace gsseg {

enum class Stage { raw, filtered, grown };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::raw: return "raw";
    case Stage::filtered: return "filtered";
    case Stage::grown: return "grown";
  }
  return "?";
}

struct Segmentation {
  std::vector<std::uint8_t> membership;
  Eigen::VectorXd scores;  ///< positive score per Gaussian
  Stage stage = Stage::raw;
  std::string prompt_id;

  std::size_t count() const { return count_true(membership); }
  std::size_t size() const { return membership.size(); }
};

struct Scores {
  Eigen::VectorXd positive;
  std::optional<Eigen::VectorXd> negative;
};

namespace detail {

/// Per-row max of features . queries^T; rows of zero norm score -1 under cosine.
inline Eigen::VectorXd max_similarity(const FeatureMatrix& features, const std::vector<Eigen::RowVectorXd>& queries,
                                      Metric metric) {
  const Eigen::Index n = features.rows();
  FeatureMatrix q(static_cast<Eigen::Index>(queries.size()), features.cols());
  for (std::size_t k = 0; k < queries.size(); ++k) {
    require(queries[k].size() == features.cols(), ErrorKind::argument, "query dimension does not match features");
    require(queries[k].allFinite(), ErrorKind::argument, "query is not finite");
    q.row(static_cast<Eigen::Index>(k)) = queries[k];
  }
  Eigen::VectorXd norms;
  if (metric == Metric::cosine) {
    for (Eigen::Index k = 0; k < q.rows(); ++k) {
      const double qn = q.row(k).norm();
      q.row(k) = qn > 0.0 ? Eigen::RowVectorXd(q.row(k) / qn) : Eigen::RowVectorXd::Zero(q.cols());
    }
    norms = features.rowwise().norm();
  }
  Eigen::VectorXd best = Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
  constexpr Eigen::Index kBlock = 4096;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - start);
    const FeatureMatrix s = features.middleRows(start, len) * q.transpose();
    for (Eigen::Index i = 0; i < len; ++i) {
      double v = s.row(i).maxCoeff();
      if (metric == Metric::cosine) {
        const double fn = norms[start + i];
        v = fn > 0.0 ? v / fn : -1.0;
      }
      best[start + i] = v;
    }
  }
  return best;
}

}  // namespace detail

/// Per-Gaussian max similarity to the positive (and negative) queries.
inline Scores score(const FeatureMatrix& features, const QuerySet& qs) {
  require(!qs.positives.empty(), ErrorKind::argument, "query set has no positive query");
  Scores s;
  s.positive = detail::max_similarity(features, qs.positives, qs.metric);
  if (!qs.negatives.empty()) s.negative = detail::max_similarity(features, qs.negatives, qs.metric);
  return s;
}

/// S^p > S^n (when negatives exist) and S^p > mean of all S^p.
inline Segmentation select_cosine(const Scores& s) {
  Segmentation seg;
  const Eigen::Index n = s.positive.size();
  seg.scores = s.positive;
  seg.membership.assign(static_cast<std::size_t>(n), 0);
  if (n == 0) return seg;
  const double tau = s.positive.mean();
  for (Eigen::Index i = 0; i < n; ++i) {
    bool in = s.positive[i] > tau;
    if (s.negative) in = in && s.positive[i] > (*s.negative)[i];
    seg.membership[static_cast<std::size_t>(i)] = in ? 1 : 0;
  }
  return seg;
}

/// Cosine threshold: mean over Gaussians of the per-Gaussian max positive score.
inline double cosine_threshold(const Eigen::VectorXd& positive) { return positive.size() ? positive.mean() : 0.0; }

/// mean + population standard deviation of the scores.
inline double dot_threshold(const Eigen::VectorXd& positive) {
  if (positive.size() == 0) return 0.0;
  const double mean = positive.mean();
  const double var = (positive.array() - mean).square().mean();
  return mean + std::sqrt(var);
}

/// S^p > mean(S^p) + std(S^p).
inline Segmentation select_dot(const Eigen::VectorXd& positive) {
  Segmentation seg;
  seg.scores = positive;
  seg.membership.assign(static_cast<std::size_t>(positive.size()), 0);
  const double tau = dot_threshold(positive);
  for (Eigen::Index i = 0; i < positive.size(); ++i) seg.membership[static_cast<std::size_t>(i)] = positive[i] > tau ? 1 : 0;
  return seg;
}

inline Segmentation select(const Scores& s, Metric metric) {
  return metric == Metric::cosine ? select_cosine(s) : select_dot(s.positive);
}

// ---------------------------------------------------------------------------
// Serialization: membership as an LSB-first bitset in base64, scores as a
// base64 GSTEN f32 [N] tensor.

inline std::string encode_membership(const std::vector<std::uint8_t>& membership) {
  std::string bits((membership.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < membership.size(); ++i)
    if (membership[i]) bits[i / 8] = static_cast<char>(static_cast<unsigned char>(bits[i / 8]) | (1u << (i % 8)));
  return detail::base64_encode(bits);
}

inline std::vector<std::uint8_t> decode_membership(std::string_view b64, std::size_t n) {
  const std::string bits = detail::base64_decode(b64);
  require(bits.size() == (n + 7) / 8, ErrorKind::format, "membership bitset length does not match N");
  std::vector<std::uint8_t> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = (static_cast<unsigned char>(bits[i / 8]) >> (i % 8)) & 1u;
  return m;
}

inline nlohmann::json segmentation_to_json(const Segmentation& seg) {
  std::vector<float> scores(static_cast<std::size_t>(seg.scores.size()));
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<float>(seg.scores[static_cast<Eigen::Index>(i)]);
  return {{"size", seg.size()},
          {"count", seg.count()},
          {"membership", encode_membership(seg.membership)},
          {"scores", detail::base64_encode(encode_tensor(Tensor::floats({static_cast<std::uint32_t>(scores.size())}, scores)))},
          {"stage", to_string(seg.stage)},
          {"prompt_id", seg.prompt_id}};
}

inline Segmentation segmentation_from_json(const nlohmann::json& j) {
  try {
    Segmentation seg;
    const std::size_t n = j.at("size").get<std::size_t>();
    seg.membership = decode_membership(j.at("membership").get<std::string>(), n);
    const Tensor t = decode_tensor(detail::base64_decode(j.at("scores").get<std::string>()));
    require(t.dtype == DType::f32 && t.element_count() == n, ErrorKind::format, "scores tensor does not match N");
    seg.scores.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) seg.scores[static_cast<Eigen::Index>(i)] = t.f32[i];
    const std::string stage = j.at("stage").get<std::string>();
    if (stage == "raw") seg.stage = Stage::raw;
    else if (stage == "filtered") seg.stage = Stage::filtered;
    else if (stage == "grown") seg.stage = Stage::grown;
    else fail(ErrorKind::format, "unknown segmentation stage '" + stage + "'");
    seg.prompt_id = j.value("prompt_id", std::string{});
    return seg;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("segmentation JSON: ") + e.what());
  }
}

}  // namespace gsseg
