#pragma once

// Feature distillation: projector MLP over guidance features, the
// guidance (BCE) and correspondence (cosine) losses with analytic gradients,
// and the training loop that fits per-Gaussian features.

#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsseg/common.hpp"
#include "gsseg/masks.hpp"
#include "gsseg/scene.hpp"
#include "gsseg/splat.hpp"
#include "gsseg/tensor.hpp"

namespace gsseg {

struct DenseLayer {
  FeatureMatrix weight;  ///< out x in
  FeatureMatrix bias;    ///< 1 x out
};

/// MLP mapping guidance channels to the feature dimension; rectifier between
/// layers, none after the last.
class Projector {
public:
  Projector() = default;
  explicit Projector(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    require(!layers_.empty(), ErrorKind::argument, "projector needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      require(layers_[i].bias.rows() == 1 && layers_[i].bias.cols() == layers_[i].weight.rows(), ErrorKind::argument,
              "projector bias shape mismatch");
      if (i > 0)
        require(layers_[i].weight.cols() == layers_[i - 1].weight.rows(), ErrorKind::argument,
                "projector layer shapes do not chain");
    }
  }

  static Projector mlp(std::size_t input_dim, std::size_t output_dim, std::size_t hidden, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto make = [&](std::size_t in, std::size_t out) {
      DenseLayer l;
      l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
      const double stddev = std::sqrt(2.0 / static_cast<double>(in));
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = stddev * gauss(rng);
      l.bias = FeatureMatrix::Zero(1, static_cast<Eigen::Index>(out));
      return l;
    };
    return Projector({make(input_dim, hidden), make(hidden, output_dim)});
  }

  static Projector linear(FeatureMatrix weight, FeatureMatrix bias) {
    return Projector({DenseLayer{std::move(weight), std::move(bias)}});
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(layers_.front().weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers_.back().weight.rows()); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  /// Layer inputs retained for the backward pass.
  struct Cache {
    std::vector<FeatureMatrix> inputs;
  };

  FeatureMatrix forward(const FeatureMatrix& x, Cache* cache = nullptr) const {
    require(static_cast<std::size_t>(x.cols()) == input_dim(), ErrorKind::argument,
            "projector expects " + std::to_string(input_dim()) + " input channels, got " + std::to_string(x.cols()));
    if (cache) cache->inputs.clear();
    FeatureMatrix a = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (cache) cache->inputs.push_back(a);
      FeatureMatrix z = a * layers_[i].weight.transpose();
      z.rowwise() += layers_[i].bias.row(0);
      if (i + 1 < layers_.size()) z = z.cwiseMax(0.0);
      a = std::move(z);
    }
    return a;
  }

  /// Parameter gradients (same layout as layers()) given dL/d(output).
  std::vector<DenseLayer> backward(const Cache& cache, const FeatureMatrix& grad_out) const {
    std::vector<DenseLayer> grads(layers_.size());
    FeatureMatrix g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const FeatureMatrix& input = cache.inputs[i];
      grads[i].weight = g.transpose() * input;
      grads[i].bias = g.colwise().sum();
      if (i > 0) {
        FeatureMatrix prev = g * layers_[i].weight;
        g = prev.cwiseProduct((input.array() > 0.0).cast<double>().matrix());
      }
    }
    return grads;
  }

private:
  std::vector<DenseLayer> layers_;
};

/// Low-dimensional guidance grid: the projector applied per cell.
inline FeatureMatrix project_guidance(const GuidanceFeatureMap& gfm, const Projector& proj) {
  require(gfm.channels() == proj.input_dim(), ErrorKind::argument,
          "guidance has " + std::to_string(gfm.channels()) + " channels, projector expects " +
              std::to_string(proj.input_dim()));
  return proj.forward(gfm.values);
}

/// Masked average pooling over grid cells; nullopt when no cell is covered.
inline std::optional<Eigen::RowVectorXd> mask_query(const FeatureMatrix& grid, const Mask& cell_mask) {
  require(cell_mask.size() == static_cast<std::size_t>(grid.rows()), ErrorKind::argument, "cell mask size mismatch");
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(grid.cols());
  std::size_t n = 0;
  for (std::size_t k = 0; k < cell_mask.size(); ++k)
    if (cell_mask[k]) {
      sum += grid.row(static_cast<Eigen::Index>(k));
      ++n;
    }
  if (n == 0) return std::nullopt;
  return Eigen::RowVectorXd(sum / static_cast<double>(n));
}

namespace detail {
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
}  // namespace detail

/// Mean-over-masks guidance loss for a batch of queries (rows of `queries`).
/// Adds `scale`-weighted gradients into grad_rendered and grad_queries.
inline double accumulate_guidance_loss(const FeatureMatrix& queries, const FeatureMap& rendered,
                                       const std::vector<const Mask*>& masks, double scale, FeatureMatrix& grad_rendered,
                                       FeatureMatrix& grad_queries) {
  const auto hw = static_cast<Eigen::Index>(rendered.pixel_count());
  const FeatureMatrix logits = rendered.values * queries.transpose();  // HW x M
  FeatureMatrix dlogits(hw, queries.rows());
  double loss = 0.0;
  for (Eigen::Index m = 0; m < queries.rows(); ++m) {
    const Mask& mask = *masks[static_cast<std::size_t>(m)];
    double sum = 0.0;
    for (Eigen::Index p = 0; p < hw; ++p) {
      const double z = logits(p, m);
      const double target = mask[static_cast<std::size_t>(p)] ? 1.0 : 0.0;
      sum += detail::softplus(z) - target * z;
      dlogits(p, m) = (sigmoid(z) - target) * scale / static_cast<double>(hw);
    }
    loss += sum / static_cast<double>(hw);
  }
  grad_rendered.noalias() += dlogits * queries;
  grad_queries.noalias() += dlogits.transpose() * rendered.values;
  return scale * loss;
}

struct GuidanceLoss {
  double loss = 0.0;
  FeatureMatrix grad_rendered;
  Eigen::RowVectorXd grad_query;
};

/// Mean BCE between sigmoid(query . F^r_p) and the mask over all pixels.
inline GuidanceLoss guidance_loss(const Eigen::RowVectorXd& query, const FeatureMap& rendered, const Mask& mask) {
  require(static_cast<std::size_t>(query.size()) == rendered.channels(), ErrorKind::argument, "query dimension mismatch");
  require(mask.size() == rendered.pixel_count(), ErrorKind::argument, "mask size mismatch");
  GuidanceLoss out;
  out.grad_rendered = FeatureMatrix::Zero(rendered.values.rows(), rendered.values.cols());
  FeatureMatrix gq = FeatureMatrix::Zero(1, query.size());
  FeatureMatrix q = query;
  out.loss = accumulate_guidance_loss(q, rendered, {&mask}, 1.0, out.grad_rendered, gq);
  out.grad_query = gq.row(0);
  return out;
}

struct CorrespondenceLoss {
  double loss = 0.0;
  FeatureMatrix grad_rendered;
  std::size_t used_pairs = 0;
};

inline constexpr double kMinFeatureNorm = 1e-8;

/// -mean_k K_k cos(F^r_{p1}, F^r_{p2}) over pairs whose features are non-degenerate.
/// Adds `scale`-weighted gradients into grad_rendered.
inline double accumulate_correspondence_loss(const FeatureMap& rendered, const std::vector<PixelPair>& pairs,
                                             double scale, FeatureMatrix& grad_rendered, std::size_t* used = nullptr) {
  const Eigen::Index c = rendered.values.cols();
  std::vector<std::size_t> valid;
  valid.reserve(pairs.size());
  std::vector<double> norms(pairs.size() * 2);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double na = rendered.at(pairs[k].p1.x, pairs[k].p1.y).norm();
    const double nb = rendered.at(pairs[k].p2.x, pairs[k].p2.y).norm();
    norms[2 * k] = na;
    norms[2 * k + 1] = nb;
    if (na > kMinFeatureNorm && nb > kMinFeatureNorm) valid.push_back(k);
  }
  if (used) *used = valid.size();
  if (valid.empty()) {
    warn("correspondence loss: every sampled pair is degenerate; contributing zero");
    return 0.0;
  }
  const double inv_n = 1.0 / static_cast<double>(valid.size());
  double loss = 0.0;
  for (std::size_t k : valid) {
    const auto& pr = pairs[k];
    const Eigen::Index ia = static_cast<Eigen::Index>(pr.p1.y) * rendered.width + pr.p1.x;
    const Eigen::Index ib = static_cast<Eigen::Index>(pr.p2.y) * rendered.width + pr.p2.x;
    const double na = norms[2 * k], nb = norms[2 * k + 1];
    const auto a = rendered.values.row(ia);
    const auto b = rendered.values.row(ib);
    const double cos = a.dot(b) / (na * nb);
    loss -= pr.corr * cos;
    if (pr.corr == 0.0) continue;
    const double g = -pr.corr * scale * inv_n;
    // d cos / d a = b / (|a||b|) - cos * a / |a|^2
    for (Eigen::Index j = 0; j < c; ++j) {
      const double aj = a[j], bj = b[j];
      grad_rendered(ia, j) += g * (bj / (na * nb) - cos * aj / (na * na));
      grad_rendered(ib, j) += g * (aj / (na * nb) - cos * bj / (nb * nb));
    }
  }
  return scale * loss * inv_n;
}

inline CorrespondenceLoss correspondence_loss(const FeatureMap& rendered, const std::vector<PixelPair>& pairs) {
  CorrespondenceLoss out;
  out.grad_rendered = FeatureMatrix::Zero(rendered.values.rows(), rendered.values.cols());
  out.loss = accumulate_correspondence_loss(rendered, pairs, 1.0, out.grad_rendered, &out.used_pairs);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Adaptive moment estimation for one parameter block.
class Adam {
public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(FeatureMatrix& param, const FeatureMatrix& grad) {
    if (m_.size() == 0) {
      m_ = FeatureMatrix::Zero(param.rows(), param.cols());
      v_ = FeatureMatrix::Zero(param.rows(), param.cols());
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const Eigen::Index n = param.size();
    double* p = param.data();
    double* m = m_.data();
    double* v = v_.data();
    const double* g = grad.data();
    for (Eigen::Index i = 0; i < n; ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }

private:
  double lr_, beta1_, beta2_, eps_;
  FeatureMatrix m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int iterations = 20000;
  double lambda = 1.0;
  double lr_features = 2.5e-3;
  double lr_projector = 1e-4;
  std::size_t pairs_per_view = 4096;
  std::size_t masks_per_step = 16;
  std::size_t feature_dim = kDefaultFeatureDim;
  std::size_t projector_hidden = 256;
  std::uint64_t seed = 0;
};

struct LossRecord {
  double total = 0.0;
  double guidance = 0.0;
  double correspondence = 0.0;
};

struct TrainResult {
  FeatureMatrix features;
  std::optional<Projector> projector;
  std::vector<LossRecord> history;
};

struct TrainInputs {
  const GaussianCloud& cloud;
  const std::vector<Camera>& cameras;
  const std::vector<MaskStack>& stacks;
  const std::vector<GuidanceFeatureMap>* guidance = nullptr;  ///< optional; absent disables the guidance loss
};

/// Fits per-Gaussian features. One view per iteration, round-robin. Frozen
/// attributes of the cloud are only read.
inline TrainResult train(const TrainInputs& in, const TrainConfig& cfg) {
  require(cfg.iterations >= 1, ErrorKind::config, "iterations must be >= 1");
  require(cfg.lambda >= 0.0, ErrorKind::config, "lambda must be >= 0");
  require(!in.cameras.empty(), ErrorKind::config, "no training views");
  require(in.cloud.feature_dim() == cfg.feature_dim, ErrorKind::config,
          "cloud feature dimension " + std::to_string(in.cloud.feature_dim()) + " != configured " +
              std::to_string(cfg.feature_dim));

  std::vector<const MaskStack*> stacks;
  std::vector<const GuidanceFeatureMap*> guides;
  for (const auto& cam : in.cameras) {
    const MaskStack* found = nullptr;
    for (const auto& s : in.stacks)
      if (s.view_id() == cam.id) found = &s;
    require(found != nullptr && found->mask_count() > 0, ErrorKind::config, "view " + cam.id + " has no masks");
    require(found->width() == cam.width && found->height() == cam.height, ErrorKind::config,
            "mask stack of view " + cam.id + " does not match the camera size");
    stacks.push_back(found);
    const GuidanceFeatureMap* g = nullptr;
    if (in.guidance)
      for (const auto& m : *in.guidance)
        if (m.view_id == cam.id) g = &m;
    guides.push_back(g);
  }

  TrainResult result;
  result.features = in.cloud.features;
  std::size_t guidance_channels = 0;
  for (const auto* g : guides)
    if (g) {
      require(guidance_channels == 0 || guidance_channels == g->channels(), ErrorKind::config,
              "guidance maps disagree on channel count");
      guidance_channels = g->channels();
    }
  if (guidance_channels > 0)
    result.projector = Projector::mlp(guidance_channels, cfg.feature_dim, cfg.projector_hidden, cfg.seed + 1);

  std::vector<BlendTable> tables;
  tables.reserve(in.cameras.size());
  for (const auto& cam : in.cameras) tables.push_back(build_blend_table(in.cloud, cam));
  std::vector<std::vector<Mask>> cell_masks(in.cameras.size());
  for (std::size_t v = 0; v < in.cameras.size(); ++v)
    if (guides[v])
      for (const auto& m : stacks[v]->masks()) cell_masks[v].push_back(guides[v]->downsample(m));

  Rng rng(cfg.seed);
  Adam feature_opt(cfg.lr_features);
  std::vector<Adam> weight_opts, bias_opts;
  if (result.projector)
    for (std::size_t i = 0; i < result.projector->layers().size(); ++i) {
      weight_opts.emplace_back(cfg.lr_projector);
      bias_opts.emplace_back(cfg.lr_projector);
    }

  result.history.reserve(static_cast<std::size_t>(cfg.iterations));
  std::vector<std::size_t> order;
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::size_t v = static_cast<std::size_t>(it) % in.cameras.size();
    const bool use_guidance = guides[v] != nullptr;
    const bool use_corr = cfg.lambda > 0.0;
    LossRecord rec;
    if (!use_guidance && !use_corr) {
      result.history.push_back(rec);
      continue;
    }
    const FeatureMap rendered = render_features(tables[v], result.features);
    FeatureMatrix grad_rendered = FeatureMatrix::Zero(rendered.values.rows(), rendered.values.cols());

    if (use_guidance) {
      Projector::Cache cache;
      const FeatureMatrix grid = result.projector->forward(guides[v]->values, &cache);
      order.resize(stacks[v]->mask_count());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      if (order.size() > cfg.masks_per_step) order.resize(cfg.masks_per_step);

      std::vector<std::size_t> used;
      std::vector<Eigen::RowVectorXd> queries;
      for (std::size_t m : order) {
        if (auto q = mask_query(grid, cell_masks[v][m])) {
          used.push_back(m);
          queries.push_back(*q);
        }
      }
      if (!used.empty()) {
        FeatureMatrix q(static_cast<Eigen::Index>(used.size()), grid.cols());
        std::vector<const Mask*> masks;
        for (std::size_t k = 0; k < used.size(); ++k) {
          q.row(static_cast<Eigen::Index>(k)) = queries[k];
          masks.push_back(&stacks[v]->mask(used[k]));
        }
        FeatureMatrix grad_q = FeatureMatrix::Zero(q.rows(), q.cols());
        rec.guidance = accumulate_guidance_loss(q, rendered, masks, 1.0 / static_cast<double>(used.size()),
                                                grad_rendered, grad_q);
        // Pooling backward: each covered cell receives grad_q / |cells|.
        FeatureMatrix grad_grid = FeatureMatrix::Zero(grid.rows(), grid.cols());
        for (std::size_t k = 0; k < used.size(); ++k) {
          const Mask& cm = cell_masks[v][used[k]];
          const double inv = 1.0 / static_cast<double>(count_true(cm));
          for (std::size_t cell = 0; cell < cm.size(); ++cell)
            if (cm[cell]) grad_grid.row(static_cast<Eigen::Index>(cell)) += inv * grad_q.row(static_cast<Eigen::Index>(k));
        }
        const auto grads = result.projector->backward(cache, grad_grid);
        auto& layers = result.projector->layers();
        for (std::size_t l = 0; l < layers.size(); ++l) {
          weight_opts[l].step(layers[l].weight, grads[l].weight);
          bias_opts[l].step(layers[l].bias, grads[l].bias);
        }
      }
    }
    if (use_corr) {
      const auto pairs = sample_pairs(*stacks[v], cfg.pairs_per_view, rng);
      rec.correspondence = accumulate_correspondence_loss(rendered, pairs, cfg.lambda, grad_rendered) / cfg.lambda;
    }
    rec.total = rec.guidance + cfg.lambda * rec.correspondence;
    result.history.push_back(rec);
    feature_opt.step(result.features, backward_features(tables[v], grad_rendered));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sidecar persistence: manifest.json + GSTEN tensors in one directory.

struct TrainedModel {
  FeatureMatrix features;
  std::optional<Projector> projector;
  std::size_t guidance_channels = 0;
  int iterations = 0;
  double lambda = 1.0;
  std::uint64_t seed = 0;
};

inline void save_trained(const TrainedModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "features.gsten", matrix_to_tensor(model.features));
  std::size_t layer_count = 0;
  if (model.projector) {
    const auto& layers = model.projector->layers();
    layer_count = layers.size();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      save_tensor(dir / ("projector_" + std::to_string(i) + "_weight.gsten"), matrix_to_tensor(layers[i].weight));
      save_tensor(dir / ("projector_" + std::to_string(i) + "_bias.gsten"), matrix_to_tensor(layers[i].bias));
    }
  }
  const nlohmann::json manifest{{"C", model.features.cols()},
                                {"C_sam", model.projector ? model.projector->input_dim() : model.guidance_channels},
                                {"N", model.features.rows()},
                                {"iterations", model.iterations},
                                {"lambda", model.lambda},
                                {"seed", model.seed},
                                {"projector_layers", layer_count}};
  write_file(dir / "manifest.json", manifest.dump(2));
}

inline TrainedModel load_trained(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir / "manifest.json"), ErrorKind::state,
          "no trained features at " + dir.string() + " (manifest.json missing)");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, (dir / "manifest.json").string() + ": " + e.what());
  }
  TrainedModel model;
  model.features = tensor_to_matrix(load_tensor(dir / "features.gsten"));
  require(static_cast<std::size_t>(model.features.cols()) == manifest.value("C", std::size_t{0}), ErrorKind::format,
          "feature tensor dimension disagrees with manifest");
  model.iterations = manifest.value("iterations", 0);
  model.lambda = manifest.value("lambda", 1.0);
  model.seed = manifest.value("seed", std::uint64_t{0});
  model.guidance_channels = manifest.value("C_sam", std::size_t{0});
  const std::size_t layers = manifest.value("projector_layers", std::size_t{0});
  if (layers > 0) {
    std::vector<DenseLayer> ls;
    for (std::size_t i = 0; i < layers; ++i)
      ls.push_back({tensor_to_matrix(load_tensor(dir / ("projector_" + std::to_string(i) + "_weight.gsten"))),
                    tensor_to_matrix(load_tensor(dir / ("projector_" + std::to_string(i) + "_bias.gsten")))});
    model.projector = Projector(std::move(ls));
  }
  return model;
}

}  // namespace gsseg
