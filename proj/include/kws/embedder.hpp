#pragma once

// Frame-wise affine embedder trained with the TACos loss. Each log-Mel frame
// is mapped independently, so an embedding keeps the segment's time axis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "kws/error.hpp"
#include "kws/labels.hpp"
#include "kws/log.hpp"
#include "kws/tacos.hpp"
#include "kws/types.hpp"

namespace kws {

struct FrameEmbedder {
  Matrix weight;   // input_dim x D_emb
  RowVector bias;  // D_emb

  int input_dim() const { return static_cast<int>(weight.rows()); }
  int dim() const { return static_cast<int>(weight.cols()); }

  /// T x input_dim -> T x D_emb
  Matrix embed(const Matrix& frames) const {
    if (frames.cols() != weight.rows()) throw ParameterError("feature width does not match embedder input");
    Matrix out = frames * weight;
    out.rowwise() += bias;
    return out;
  }
};

struct TrainConfig {
  int d_emb = 128;
  int n_cluster = 16;
  double lr = 0.01;
  int epochs = 60;
  int batch = 32;
  std::uint64_t seed = 0;
  bool reversed = true;
  bool pos_loss = true;
};

/// Everything needed to embed audio and score against the trained centres.
struct EmbeddingModel {
  FrameEmbedder embedder;
  ClusterCenters centers;
  AdaptiveScale scale;
  KeywordLabelSpace label_space;
  int n_pos = 1;
  TrainConfig config;
};

struct TrainResult {
  EmbeddingModel model;
  std::vector<double> loss_trace;  // mean batch loss per epoch
};

namespace detail {

/// Adam state for one parameter matrix.
struct AdamSlot {
  Matrix m;
  Matrix v;

  void step(Matrix& param, const Matrix& grad, double lr, long t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (m.size() == 0) {
      m = Matrix::Zero(param.rows(), param.cols());
      v = Matrix::Zero(param.rows(), param.cols());
    }
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace detail

/// Trains embedder and centres by mini-batch Adam on the TACos loss; s-hat is
/// updated once per batch before the loss. Input frames are standardised per
/// bin during training and the standardisation is folded into the returned
/// affine map. Deterministic for a given seed.
inline TrainResult train_toy_embedder(const std::vector<LabeledSegment>& corpus, const KeywordLabelSpace& space,
                                      int n_pos, const TrainConfig& cfg) {
  if (corpus.empty()) throw ParameterError("empty training corpus");
  if (cfg.d_emb < 1 || cfg.n_cluster < 1 || cfg.batch < 1 || cfg.epochs < 0 || !(cfg.lr > 0.0))
    throw ParameterError("invalid training configuration");
  const Eigen::Index in_dim = corpus.front().features.cols();
  for (const auto& s : corpus) {
    if (s.features.cols() != in_dim || s.features.rows() < 1) throw ParameterError("inconsistent segment features");
    if (static_cast<int>(s.label.y_kw.size()) != space.n_classes() || static_cast<int>(s.label.y_pos.size()) != n_pos)
      throw ParameterError("segment label does not match label space");
  }

  // Per-bin standardisation statistics.
  RowVector mean = RowVector::Zero(in_dim);
  RowVector sq = RowVector::Zero(in_dim);
  double count = 0.0;
  for (const auto& s : corpus) {
    mean += s.features.colwise().sum();
    sq += s.features.array().square().matrix().colwise().sum();
    count += static_cast<double>(s.features.rows());
  }
  mean /= count;
  RowVector stdev = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index j = 0; j < in_dim; ++j) stdev[j] = std::max(stdev[j], 1e-3);

  std::vector<Matrix> inputs;
  inputs.reserve(corpus.size());
  for (const auto& s : corpus) {
    Matrix x = s.features;
    x.rowwise() -= mean;
    x.array().rowwise() /= stdev.array();
    inputs.push_back(std::move(x));
  }

  std::mt19937_64 rng(cfg.seed);
  FrameEmbedder net;
  {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    net.weight.resize(in_dim, cfg.d_emb);
    for (Eigen::Index i = 0; i < net.weight.size(); ++i) net.weight.data()[i] = normal(rng);
    net.bias = RowVector::Zero(cfg.d_emb);
  }
  ClusterCenters centers = ClusterCenters::random_unit(cfg.n_cluster, space.n_classes(), n_pos, cfg.d_emb, rng());
  AdaptiveScale scale = AdaptiveScale::initial(centers.n_cells());
  const LossWeights weights{1.0, cfg.pos_loss ? 1.0 : 0.0};

  std::vector<int> classes;
  classes.reserve(corpus.size());
  for (const auto& s : corpus) classes.push_back(s.class_index);

  detail::AdamSlot adam_w, adam_b, adam_c;
  long step = 0;
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.epochs));
  std::vector<Matrix> embeddings;
  std::vector<LossItem> items;
  std::vector<Matrix> thetas;
  std::vector<SegmentLabel> labels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> plan = oversample_plan(classes, rng);
    std::shuffle(plan.begin(), plan.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < plan.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(plan.size(), start + static_cast<std::size_t>(cfg.batch));
      embeddings.clear();
      items.clear();
      thetas.clear();
      labels.clear();
      for (std::size_t k = start; k < end; ++k) embeddings.push_back(net.embed(inputs[plan[k]]));
      TacosGradients g;
      try {
        for (std::size_t k = start; k < end; ++k) {
          items.push_back({&embeddings[k - start], &corpus[plan[k]].label});
          labels.push_back(corpus[plan[k]].label);
          thetas.push_back(similarity(embeddings[k - start], centers));
        }
        scale = update_scale(thetas, labels, scale);
        g = tacos_gradients(items, centers, scale, weights);
      } catch (const NumericDomainError& e) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
      if (!std::isfinite(g.loss.total))
        throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch + 1) + " (scale " +
                            std::to_string(scale.value) + ")");
      Matrix d_w = Matrix::Zero(net.weight.rows(), net.weight.cols());
      Matrix d_b = Matrix::Zero(1, net.bias.size());
      for (std::size_t k = start; k < end; ++k) {
        const Matrix& d_e = g.d_embedding[k - start];
        d_w.noalias() += inputs[plan[k]].transpose() * d_e;
        d_b += d_e.colwise().sum();
      }
      ++step;
      adam_w.step(net.weight, d_w, cfg.lr, step);
      Matrix bias_m = net.bias;
      adam_b.step(bias_m, d_b, cfg.lr, step);
      net.bias = bias_m.row(0);
      adam_c.step(centers.rows, g.d_centers, cfg.lr, step);
      epoch_loss += g.loss.total;
      ++batches;
    }
    trace.push_back(epoch_loss / std::max(batches, 1));
    log::debug("epoch ", epoch + 1, " loss ", trace.back(), " scale ", scale.value);
  }

  // Fold standardisation: ((x - mean) / std) W + b = x W' + b'.
  TrainResult result;
  FrameEmbedder& folded = result.model.embedder;
  folded.weight = net.weight;
  for (Eigen::Index j = 0; j < in_dim; ++j) folded.weight.row(j) /= stdev[j];
  folded.bias = net.bias - mean * folded.weight;
  result.model.centers = std::move(centers);
  result.model.scale = scale;
  result.model.label_space = space;
  result.model.n_pos = n_pos;
  result.model.config = cfg;
  result.loss_trace = std::move(trace);
  return result;
}

}  // namespace kws
