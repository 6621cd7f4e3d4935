#pragma once

// Temporal angular-margin loss over (keyword x relative position) cells with
// sub-cluster centres and an adaptive softmax scale.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "kws/error.hpp"
#include "kws/labels.hpp"
#include "kws/types.hpp"

namespace kws {

/// Centre tensor of shape N_cluster x N_kw x N_pos x D_emb, stored as a
/// matrix with one row per (cluster, kw, pos) in that (row-major) order.
struct ClusterCenters {
  int n_cluster = 0;
  int n_kw = 0;
  int n_pos = 0;
  Matrix rows;

  int dim() const { return static_cast<int>(rows.cols()); }
  int n_cells() const { return n_kw * n_pos; }
  Eigen::Index row_index(int cluster, int kw, int pos) const {
    return (static_cast<Eigen::Index>(cluster) * n_kw + kw) * n_pos + pos;
  }

  static ClusterCenters random_unit(int n_cluster, int n_kw, int n_pos, int dim, std::uint64_t seed) {
    if (n_cluster < 1 || n_kw < 1 || n_pos < 1 || dim < 1) throw ParameterError("centre dimensions must be >= 1");
    ClusterCenters c{n_cluster, n_kw, n_pos, Matrix(static_cast<Eigen::Index>(n_cluster) * n_kw * n_pos, dim)};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index r = 0; r < c.rows.rows(); ++r) {
      do {
        for (Eigen::Index j = 0; j < dim; ++j) c.rows(r, j) = normal(rng);
      } while (c.rows.row(r).norm() == 0.0);
      c.rows.row(r).normalize();
    }
    return c;
  }
};

/// Softmax temperature s-hat, AdaCos style.
struct AdaptiveScale {
  double value = 1.0;

  static constexpr double kMin = 1.0;
  static constexpr double kMax = 100.0;

  /// sqrt(2) * ln(C - 1) for C = N_kw * N_pos cells (clamped to [1, 100]).
  static AdaptiveScale initial(int n_cells) {
    if (n_cells < 2) return {kMin};
    return {std::clamp(std::numbers::sqrt2 * std::log(static_cast<double>(n_cells - 1)), kMin, kMax)};
  }
};

struct LossWeights {
  double kw = 1.0;
  double pos = 1.0;
};

inline constexpr double kProbabilityFloor = 1e-30;

/// Per-item outputs. loss_kw / loss_pos are the (non-positive) label-weighted
/// log-probabilities; loss_total = -(w_kw * loss_kw + w_pos * loss_pos).
struct LossOutput {
  Matrix theta;
  Matrix s;
  double loss_kw = 0.0;
  double loss_pos = 0.0;
  double loss_total = 0.0;
};

struct BatchLoss {
  std::vector<LossOutput> items;
  double total = 0.0;
};

struct LossItem {
  const Matrix* embedding = nullptr;  // T x D_emb
  const SegmentLabel* label = nullptr;
};

namespace detail {

/// Unit-normalised rows; throws on a zero row.
inline void unit_rows(const Matrix& m, Matrix& unit, Vector& norms, const char* what) {
  norms = m.rowwise().norm();
  unit.resize(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (!(norms[r] > 0.0) || !std::isfinite(norms[r]))
      throw NumericDomainError(std::string("zero-norm or non-finite ") + what + " row " + std::to_string(r));
    unit.row(r) = m.row(r) / norms[r];
  }
}

struct UnitCenters {
  Matrix unit;
  Vector norms;
};

inline UnitCenters normalize_centers(const ClusterCenters& c) {
  UnitCenters u;
  unit_rows(c.rows, u.unit, u.norms, "centre");
  return u;
}

/// theta plus the information needed to back-propagate through it.
struct SimilarityTrace {
  Matrix theta;         // N_kw x N_pos
  Matrix unit_frames;   // T x D
  Vector frame_norms;   // T
  std::vector<int> winner;  // T * cells, attaining cluster per (t, cell)
};

inline SimilarityTrace trace_similarity(const Matrix& e, const ClusterCenters& c, const UnitCenters& uc) {
  if (e.cols() != c.dim()) throw ParameterError("embedding and centre dimensions differ");
  if (e.rows() < 1) throw ParameterError("embedding has no frames");
  SimilarityTrace tr;
  unit_rows(e, tr.unit_frames, tr.frame_norms, "embedding");
  const Matrix cosines = tr.unit_frames * uc.unit.transpose();  // T x R
  const int cells = c.n_cells();
  const Eigen::Index T = e.rows();
  tr.theta = Matrix::Zero(c.n_kw, c.n_pos);
  tr.winner.assign(static_cast<std::size_t>(T * cells), 0);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int a = 0; a < cells; ++a) {
      int best = 0;
      double best_cos = cosines(t, a);
      for (int k = 1; k < c.n_cluster; ++k) {
        const double v = cosines(t, static_cast<Eigen::Index>(k) * cells + a);
        if (v > best_cos) {  // ties keep the lowest cluster index
          best_cos = v;
          best = k;
        }
      }
      tr.winner[static_cast<std::size_t>(t * cells + a)] = best;
      tr.theta(a / c.n_pos, a % c.n_pos) += std::clamp(best_cos, -1.0, 1.0);
    }
  }
  tr.theta /= static_cast<double>(T);
  return tr;
}

/// Weight of each item in the batch loss: 1 / (K * segments of its sample in the batch).
inline std::vector<double> item_weights(std::span<const LossItem> items) {
  std::map<std::size_t, int> per_sample;
  for (const auto& it : items) ++per_sample[it.label->sample_id];
  const double k = static_cast<double>(per_sample.size());
  std::vector<double> w;
  w.reserve(items.size());
  for (const auto& it : items) w.push_back(1.0 / (k * per_sample[it.label->sample_id]));
  return w;
}

inline void check_label(const SegmentLabel& label, const ClusterCenters& c) {
  if (static_cast<int>(label.y_kw.size()) != c.n_kw || static_cast<int>(label.y_pos.size()) != c.n_pos)
    throw ParameterError("label shape does not match centre tensor");
}

}  // namespace detail

/// theta(kw, pos) = mean over frames of the best cosine over sub-clusters.
inline Matrix similarity(const Matrix& e, const ClusterCenters& c) {
  return detail::trace_similarity(e, c, detail::normalize_centers(c)).theta;
}

/// Joint softmax over all (kw, pos) cells with scale s-hat.
inline Matrix joint_softmax(const Matrix& theta, AdaptiveScale scale) {
  const Matrix z = scale.value * theta;
  const double m = z.maxCoeff();
  Matrix s = (z.array() - m).exp().matrix();
  s /= s.sum();
  return s;
}

/// Probability of each keyword (sum over positions).
inline Vector keyword_marginal(const Matrix& s) { return s.rowwise().sum(); }
/// Probability of each position (sum over keywords).
inline Vector position_marginal(const Matrix& s) { return s.colwise().sum().transpose(); }

namespace detail {

inline bool is_labeled_cell(const SegmentLabel& label, int kw, int pos) {
  return label.y_kw[kw] > 0.0 && label.y_pos[pos] > 0.0;
}

}  // namespace detail

/// One AdaCos-style update: s <- ln(B) / cos(min(pi/4, theta_med)), where B
/// is the batch mean of sum_{unlabelled cells} exp(s_prev * theta) and
/// theta_med the batch median angle of the labelled cells. Clamped to [1, 100].
inline AdaptiveScale update_scale(std::span<const Matrix> thetas, std::span<const SegmentLabel> labels,
                                  AdaptiveScale scale) {
  if (thetas.empty()) throw ParameterError("update_scale needs a non-empty batch");
  if (thetas.size() != labels.size()) throw ParameterError("thetas and labels differ in length");
  double b_sum = 0.0;
  std::vector<double> angles;
  angles.reserve(thetas.size());
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const Matrix& th = thetas[i];
    const SegmentLabel& y = labels[i];
    double b = 0.0;
    double labeled_cos = 0.0;
    double labeled_mass = 0.0;
    for (Eigen::Index kw = 0; kw < th.rows(); ++kw) {
      for (Eigen::Index pos = 0; pos < th.cols(); ++pos) {
        if (detail::is_labeled_cell(y, static_cast<int>(kw), static_cast<int>(pos))) {
          const double w = y.y_kw[kw] * y.y_pos[pos];
          labeled_cos += w * th(kw, pos);
          labeled_mass += w;
        } else {
          b += std::exp(scale.value * th(kw, pos));
        }
      }
    }
    b_sum += b;
    if (labeled_mass > 0.0) angles.push_back(std::acos(std::clamp(labeled_cos / labeled_mass, -1.0, 1.0)));
  }
  const double b_avg = b_sum / static_cast<double>(thetas.size());
  if (angles.empty() || !(b_avg > 0.0)) return scale;
  const auto mid = angles.begin() + static_cast<std::ptrdiff_t>((angles.size() - 1) / 2);
  std::nth_element(angles.begin(), mid, angles.end());
  const double theta_med = *mid;
  const double next = std::log(b_avg) / std::cos(std::min(std::numbers::pi / 4.0, theta_med));
  if (!std::isfinite(next)) return scale;
  return {std::clamp(next, AdaptiveScale::kMin, AdaptiveScale::kMax)};
}

namespace detail {

inline LossOutput item_loss(const Matrix& theta, const SegmentLabel& y, AdaptiveScale scale, LossWeights w) {
  LossOutput out;
  out.theta = theta;
  out.s = joint_softmax(theta, scale);
  const Vector pk = keyword_marginal(out.s);
  const Vector pp = position_marginal(out.s);
  for (Eigen::Index i = 0; i < pk.size(); ++i)
    if (y.y_kw[i] != 0.0) out.loss_kw += y.y_kw[i] * std::log(std::max(pk[i], kProbabilityFloor));
  for (Eigen::Index j = 0; j < pp.size(); ++j)
    if (y.y_pos[j] != 0.0) out.loss_pos += y.y_pos[j] * std::log(std::max(pp[j], kProbabilityFloor));
  out.loss_total = -(w.kw * out.loss_kw + w.pos * out.loss_pos);
  return out;
}

/// d(loss_total) / d(theta) for one item.
inline Matrix item_theta_gradient(const LossOutput& lo, const SegmentLabel& y, AdaptiveScale scale, LossWeights w) {
  const Matrix& s = lo.s;
  const Vector pk = keyword_marginal(s);
  const Vector pp = position_marginal(s);
  double kw_mass = 0.0;
  for (Eigen::Index i = 0; i < pk.size(); ++i)
    if (pk[i] > kProbabilityFloor) kw_mass += y.y_kw[i];
  double pos_mass = 0.0;
  for (Eigen::Index j = 0; j < pp.size(); ++j)
    if (pp[j] > kProbabilityFloor) pos_mass += y.y_pos[j];
  Matrix g(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const double sa = s(i, j);
      const double own_kw = pk[i] > kProbabilityFloor ? y.y_kw[i] * sa / pk[i] : 0.0;
      const double own_pos = pp[j] > kProbabilityFloor ? y.y_pos[j] * sa / pp[j] : 0.0;
      const double term_kw = own_kw - sa * kw_mass;
      const double term_pos = own_pos - sa * pos_mass;
      g(i, j) = -scale.value * (w.kw * term_kw + w.pos * term_pos);
    }
  }
  return g;
}

}  // namespace detail

/// Batch loss: weighted mean over samples of per-sample segment means.
inline BatchLoss tacos_loss(std::span<const LossItem> items, const ClusterCenters& c, AdaptiveScale scale,
                            LossWeights weights = {}) {
  if (items.empty()) throw ParameterError("empty batch");
  const detail::UnitCenters uc = detail::normalize_centers(c);
  const std::vector<double> iw = detail::item_weights(items);
  BatchLoss out;
  out.items.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    detail::check_label(*items[i].label, c);
    const auto tr = detail::trace_similarity(*items[i].embedding, c, uc);
    out.items.push_back(detail::item_loss(tr.theta, *items[i].label, scale, weights));
    out.total += iw[i] * out.items.back().loss_total;
  }
  return out;
}

struct TacosGradients {
  BatchLoss loss;
  std::vector<Matrix> d_embedding;  // one T x D matrix per item
  Matrix d_centers;                 // same layout as ClusterCenters::rows
};

/// Analytic gradients of tacos_loss().total with s-hat held constant. The
/// max over sub-clusters routes gradient to the attaining cluster only.
inline TacosGradients tacos_gradients(std::span<const LossItem> items, const ClusterCenters& c, AdaptiveScale scale,
                                      LossWeights weights = {}) {
  if (items.empty()) throw ParameterError("empty batch");
  const detail::UnitCenters uc = detail::normalize_centers(c);
  const std::vector<double> iw = detail::item_weights(items);
  const int cells = c.n_cells();
  const Eigen::Index R = c.rows.rows();
  TacosGradients out;
  out.d_embedding.reserve(items.size());
  Matrix d_unit_centers = Matrix::Zero(R, c.dim());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const SegmentLabel& y = *items[i].label;
    detail::check_label(y, c);
    const auto tr = detail::trace_similarity(*items[i].embedding, c, uc);
    LossOutput lo = detail::item_loss(tr.theta, y, scale, weights);
    out.loss.total += iw[i] * lo.loss_total;
    const Matrix g_theta = detail::item_theta_gradient(lo, y, scale, weights) * iw[i];
    out.loss.items.push_back(std::move(lo));

    const Eigen::Index T = tr.unit_frames.rows();
    Matrix d_cos = Matrix::Zero(T, R);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int a = 0; a < cells; ++a) {
        const int k = tr.winner[static_cast<std::size_t>(t * cells + a)];
        d_cos(t, static_cast<Eigen::Index>(k) * cells + a) = g_theta(a / c.n_pos, a % c.n_pos) / static_cast<double>(T);
      }
    }
    // cos = u . v; d/du = v, projected onto the tangent space and divided by |e|.
    const Matrix d_u = d_cos * uc.unit;
    Matrix d_e(T, c.dim());
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto u = tr.unit_frames.row(t);
      d_e.row(t) = (d_u.row(t) - d_u.row(t).dot(u) * u) / tr.frame_norms[t];
    }
    out.d_embedding.push_back(std::move(d_e));
    d_unit_centers.noalias() += d_cos.transpose() * tr.unit_frames;
  }
  out.d_centers.resize(R, c.dim());
  for (Eigen::Index r = 0; r < R; ++r) {
    const auto v = uc.unit.row(r);
    out.d_centers.row(r) = (d_unit_centers.row(r) - d_unit_centers.row(r).dot(v) * v) / uc.norms[r];
  }
  return out;
}

}  // namespace kws
