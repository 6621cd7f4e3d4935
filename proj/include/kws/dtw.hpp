#pragma once

// Embedding templates, cosine cost matrices and sub-sequence DTW with the
// step set {(2,1), (1,1), (1,2)} (template rows, query columns).

#include <algorithm>
#include <barrier>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "kws/error.hpp"
#include "kws/types.hpp"

namespace kws {

/// A matrix of frame vectors on a regular time grid. Frame g is centred at
/// time_offset_s + g * frame_hop_s seconds of its source recording.
struct Template {
  Matrix frames;
  std::string keyword;
  double source_duration_s = 0.0;
  double frame_hop_s = 256.0 / kSampleRate;
  double time_offset_s = 0.0;

  Eigen::Index length() const { return frames.rows(); }
  double frame_time(Eigen::Index g) const { return time_offset_s + static_cast<double>(g) * frame_hop_s; }
};

/// Overlap-averages segment embeddings placed on a shared frame grid.
class TemplateAccumulator {
 public:
  void add(const Matrix& frames, std::size_t start) {
    if (frames.rows() == 0) return;
    if (sum_.size() == 0) sum_.resize(0, frames.cols());
    if (frames.cols() != sum_.cols()) throw ParameterError("segment embeddings differ in dimension");
    const auto needed = static_cast<Eigen::Index>(start) + frames.rows();
    if (needed > sum_.rows()) {
      const Eigen::Index old = sum_.rows();
      sum_.conservativeResize(needed, Eigen::NoChange);
      sum_.bottomRows(needed - old).setZero();
      count_.resize(static_cast<std::size_t>(needed), 0);
    }
    sum_.middleRows(static_cast<Eigen::Index>(start), frames.rows()) += frames;
    for (Eigen::Index r = 0; r < frames.rows(); ++r) ++count_[start + static_cast<std::size_t>(r)];
  }

  /// Rows never covered by any segment are left at zero.
  Matrix finish() const {
    if (sum_.rows() == 0) throw ParameterError("no segment embeddings to assemble");
    Matrix out = sum_;
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      if (count_[static_cast<std::size_t>(r)] > 0) out.row(r) /= count_[static_cast<std::size_t>(r)];
    return out;
  }

 private:
  Matrix sum_;
  std::vector<int> count_;
};

struct PlacedEmbedding {
  Matrix frames;
  std::size_t start_frame = 0;
};

/// Grid frame g = mean of all segment rows mapped to g; length = last covered index + 1.
inline Matrix assemble_template(const std::vector<PlacedEmbedding>& segments) {
  if (segments.empty()) throw ParameterError("assemble_template needs at least one segment");
  TemplateAccumulator acc;
  for (const auto& s : segments) acc.add(s.frames, s.start_frame);
  return acc.finish();
}

/// M x N matrix of 1 - cosine(template_i, query_j), clamped to [0, 2].
inline Matrix cost_matrix(const Matrix& templ, const Matrix& query) {
  if (templ.cols() != query.cols()) throw ParameterError("template and query dimensions differ");
  auto unit = [](const Matrix& m, const char* what) {
    const Vector norms = m.rowwise().norm();
    Matrix u(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (!(norms[r] > 0.0)) throw NumericDomainError(std::string("zero-norm ") + what + " frame " + std::to_string(r));
      u.row(r) = m.row(r) / norms[r];
    }
    return u;
  };
  Matrix c = unit(templ, "template") * unit(query, "query").transpose();
  c = (1.0 - c.array()).cwiseMax(0.0).cwiseMin(2.0).matrix();
  return c;
}

inline Matrix cost_matrix(const Template& templ, const Template& query) { return cost_matrix(templ.frames, query.frames); }

struct PathResult {
  std::size_t start_col = 0;
  std::size_t end_col = 0;
  std::size_t path_len = 0;  // number of cells on the path
  double acc_cost = 0.0;

  bool operator==(const PathResult&) const = default;
};

/// Steps are (row, column) increments. On equal accumulated cost the
/// predecessor is chosen in this order: (1,1), (2,1), (1,2).
enum class Step : std::uint8_t { kStart = 0, kDiag = 1, kTwoRows = 2, kTwoCols = 3, kNone = 255 };

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct DtwTables {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<double> acc;
  std::vector<Step> step;

  double& at(Eigen::Index i, Eigen::Index j) { return acc[static_cast<std::size_t>(i * cols + j)]; }
  double at(Eigen::Index i, Eigen::Index j) const { return acc[static_cast<std::size_t>(i * cols + j)]; }
  Step& step_at(Eigen::Index i, Eigen::Index j) { return step[static_cast<std::size_t>(i * cols + j)]; }
  Step step_at(Eigen::Index i, Eigen::Index j) const { return step[static_cast<std::size_t>(i * cols + j)]; }
};

/// Fills cell (i, j). `free_start`: every row-0 cell starts a path,
/// otherwise only (0, 0) does.
inline void dtw_cell(const Matrix& cost, DtwTables& t, Eigen::Index i, Eigen::Index j, bool free_start) {
  if (i == 0) {
    if (free_start || j == 0) {
      t.at(i, j) = cost(i, j);
      t.step_at(i, j) = Step::kStart;
    } else {
      t.at(i, j) = kInf;
      t.step_at(i, j) = Step::kNone;
    }
    return;
  }
  double best = kInf;
  Step choice = Step::kNone;
  if (j >= 1 && t.at(i - 1, j - 1) < best) {
    best = t.at(i - 1, j - 1);
    choice = Step::kDiag;
  }
  if (i >= 2 && j >= 1 && t.at(i - 2, j - 1) < best) {
    best = t.at(i - 2, j - 1);
    choice = Step::kTwoRows;
  }
  if (j >= 2 && t.at(i - 1, j - 2) < best) {
    best = t.at(i - 1, j - 2);
    choice = Step::kTwoCols;
  }
  t.at(i, j) = choice == Step::kNone ? kInf : cost(i, j) + best;
  t.step_at(i, j) = choice;
}

inline DtwTables make_tables(const Matrix& cost) {
  DtwTables t;
  t.rows = cost.rows();
  t.cols = cost.cols();
  t.acc.assign(static_cast<std::size_t>(t.rows * t.cols), kInf);
  t.step.assign(static_cast<std::size_t>(t.rows * t.cols), Step::kNone);
  return t;
}

inline std::optional<PathResult> backtrack(const DtwTables& t, Eigen::Index end_col) {
  Eigen::Index i = t.rows - 1;
  Eigen::Index j = end_col;
  if (t.step_at(i, j) == Step::kNone) return std::nullopt;
  PathResult r;
  r.end_col = static_cast<std::size_t>(end_col);
  r.acc_cost = t.at(i, j);
  r.path_len = 1;
  for (;;) {
    const Step s = t.step_at(i, j);
    if (s == Step::kStart) break;
    if (s == Step::kDiag) {
      --i;
      --j;
    } else if (s == Step::kTwoRows) {
      i -= 2;
      --j;
    } else {
      --i;
      j -= 2;
    }
    ++r.path_len;
  }
  r.start_col = static_cast<std::size_t>(j);
  return r;
}

inline void check_cost(const Matrix& cost) {
  if (cost.rows() < 1 || cost.cols() < 1) throw ParameterError("cost matrix must be at least 1 x 1");
}

}  // namespace detail

/// Sub-sequence DTW: free start anywhere in row 0, one result per end column
/// of the last row (std::nullopt where no step path reaches it).
inline std::vector<std::optional<PathResult>> subsequence_dtw(const Matrix& cost) {
  detail::check_cost(cost);
  auto t = detail::make_tables(cost);
  for (Eigen::Index i = 0; i < t.rows; ++i)
    for (Eigen::Index j = 0; j < t.cols; ++j) detail::dtw_cell(cost, t, i, j, true);
  std::vector<std::optional<PathResult>> out(static_cast<std::size_t>(t.cols));
  for (Eigen::Index j = 0; j < t.cols; ++j) out[static_cast<std::size_t>(j)] = detail::backtrack(t, j);
  return out;
}

/// Same result as subsequence_dtw(), computed by sweeping anti-diagonals
/// (cell (i, j) only depends on diagonals i+j-2 and i+j-3) with `workers`
/// threads synchronised per diagonal.
inline std::vector<std::optional<PathResult>> subsequence_dtw_wavefront(const Matrix& cost, int workers) {
  detail::check_cost(cost);
  auto t = detail::make_tables(cost);
  const Eigen::Index M = t.rows;
  const Eigen::Index N = t.cols;
  const int n_workers = std::max(1, workers);
  const Eigen::Index n_diag = M + N - 1;
  std::vector<std::optional<PathResult>> out(static_cast<std::size_t>(N));

  std::barrier sync(n_workers);
  auto worker = [&](int w) {
    for (Eigen::Index d = 0; d < n_diag; ++d) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, d - (N - 1));
      const Eigen::Index hi = std::min<Eigen::Index>(M - 1, d);
      const Eigen::Index len = hi - lo + 1;
      const Eigen::Index begin = lo + len * w / n_workers;
      const Eigen::Index end = lo + len * (w + 1) / n_workers;
      for (Eigen::Index i = begin; i < end; ++i) detail::dtw_cell(cost, t, i, d - i, true);
      sync.arrive_and_wait();
    }
    for (Eigen::Index j = N * w / n_workers; j < N * (w + 1) / n_workers; ++j)
      out[static_cast<std::size_t>(j)] = detail::backtrack(t, j);
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker, w);
    worker(0);
  }
  return out;
}

/// Classic DTW from (0, 0) to (M-1, N-1) with the same step set; +inf if unreachable.
inline double aligned_dtw_cost(const Matrix& cost) {
  detail::check_cost(cost);
  auto t = detail::make_tables(cost);
  for (Eigen::Index i = 0; i < t.rows; ++i)
    for (Eigen::Index j = 0; j < t.cols; ++j) detail::dtw_cell(cost, t, i, j, false);
  return t.at(t.rows - 1, t.cols - 1);
}

}  // namespace kws
