#pragma once

// Turning sub-sequence DTW paths into keyword detections.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kws/dtw.hpp"
#include "kws/error.hpp"
#include "kws/parallel.hpp"

namespace kws {

struct Detection {
  std::string file;
  std::string keyword;
  double onset_s = 0.0;
  double offset_s = 0.0;
  double score = 0.0;  // -acc_cost / path_len

  double duration() const { return offset_s - onset_s; }
};

/// A thresholdable match: the best end column of a run of consecutive end
/// columns whose warping paths share a start column.
struct Candidate {
  std::string keyword;
  double onset_s = 0.0;
  double offset_s = 0.0;
  double score = 0.0;
  double source_duration_s = 0.0;  // of the template's training sample
  std::size_t template_index = 0;
  std::size_t start_col = 0;
  std::size_t end_col = 0;
};

/// Detection thresholds, either one global value or one per keyword.
struct Thresholds {
  std::optional<double> global;
  std::map<std::string, double> per_keyword;

  static Thresholds uniform(double t) { return {t, {}}; }

  double for_keyword(const std::string& keyword) const {
    if (const auto it = per_keyword.find(keyword); it != per_keyword.end()) return it->second;
    if (global) return *global;
    throw ConfigError("no threshold for keyword '" + keyword + "'");
  }

  bool covers(const std::string& keyword) const { return global.has_value() || per_keyword.contains(keyword); }
};

inline constexpr double kMinDurationFraction = 0.5;

inline double path_score(const PathResult& p) { return -p.acc_cost / static_cast<double>(p.path_len); }

/// Threshold-independent candidates of one template against one query.
inline std::vector<Candidate> extract_candidates(const Template& templ, const Template& query,
                                                 std::size_t template_index = 0) {
  if (templ.length() < 1 || query.length() < 1) return {};
  const auto paths = subsequence_dtw(cost_matrix(templ, query));
  const double half_hop = query.frame_hop_s / 2.0;
  const double limit = query.source_duration_s > 0.0 ? query.source_duration_s : std::numeric_limits<double>::infinity();
  std::vector<Candidate> out;
  std::size_t j = 0;
  while (j < paths.size()) {
    if (!paths[j]) {
      ++j;
      continue;
    }
    const std::size_t start = paths[j]->start_col;
    std::size_t best = j;
    std::size_t k = j + 1;
    for (; k < paths.size() && paths[k] && paths[k]->start_col == start; ++k)
      if (path_score(*paths[k]) > path_score(*paths[best])) best = k;
    Candidate c;
    c.keyword = templ.keyword;
    c.score = path_score(*paths[best]);
    c.source_duration_s = templ.source_duration_s;
    c.template_index = template_index;
    c.start_col = start;
    c.end_col = best;
    c.onset_s = std::max(0.0, query.frame_time(static_cast<Eigen::Index>(start)) - half_hop);
    c.offset_s = std::min(limit, query.frame_time(static_cast<Eigen::Index>(best)) + half_hop);
    if (c.offset_s > c.onset_s) out.push_back(std::move(c));
    j = k;
  }
  return out;
}

/// Candidates of every template, concatenated in template order.
inline std::vector<Candidate> extract_all_candidates(const std::vector<Template>& templates, const Template& query,
                                                     int workers = 1) {
  std::vector<std::vector<Candidate>> parts(templates.size());
  parallel_for(templates.size(), workers,
               [&](std::size_t i) { parts[i] = extract_candidates(templates[i], query, i); });
  std::vector<Candidate> out;
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

/// Resolution order: score descending, then earlier onset, then keyword name.
inline bool resolution_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
  if (a.keyword != b.keyword) return a.keyword < b.keyword;
  if (a.template_index != b.template_index) return a.template_index < b.template_index;
  return a.end_col < b.end_col;
}

namespace detail {

/// Disjoint claimed time intervals.
class ClaimedTime {
 public:
  /// Part of [on, off] not yet claimed, if it is one non-empty piece.
  std::optional<std::pair<double, double>> free_piece(double on, double off) const {
    constexpr double kEps = 1e-9;
    std::vector<std::pair<double, double>> pieces;
    double cursor = on;
    auto it = claims_.upper_bound(on);
    if (it != claims_.begin()) {
      auto prev = std::prev(it);
      if (prev->second > cursor) cursor = prev->second;
    }
    for (; it != claims_.end() && it->first < off; ++it) {
      if (it->first - cursor > kEps) pieces.emplace_back(cursor, it->first);
      cursor = std::max(cursor, it->second);
    }
    if (off - cursor > kEps) pieces.emplace_back(cursor, off);
    if (pieces.size() != 1) return std::nullopt;
    return pieces.front();
  }

  void claim(double on, double off) {
    auto it = claims_.upper_bound(on);
    if (it != claims_.begin()) {
      auto prev = std::prev(it);
      if (prev->second >= on) {
        on = prev->first;
        off = std::max(off, prev->second);
        it = claims_.erase(prev);
      }
    }
    while (it != claims_.end() && it->first <= off) {
      off = std::max(off, it->second);
      it = claims_.erase(it);
    }
    claims_.emplace(on, off);
  }

 private:
  std::map<double, double> claims_;
};

}  // namespace detail

/// Overlap resolution and duration filtering over candidates already sorted
/// by resolution_before(). `active(c)` decides whether c passed its threshold;
/// no candidate scoring at or below `floor` may be active.
template <typename Active>
std::vector<Detection> resolve_sorted(const std::vector<Candidate>& sorted, Active&& active,
                                      double min_dur_fraction = kMinDurationFraction,
                                      double floor = -std::numeric_limits<double>::infinity()) {
  detail::ClaimedTime claimed;
  std::vector<Detection> kept;
  std::vector<double> min_len;
  for (const Candidate& c : sorted) {
    if (c.score <= floor) break;
    if (!active(c)) continue;
    const auto piece = claimed.free_piece(c.onset_s, c.offset_s);
    if (!piece) continue;
    claimed.claim(piece->first, piece->second);
    kept.push_back({{}, c.keyword, piece->first, piece->second, c.score});
    min_len.push_back(min_dur_fraction * c.source_duration_s);
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < kept.size(); ++i)
    if (kept[i].duration() + 1e-9 >= min_len[i]) out.push_back(std::move(kept[i]));
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
    return a.keyword < b.keyword;
  });
  return out;
}

/// Thresholding, overlap resolution (highest score keeps contested time,
/// lower-scoring candidates are shortened or dropped if split) and removal
/// of detections shorter than min_dur_fraction of their training sample.
inline std::vector<Detection> resolve_candidates(std::vector<Candidate> candidates, const Thresholds& thresholds,
                                                 double min_dur_fraction = kMinDurationFraction) {
  for (const auto& c : candidates)
    if (!thresholds.covers(c.keyword)) throw ConfigError("no threshold for keyword '" + c.keyword + "'");
  std::sort(candidates.begin(), candidates.end(), resolution_before);
  double floor = thresholds.global.value_or(std::numeric_limits<double>::infinity());
  for (const auto& [k, v] : thresholds.per_keyword) floor = std::min(floor, v);
  return resolve_sorted(
      candidates, [&](const Candidate& c) { return c.score > thresholds.for_keyword(c.keyword); }, min_dur_fraction,
      floor);
}

/// Full search of one query against all templates.
inline std::vector<Detection> detect(const std::vector<Template>& templates, const Template& query,
                                     const Thresholds& thresholds, double min_dur_fraction = kMinDurationFraction,
                                     int workers = 1) {
  for (const auto& t : templates)
    if (!thresholds.covers(t.keyword)) throw ConfigError("no threshold for keyword '" + t.keyword + "'");
  return resolve_candidates(extract_all_candidates(templates, query, workers), thresholds, min_dur_fraction);
}

}  // namespace kws
