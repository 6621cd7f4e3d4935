#pragma once

// Event-based micro-averaged precision / recall / F-score and validation-set
// threshold tuning.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "kws/detect.hpp"
#include "kws/error.hpp"
#include "kws/log.hpp"

namespace kws {

struct EventAnnotation {
  std::string file;
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::string keyword;
};

struct MatchCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  MatchCounts& operator-=(const MatchCounts& o) {
    tp -= o.tp;
    fp -= o.fp;
    fn -= o.fn;
    return *this;
  }
  bool operator==(const MatchCounts&) const = default;
};

struct MetricsReport {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

/// Precision, recall and their harmonic mean; an empty task (all counts 0)
/// scores 1.0 on every measure.
inline MetricsReport micro_f1(long tp, long fp, long fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw ParameterError("counts must be non-negative");
  MetricsReport r{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp == 0 && fp == 0 && fn == 0) {
    r.precision = r.recall = r.f_score = 1.0;
    return r;
  }
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f_score = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

inline MetricsReport micro_f1(const MatchCounts& c) { return micro_f1(c.tp, c.fp, c.fn); }

/// Collars: onset within 0.2 s; offset within max(0.2 s, 50 % of the reference length).
struct Collars {
  double onset_s = 0.2;
  double offset_min_s = 0.2;
  double offset_fraction = 0.5;
};

namespace detail {

template <typename E>
void validate_events(const std::vector<E>& events, const char* what) {
  for (const auto& e : events) {
    if (!std::isfinite(e.onset_s) || !std::isfinite(e.offset_s) || !(e.onset_s < e.offset_s))
      throw ValidationError(std::string(what) + " event in '" + e.file + "' has onset >= offset or non-finite times");
    if (e.keyword.empty()) throw ValidationError(std::string(what) + " event in '" + e.file + "' has no keyword");
  }
}

inline bool collar_match(const EventAnnotation& ref, const Detection& det, const Collars& collars) {
  const double off_tol = std::max(collars.offset_min_s, collars.offset_fraction * (ref.offset_s - ref.onset_s));
  return std::abs(det.onset_s - ref.onset_s) <= collars.onset_s + 1e-9 &&
         std::abs(det.offset_s - ref.offset_s) <= off_tol + 1e-9;
}

/// Greedy one-to-one matching within one (file, keyword) group.
inline MatchCounts match_group(std::vector<const EventAnnotation*> refs, std::vector<const Detection*> dets,
                               const Collars& collars) {
  std::stable_sort(refs.begin(), refs.end(), [](auto* a, auto* b) { return a->onset_s < b->onset_s; });
  std::stable_sort(dets.begin(), dets.end(), [](auto* a, auto* b) { return a->onset_s < b->onset_s; });
  std::vector<bool> used(dets.size(), false);
  MatchCounts c;
  for (const auto* r : refs) {
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (used[d] || !collar_match(*r, *dets[d], collars)) continue;
      used[d] = true;
      ++c.tp;
      break;
    }
  }
  c.fp = static_cast<long>(dets.size()) - c.tp;
  c.fn = static_cast<long>(refs.size()) - c.tp;
  return c;
}

}  // namespace detail

/// Event matching per file and keyword; each reference matches at most one
/// detection, earliest-onset detection first.
inline MatchCounts match_events(const std::vector<EventAnnotation>& refs, const std::vector<Detection>& dets,
                                const Collars& collars = {}) {
  detail::validate_events(refs, "reference");
  detail::validate_events(dets, "detection");
  using Key = std::pair<std::string, std::string>;
  std::map<Key, std::pair<std::vector<const EventAnnotation*>, std::vector<const Detection*>>> groups;
  for (const auto& r : refs) groups[{r.file, r.keyword}].first.push_back(&r);
  for (const auto& d : dets) groups[{d.file, d.keyword}].second.push_back(&d);
  MatchCounts total;
  for (auto& [key, g] : groups) total += detail::match_group(std::move(g.first), std::move(g.second), collars);
  return total;
}

// ---------------------------------------------------------------------------
// Threshold tuning

enum class ThresholdMode { kGlobal, kPerKeyword };

inline const char* to_string(ThresholdMode m) { return m == ThresholdMode::kGlobal ? "global" : "individual"; }

/// Candidates of one validation recording.
struct FileCandidates {
  std::string file;
  std::vector<Candidate> candidates;
};

struct TuneResult {
  Thresholds thresholds;
  MetricsReport report;
};

namespace detail {

inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

/// Grid of thresholds for a set of scores, highest first: +inf, midpoints
/// of consecutive distinct scores, -inf.
inline std::vector<double> threshold_grid(std::vector<double> scores) {
  std::sort(scores.begin(), scores.end(), std::greater<>());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  std::vector<double> grid{kPosInf};
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
    // Must satisfy scores[i] > t >= scores[i + 1] even for adjacent doubles.
    const double mid = scores[i + 1] + 0.5 * (scores[i] - scores[i + 1]);
    grid.push_back(mid < scores[i] ? mid : scores[i + 1]);
  }
  if (!scores.empty()) grid.push_back(-kPosInf);
  return grid;
}

/// Incrementally re-evaluates pooled counts when thresholds change.
class TuningState {
 public:
  TuningState(const std::vector<FileCandidates>& files, const std::vector<EventAnnotation>& refs,
              std::map<std::string, double> thresholds, double min_dur_fraction, Collars collars)
      : thresholds_(std::move(thresholds)), min_dur_(min_dur_fraction), collars_(collars) {
    std::map<std::string, std::size_t> index;
    for (const auto& f : files) {
      if (index.contains(f.file)) throw ParameterError("duplicate validation file " + f.file);
      index[f.file] = files_.size();
      files_.push_back({f.file, f.candidates, {}, {}, {}});
      File& file = files_.back();
      std::sort(file.sorted.begin(), file.sorted.end(), resolution_before);
      for (const auto& c : file.sorted) {
        const auto it = thresholds_.find(c.keyword);
        if (it == thresholds_.end()) throw ParameterError("candidate for unknown keyword " + c.keyword);
        file.keyword_slot.push_back(static_cast<std::size_t>(std::distance(thresholds_.begin(), it)));
      }
    }
    values_.reserve(thresholds_.size());
    for (const auto& [k, v] : thresholds_) values_.push_back(v);
    for (const auto& r : refs) {
      const auto it = index.find(r.file);
      if (it == index.end()) {
        // Reference file without candidates: always missed.
        index[r.file] = files_.size();
        files_.push_back({r.file, {}, {}, {r}, {}});
      } else {
        files_[it->second].refs.push_back(r);
      }
    }
    for (std::size_t i = 0; i < files_.size(); ++i) {
      files_[i].counts = evaluate_file(i);
      total_ += files_[i].counts;
    }
  }

  const MatchCounts& total() const { return total_; }
  std::size_t n_files() const { return files_.size(); }
  const std::map<std::string, double>& thresholds() const { return thresholds_; }

  void set_threshold(const std::string& keyword, double value, const std::vector<std::size_t>& affected) {
    const auto it = thresholds_.find(keyword);
    if (it == thresholds_.end()) throw ParameterError("unknown keyword " + keyword);
    it->second = value;
    values_[static_cast<std::size_t>(std::distance(thresholds_.begin(), it))] = value;
    for (std::size_t f : affected) refresh(f);
  }

  void set_global(double value, const std::vector<std::size_t>& affected) {
    for (auto& [k, v] : thresholds_) v = value;
    std::fill(values_.begin(), values_.end(), value);
    for (std::size_t f : affected) refresh(f);
  }

  void set_all(double value) {
    std::vector<std::size_t> all(files_.size());
    for (std::size_t f = 0; f < all.size(); ++f) all[f] = f;
    set_global(value, all);
  }

  /// Files that hold at least one candidate of `keyword` scoring exactly `score`.
  std::map<double, std::vector<std::size_t>> files_by_score(const std::string* keyword) const {
    std::map<double, std::vector<std::size_t>> out;
    for (std::size_t f = 0; f < files_.size(); ++f)
      for (const auto& c : files_[f].sorted)
        if (keyword == nullptr || c.keyword == *keyword) {
          auto& v = out[c.score];
          if (v.empty() || v.back() != f) v.push_back(f);
        }
    return out;
  }

  std::vector<Detection> detections(std::size_t f) const {
    const File& file = files_[f];
    const double floor = values_.empty() ? kPosInf : *std::min_element(values_.begin(), values_.end());
    auto dets = resolve_sorted(
        file.sorted,
        [&](const Candidate& c) {
          return c.score > values_[file.keyword_slot[static_cast<std::size_t>(&c - file.sorted.data())]];
        },
        min_dur_, floor);
    for (auto& d : dets) d.file = files_[f].name;
    return dets;
  }

 private:
  struct File {
    std::string name;
    std::vector<Candidate> sorted;
    std::vector<std::size_t> keyword_slot;  // position of each candidate's keyword in thresholds_
    std::vector<EventAnnotation> refs;
    MatchCounts counts;
  };

  MatchCounts evaluate_file(std::size_t f) const { return match_events(files_[f].refs, detections(f), collars_); }

  void refresh(std::size_t f) {
    total_ -= files_[f].counts;
    files_[f].counts = evaluate_file(f);
    total_ += files_[f].counts;
  }

  std::vector<File> files_;
  std::map<std::string, double> thresholds_;
  std::vector<double> values_;  // thresholds_ in key order
  double min_dur_;
  Collars collars_;
  MatchCounts total_;
};

/// Sweeps one threshold (one keyword, or all at once when keyword is null)
/// down the grid; returns the best (value, F), ties to the highest value.
inline std::pair<double, double> sweep(TuningState& state, const std::string* keyword) {
  const auto by_score = state.files_by_score(keyword);
  std::vector<double> scores;
  for (const auto& [s, f] : by_score) scores.push_back(s);
  const std::vector<double> grid = threshold_grid(scores);
  auto apply = [&](double value, const std::vector<std::size_t>& affected) {
    if (keyword == nullptr) {
      state.set_global(value, affected);
    } else {
      state.set_threshold(*keyword, value, affected);
    }
  };
  std::vector<std::size_t> all_files;
  for (std::size_t f = 0; f < state.n_files(); ++f) all_files.push_back(f);
  apply(grid.front(), all_files);
  double best_value = grid.front();
  double best_f = micro_f1(state.total()).f_score;
  // Walking down, grid step g admits exactly the g-th highest distinct score,
  // so only files holding that score need re-evaluation.
  auto score_it = by_score.rbegin();
  for (std::size_t g = 1; g < grid.size(); ++g, ++score_it) {
    apply(grid[g], score_it->second);
    const double f = micro_f1(state.total()).f_score;
    if (f > best_f) {
      best_f = f;
      best_value = grid[g];
    }
  }
  return {best_value, best_f};
}

}  // namespace detail

/// Picks detection thresholds maximising validation F over the grid of
/// midpoints between distinct candidate scores (plus +-inf). Global mode
/// uses one value for every keyword; per-keyword mode starts from the global
/// optimum and re-optimises each keyword's threshold in turn until no
/// threshold changes, so it never scores below global mode on validation.
inline TuneResult tune_thresholds(const std::vector<FileCandidates>& files, const std::vector<EventAnnotation>& refs,
                                  const std::vector<std::string>& keywords, ThresholdMode mode,
                                  double min_dur_fraction = kMinDurationFraction, Collars collars = {}) {
  if (keywords.empty()) throw ParameterError("tune_thresholds needs the keyword list");
  detail::validate_events(refs, "reference");
  std::set<std::string> known(keywords.begin(), keywords.end());
  for (const auto& f : files)
    for (const auto& c : f.candidates)
      if (!known.contains(c.keyword)) throw ParameterError("candidate for unknown keyword " + c.keyword);

  std::map<std::string, double> init;
  for (const auto& k : keywords) init[k] = detail::kPosInf;
  detail::TuningState state(files, refs, init, min_dur_fraction, collars);

  bool any = false;
  for (const auto& f : files) any = any || !f.candidates.empty();
  TuneResult result;
  if (!any) {
    log::warn("no validation candidates; thresholds set to +inf (nothing is detected)");
    result.thresholds = mode == ThresholdMode::kGlobal ? Thresholds::uniform(detail::kPosInf)
                                                       : Thresholds{std::nullopt, init};
    result.report = micro_f1(state.total());
    return result;
  }

  const double global_value = detail::sweep(state, nullptr).first;
  state.set_all(global_value);
  if (mode == ThresholdMode::kGlobal) {
    result.thresholds = Thresholds::uniform(global_value);
    result.report = micro_f1(state.total());
    return result;
  }

  std::vector<std::size_t> all_files;
  for (std::size_t i = 0; i < state.n_files(); ++i) all_files.push_back(i);
  for (int round = 0; round < 10; ++round) {
    bool changed = false;
    for (const auto& k : keywords) {
      const double before = state.thresholds().at(k);
      const auto [value, f] = detail::sweep(state, &k);
      state.set_threshold(k, value, all_files);
      if (value != before) changed = true;
    }
    if (!changed) break;
  }
  result.thresholds = Thresholds{std::nullopt, state.thresholds()};
  result.report = micro_f1(state.total());
  return result;
}

/// F on the given candidates for fixed thresholds (re-evaluation oracle for tuning).
inline MetricsReport evaluate_thresholds(const std::vector<FileCandidates>& files,
                                         const std::vector<EventAnnotation>& refs, const Thresholds& thresholds,
                                         double min_dur_fraction = kMinDurationFraction, Collars collars = {}) {
  std::vector<Detection> all;
  for (const auto& f : files) {
    auto dets = resolve_candidates(f.candidates, thresholds, min_dur_fraction);
    for (auto& d : dets) d.file = f.file;
    all.insert(all.end(), dets.begin(), dets.end());
  }
  return micro_f1(match_events(refs, all, collars));
}

}  // namespace kws
