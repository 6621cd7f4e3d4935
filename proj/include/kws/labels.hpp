#pragma once

// Keyword and relative-position training targets.

#include <algorithm>
#include <cstddef>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kws/error.hpp"
#include "kws/types.hpp"

namespace kws {

/// Base keywords, optionally one reversed class per keyword, and a final
/// "no speech" class. Class order: keywords, reversed keywords, no speech.
class KeywordLabelSpace {
 public:
  KeywordLabelSpace() = default;
  KeywordLabelSpace(std::vector<std::string> keywords, bool with_reversed)
      : keywords_(std::move(keywords)), with_reversed_(with_reversed) {
    if (keywords_.empty()) throw ParameterError("label space needs at least one keyword");
    std::set<std::string> seen;
    for (const auto& k : keywords_) {
      if (k.empty()) throw ParameterError("keyword names must be non-empty");
      if (!seen.insert(k).second) throw ParameterError("duplicate keyword name: " + k);
    }
  }

  const std::vector<std::string>& keywords() const { return keywords_; }
  bool with_reversed() const { return with_reversed_; }
  int n_base() const { return static_cast<int>(keywords_.size()); }
  int n_classes() const { return with_reversed_ ? 2 * n_base() + 1 : n_base() + 1; }

  int keyword_class(int i) const { return i; }
  int reversed_class(int i) const {
    if (!with_reversed_) throw ParameterError("label space has no reversed classes");
    return n_base() + i;
  }
  int no_speech_class() const { return n_classes() - 1; }

  int index_of(const std::string& keyword) const {
    const auto it = std::find(keywords_.begin(), keywords_.end(), keyword);
    if (it == keywords_.end()) throw ParameterError("unknown keyword: " + keyword);
    return static_cast<int>(it - keywords_.begin());
  }

  std::string class_name(int c) const {
    if (c < 0 || c >= n_classes()) throw ParameterError("class index out of range");
    if (c < n_base()) return keywords_[c];
    if (c == no_speech_class()) return "<no speech>";
    return "<reversed " + keywords_[c - n_base()] + ">";
  }

 private:
  std::vector<std::string> keywords_;
  bool with_reversed_ = true;
};

/// 1-based inclusive interval of active position classes.
struct PositionInterval {
  int lo = 1;
  int hi = 1;
  bool operator==(const PositionInterval&) const = default;
};

namespace detail {
inline long ceil_div(long a, long b) { return (a + b - 1) / b; }
}  // namespace detail

/// [1 + ceil((i-1) * n_pos / n_seg), ceil(i * n_pos / n_seg)] for 1 <= i <= n_seg <= n_pos.
inline PositionInterval active_interval(int n_seg, int i_seg, int n_pos) {
  if (n_pos < 1 || n_seg < 1) throw ParameterError("n_seg and n_pos must be >= 1");
  if (i_seg < 1 || i_seg > n_seg) throw ParameterError("i_seg out of range [1, n_seg]");
  if (n_seg > n_pos)
    throw ParameterError("sample has " + std::to_string(n_seg) + " segments but only " + std::to_string(n_pos) +
                         " position classes exist");
  return {1 + static_cast<int>(detail::ceil_div(static_cast<long>(i_seg - 1) * n_pos, n_seg)),
          static_cast<int>(detail::ceil_div(static_cast<long>(i_seg) * n_pos, n_seg))};
}

/// Distribution over N_pos relative-position classes.
struct PositionalLabel {
  std::vector<double> weights;
};

inline PositionalLabel positional_label(PositionInterval interval, int n_pos) {
  if (n_pos < 1) throw ParameterError("n_pos must be >= 1");
  if (interval.lo > interval.hi) throw ParameterError("empty position interval");
  if (interval.lo < 1 || interval.hi > n_pos) throw ParameterError("position interval outside [1, n_pos]");
  PositionalLabel label{std::vector<double>(static_cast<std::size_t>(n_pos), 0.0)};
  const double w = 1.0 / (interval.hi - interval.lo + 1);
  for (int p = interval.lo; p <= interval.hi; ++p) label.weights[p - 1] = w;
  return label;
}

/// Uniform over all positions; used for reversed and no-speech segments.
inline PositionalLabel uniform_positional_label(int n_pos) {
  if (n_pos < 1) throw ParameterError("n_pos must be >= 1");
  return {std::vector<double>(static_cast<std::size_t>(n_pos), 1.0 / n_pos)};
}

struct SegmentLabel {
  std::vector<double> y_kw;
  std::vector<double> y_pos;
  std::size_t sample_id = 0;
  std::size_t segment_index = 0;
};

inline std::vector<double> one_hot(int n, int index) {
  if (index < 0 || index >= n) throw ParameterError("one-hot index out of range");
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  v[index] = 1.0;
  return v;
}

/// Linear mix of two labels; both heads use the same coefficient.
inline SegmentLabel mixup(const SegmentLabel& a, const SegmentLabel& b, double lambda) {
  if (a.y_kw.size() != b.y_kw.size() || a.y_pos.size() != b.y_pos.size())
    throw ParameterError("mixup label shapes differ");
  if (lambda < 0.0 || lambda > 1.0) throw ParameterError("mixup coefficient must lie in [0, 1]");
  SegmentLabel out = a;
  for (std::size_t i = 0; i < out.y_kw.size(); ++i) out.y_kw[i] = lambda * a.y_kw[i] + (1.0 - lambda) * b.y_kw[i];
  for (std::size_t i = 0; i < out.y_pos.size(); ++i)
    out.y_pos[i] = lambda * a.y_pos[i] + (1.0 - lambda) * b.y_pos[i];
  return out;
}

enum class SegmentKind { kKeyword, kReversed, kNoSpeech };

/// A training segment: feature frames (time x bins) plus targets.
struct LabeledSegment {
  Matrix features;
  SegmentLabel label;
  int class_index = 0;
  SegmentKind kind = SegmentKind::kKeyword;
};

/// Labels every segment of one keyword sample. Positions follow the
/// active-interval rule for the sample's segment count.
inline std::vector<LabeledSegment> label_keyword_sample(std::vector<Matrix> segment_features, int keyword_class,
                                                        const KeywordLabelSpace& space, int n_pos,
                                                        std::size_t sample_id) {
  const int n_seg = static_cast<int>(segment_features.size());
  std::vector<LabeledSegment> out;
  out.reserve(segment_features.size());
  for (int i = 0; i < n_seg; ++i) {
    LabeledSegment s;
    s.features = std::move(segment_features[i]);
    s.class_index = keyword_class;
    s.kind = SegmentKind::kKeyword;
    s.label.y_kw = one_hot(space.n_classes(), keyword_class);
    s.label.y_pos = positional_label(active_interval(n_seg, i + 1, n_pos), n_pos).weights;
    s.label.sample_id = sample_id;
    s.label.segment_index = static_cast<std::size_t>(i);
    out.push_back(std::move(s));
  }
  return out;
}

inline LabeledSegment label_no_speech(Matrix features, const KeywordLabelSpace& space, int n_pos,
                                      std::size_t sample_id) {
  LabeledSegment s;
  s.features = std::move(features);
  s.class_index = space.no_speech_class();
  s.kind = SegmentKind::kNoSpeech;
  s.label.y_kw = one_hot(space.n_classes(), s.class_index);
  s.label.y_pos = uniform_positional_label(n_pos).weights;
  s.label.sample_id = sample_id;
  return s;
}

inline Matrix reverse_time(const Matrix& frames) { return frames.colwise().reverse(); }

/// Appends a time-reversed copy of every keyword segment, labelled with the
/// keyword's reversed class and a uniform positional label. Reversed copies
/// get sample ids shifted by `sample_id_offset`.
inline std::vector<LabeledSegment> augment_reversed(std::vector<LabeledSegment> segments,
                                                    const KeywordLabelSpace& space, std::size_t sample_id_offset) {
  if (!space.with_reversed()) throw ParameterError("label space was built without reversed classes");
  const std::size_t n = segments.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (segments[i].kind != SegmentKind::kKeyword) continue;
    const LabeledSegment& src = segments[i];
    LabeledSegment r;
    r.features = reverse_time(src.features);
    r.class_index = space.reversed_class(src.class_index);
    r.kind = SegmentKind::kReversed;
    r.label.y_kw = one_hot(space.n_classes(), r.class_index);
    r.label.y_pos = uniform_positional_label(static_cast<int>(src.label.y_pos.size())).weights;
    r.label.sample_id = src.label.sample_id + sample_id_offset;
    r.label.segment_index = src.label.segment_index;
    segments.push_back(std::move(r));
  }
  return segments;
}

/// Random oversampling: returns indices into `item_classes` such that every
/// class appears as often as the largest one. All original indices come
/// first (in order), followed by uniformly drawn duplicates per class.
inline std::vector<std::size_t> oversample_plan(std::span<const int> item_classes, std::mt19937_64& rng) {
  if (item_classes.empty()) throw ParameterError("cannot oversample an empty corpus");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < item_classes.size(); ++i) by_class[item_classes[i]].push_back(i);
  std::size_t target = 0;
  for (const auto& [c, idx] : by_class) target = std::max(target, idx.size());
  std::vector<std::size_t> plan(item_classes.size());
  for (std::size_t i = 0; i < plan.size(); ++i) plan[i] = i;
  for (const auto& [c, idx] : by_class) {
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    for (std::size_t k = idx.size(); k < target; ++k) plan.push_back(idx[pick(rng)]);
  }
  return plan;
}

}  // namespace kws
