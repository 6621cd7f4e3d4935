#pragma once

// End-to-end plumbing: audio files -> training corpus -> templates ->
// candidates -> detections.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "kws/dataset.hpp"
#include "kws/detect.hpp"
#include "kws/dtw.hpp"
#include "kws/embedder.hpp"
#include "kws/error.hpp"
#include "kws/evaluation.hpp"
#include "kws/frontend.hpp"
#include "kws/labels.hpp"
#include "kws/log.hpp"
#include "kws/parallel.hpp"
#include "kws/wav.hpp"

namespace kws {

inline AudioClip load_audio(const std::filesystem::path& path) {
  const WavData w = read_wav(path);
  return prepare_audio(w.interleaved, w.channels, w.sample_rate, path.filename().string());
}

inline std::vector<AudioClip> load_audio_files(const std::vector<std::filesystem::path>& paths, int workers) {
  std::vector<AudioClip> out(paths.size());
  parallel_for(paths.size(), workers, [&](std::size_t i) { out[i] = load_audio(paths[i]); });
  return out;
}

// ---------------------------------------------------------------------------
// Training corpus

struct TrainingCorpus {
  std::vector<LabeledSegment> segments;
  KeywordLabelSpace space;
  int n_pos = 1;
};

/// Log-Mel features of every training segment, positional labels, optional
/// reversed copies and no-speech windows drawn from the noise recordings.
/// The number of noise windows matches the mean keyword class size.
inline TrainingCorpus build_training_corpus(const CorpusLayout& layout, bool reversed, std::uint64_t seed,
                                            int workers = 1, const SegmentationConfig& seg = {}) {
  if (layout.train.empty()) throw LayoutError("corpus has no training samples");
  TrainingCorpus tc;
  tc.space = KeywordLabelSpace(layout.keywords, reversed);
  std::vector<std::filesystem::path> paths;
  for (const auto& t : layout.train) paths.push_back(t.wav);
  const std::vector<AudioClip> clips = load_audio_files(paths, workers);

  std::vector<std::vector<Matrix>> features(clips.size());
  parallel_for(clips.size(), workers, [&](std::size_t i) {
    for (const Segment& s : segment_clip(clips[i], seg, SegmentMode::kTrain)) features[i].push_back(logmel(s, seg));
  });
  for (const auto& f : features) tc.n_pos = std::max(tc.n_pos, static_cast<int>(f.size()));

  std::size_t keyword_segments = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    keyword_segments += features[i].size();
    auto labelled = label_keyword_sample(std::move(features[i]), tc.space.index_of(layout.train[i].keyword), tc.space,
                                         tc.n_pos, i);
    std::move(labelled.begin(), labelled.end(), std::back_inserter(tc.segments));
  }
  if (reversed) tc.segments = augment_reversed(std::move(tc.segments), tc.space, clips.size());

  const std::size_t next_id = 2 * clips.size();
  if (layout.noise.empty()) {
    log::warn("no noise recordings; the no-speech class gets no training segments");
  } else {
    const std::vector<AudioClip> noise = load_audio_files(layout.noise, workers);
    std::vector<std::vector<double>> raw;
    for (const auto& c : noise) raw.push_back(c.samples);
    const std::size_t count = (keyword_segments + layout.keywords.size() - 1) / layout.keywords.size();
    const auto windows = sample_noise(raw, count, static_cast<std::size_t>(seg.window_samples()), seed);
    for (std::size_t i = 0; i < windows.size(); ++i) {
      Segment s;
      s.samples = windows[i].samples;
      tc.segments.push_back(label_no_speech(logmel(s, seg), tc.space, tc.n_pos, next_id + i));
    }
  }
  return tc;
}

inline TrainResult train_on_corpus(const CorpusLayout& layout, const TrainConfig& cfg, int workers = 1,
                                   const SegmentationConfig& seg = {}) {
  const TrainingCorpus tc = build_training_corpus(layout, cfg.reversed, cfg.seed, workers, seg);
  log::info("training on ", tc.segments.size(), " segments, ", tc.space.n_classes(), " classes, N_pos ", tc.n_pos);
  return train_toy_embedder(tc.segments, tc.space, tc.n_pos, cfg);
}

// ---------------------------------------------------------------------------
// Representations

enum class Representation { kEmbedding, kHfcc };

inline const char* to_string(Representation r) { return r == Representation::kEmbedding ? "embedding" : "hfcc"; }

/// How recordings are turned into frame sequences for DTW.
struct FeatureSource {
  Representation kind = Representation::kEmbedding;
  const EmbeddingModel* model = nullptr;  // required for kEmbedding
  SegmentationConfig seg;

  int dim() const { return kind == Representation::kHfcc ? 3 * 13 : model->embedder.dim(); }
};

/// Embedding tensor of a whole recording: inference segments every
/// infer_hop_samples, each embedded and overlap-averaged on the shared
/// log-Mel frame grid. The result is identical for any worker count.
inline Template embed_recording(const EmbeddingModel& model, const AudioClip& clip, int workers = 1,
                                const SegmentationConfig& seg = {}) {
  seg.validate();
  if (seg.infer_hop_samples % LogMelConfig::kHop != 0)
    throw ParameterError("inference hop must be a multiple of the log-Mel hop");
  if (clip.samples.empty()) throw ParameterError("cannot embed an empty recording");
  const std::size_t n = segment_count(clip.samples.size(), seg, SegmentMode::kInfer);
  const std::size_t frames_per_hop = static_cast<std::size_t>(seg.infer_hop_samples / LogMelConfig::kHop);
  const long pad = seg.pad_samples();
  const long win = seg.window_samples();
  const long len = static_cast<long>(clip.samples.size());

  constexpr std::size_t kChunk = 512;
  TemplateAccumulator acc;
  std::vector<Matrix> chunk;
  for (std::size_t first = 0; first < n; first += kChunk) {
    const std::size_t count = std::min(kChunk, n - first);
    chunk.assign(count, Matrix());
    parallel_for(count, workers, [&](std::size_t k) {
      const std::size_t i = first + k;
      Segment s;
      s.samples.assign(static_cast<std::size_t>(win), 0.0);
      const long start = static_cast<long>(i) * seg.infer_hop_samples - pad;
      const long lo = std::max(0L, start), hi = std::min(len, start + win);
      for (long j = lo; j < hi; ++j) s.samples[static_cast<std::size_t>(j - start)] = clip.samples[static_cast<std::size_t>(j)];
      chunk[k] = model.embedder.embed(logmel(s, seg));
    });
    for (std::size_t k = 0; k < count; ++k) acc.add(chunk[k], (first + k) * frames_per_hop);
  }
  Template t;
  t.frames = acc.finish();
  t.frame_hop_s = static_cast<double>(LogMelConfig::kHop) / kSampleRate;
  t.time_offset_s = -static_cast<double>(pad) / kSampleRate;
  t.source_duration_s = clip.duration_s();
  return t;
}

inline Template hfcc_recording(const AudioClip& clip) {
  const FeatureMatrix f = hfcc(clip);
  Template t;
  t.frames = f.frames;
  t.frame_hop_s = f.frame_step_s;
  t.time_offset_s = static_cast<double>(HfccConfig::kFrame) / 2.0 / kSampleRate;
  t.source_duration_s = clip.duration_s();
  return t;
}

/// Frame sequence of a query recording.
inline Template represent(const FeatureSource& src, const AudioClip& clip, int workers = 1) {
  if (src.kind == Representation::kHfcc) return hfcc_recording(clip);
  if (!src.model) throw ConfigError("embedding features need a trained model");
  return embed_recording(*src.model, clip, workers, src.seg);
}

/// Keeps the frames whose centre lies inside the recording.
inline Template crop_to_source(Template t) {
  Eigen::Index lo = 0, hi = t.length();
  while (lo < hi && t.frame_time(lo) < -1e-9) ++lo;
  while (hi > lo && t.frame_time(hi - 1) > t.source_duration_s + 1e-9) --hi;
  if (hi <= lo) throw ParameterError("template has no frames inside its recording");
  t.time_offset_s = t.frame_time(lo);
  t.frames = Matrix(t.frames.middleRows(lo, hi - lo));
  return t;
}

/// One template per training sample, in corpus order.
inline std::vector<Template> enroll(const FeatureSource& src, const std::vector<TrainItem>& train, int workers = 1) {
  std::vector<Template> out(train.size());
  parallel_for(train.size(), workers, [&](std::size_t i) {
    const AudioClip clip = load_audio(train[i].wav);
    Template t = crop_to_source(represent(src, clip, 1));
    t.keyword = train[i].keyword;
    out[i] = std::move(t);
  });
  return out;
}

inline void check_template_dims(const std::vector<Template>& templates, int dim) {
  for (const auto& t : templates)
    if (t.frames.cols() != dim)
      throw ConfigError("template for '" + t.keyword + "' has dimension " + std::to_string(t.frames.cols()) +
                        ", the feature source produces " + std::to_string(dim));
}

// ---------------------------------------------------------------------------
// Search

/// Threshold-independent candidates for every recording. Work is spread over
/// recordings; a single recording spreads its embedding and templates.
inline std::vector<FileCandidates> score_files(const FeatureSource& src, const std::vector<Template>& templates,
                                               const std::vector<std::filesystem::path>& files, int workers = 1) {
  check_template_dims(templates, src.dim());
  std::vector<FileCandidates> out(files.size());
  const int inner = files.size() > 1 ? 1 : workers;
  parallel_for(files.size(), files.size() > 1 ? workers : 1, [&](std::size_t i) {
    const AudioClip clip = load_audio(files[i]);
    const Template query = represent(src, clip, inner);
    out[i].file = files[i].filename().string();
    out[i].candidates = extract_all_candidates(templates, query, inner);
  });
  return out;
}

/// Detections over all files, sorted by (file, onset, keyword).
inline std::vector<Detection> detections_from_candidates(const std::vector<FileCandidates>& files,
                                                         const Thresholds& thresholds,
                                                         double min_dur_fraction = kMinDurationFraction) {
  std::vector<Detection> all;
  for (const auto& f : files) {
    auto dets = resolve_candidates(f.candidates, thresholds, min_dur_fraction);
    for (auto& d : dets) d.file = f.file;
    all.insert(all.end(), dets.begin(), dets.end());
  }
  std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) {
    if (a.file != b.file) return a.file < b.file;
    if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
    return a.keyword < b.keyword;
  });
  return all;
}

inline std::vector<std::string> template_keywords(const std::vector<Template>& templates) {
  std::vector<std::string> out;
  for (const auto& t : templates)
    if (std::find(out.begin(), out.end(), t.keyword) == out.end()) out.push_back(t.keyword);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace kws
