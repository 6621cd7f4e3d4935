#pragma once

// Corpus layout on disk and the synthetic toy corpus.
//
//   <root>/train/<keyword>/<n>.wav
//   <root>/{val,test}/sentences/*.wav
//   <root>/{val,test}/annotations.tsv
//   <root>/noise/*.wav                     (optional)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kws/error.hpp"
#include "kws/evaluation.hpp"
#include "kws/formats.hpp"
#include "kws/log.hpp"
#include "kws/types.hpp"
#include "kws/wav.hpp"

namespace kws {

namespace fs = std::filesystem;

struct TrainItem {
  fs::path wav;
  std::string keyword;
};

struct SplitLayout {
  fs::path annotation_file;
  std::vector<fs::path> sentences;
  std::vector<EventAnnotation> annotations;  // `file` is the sentence file name
};

struct CorpusLayout {
  fs::path root;
  std::vector<std::string> keywords;  // sorted
  std::vector<TrainItem> train;
  SplitLayout val;
  SplitLayout test;
  std::vector<fs::path> noise;
};

namespace detail {

inline std::vector<fs::path> sorted_wavs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline SplitLayout load_split(const fs::path& dir, const std::set<std::string>& keywords) {
  SplitLayout s;
  const fs::path sentences = dir / "sentences";
  s.annotation_file = dir / "annotations.tsv";
  if (!fs::is_directory(sentences)) throw LayoutError("missing directory " + sentences.string());
  if (!fs::is_regular_file(s.annotation_file)) throw LayoutError("missing file " + s.annotation_file.string());
  s.sentences = sorted_wavs(sentences);
  s.annotations = read_annotations(s.annotation_file);
  std::set<std::string> names;
  for (const auto& p : s.sentences) names.insert(p.filename().string());
  for (const auto& a : s.annotations) {
    if (!keywords.contains(a.keyword))
      throw LayoutError(s.annotation_file.string() + ": unknown keyword '" + a.keyword + "' (not in train/)");
    if (!names.contains(a.file))
      throw LayoutError(s.annotation_file.string() + ": annotated file '" + a.file + "' not found in " +
                        sentences.string());
  }
  return s;
}

}  // namespace detail

/// Validates and indexes a corpus directory. The keyword set is the set of
/// sub-directories of train/.
inline CorpusLayout load_corpus(const fs::path& root) {
  CorpusLayout c;
  c.root = root;
  const fs::path train = root / "train";
  if (!fs::is_directory(train)) throw LayoutError("missing directory " + train.string());
  for (const auto& e : fs::directory_iterator(train))
    if (e.is_directory()) c.keywords.push_back(e.path().filename().string());
  std::sort(c.keywords.begin(), c.keywords.end());
  if (c.keywords.empty()) throw LayoutError("no keyword directories in " + train.string());
  for (const auto& k : c.keywords) {
    const auto wavs = detail::sorted_wavs(train / k);
    if (wavs.empty()) throw LayoutError("no training samples in " + (train / k).string());
    for (const auto& w : wavs) c.train.push_back({w, k});
  }
  const std::set<std::string> kw(c.keywords.begin(), c.keywords.end());
  c.val = detail::load_split(root / "val", kw);
  c.test = detail::load_split(root / "test", kw);
  if (fs::is_directory(root / "noise")) c.noise = detail::sorted_wavs(root / "noise");
  return c;
}

// ---------------------------------------------------------------------------
// No-speech sampling

struct NoiseWindow {
  std::size_t clip = 0;
  std::size_t offset = 0;
  std::vector<double> samples;
};

/// `count` windows of `seg_len` samples drawn uniformly over all valid
/// window positions of all clips long enough to hold one.
inline std::vector<NoiseWindow> sample_noise(const std::vector<std::vector<double>>& clips, std::size_t count,
                                             std::size_t seg_len, std::uint64_t seed) {
  if (count == 0) return {};
  if (seg_len == 0) throw ParameterError("seg_len must be positive");
  std::vector<std::size_t> eligible;
  std::vector<double> positions;
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (clips[i].size() >= seg_len) {
      eligible.push_back(i);
      positions.push_back(static_cast<double>(clips[i].size() - seg_len + 1));
    }
  if (eligible.empty()) throw ParameterError("no noise clip is at least " + std::to_string(seg_len) + " samples long");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick_clip(positions.begin(), positions.end());
  std::vector<NoiseWindow> out(count);
  for (auto& w : out) {
    w.clip = eligible[pick_clip(rng)];
    std::uniform_int_distribution<std::size_t> pick_offset(0, clips[w.clip].size() - seg_len);
    w.offset = pick_offset(rng);
    w.samples.assign(clips[w.clip].begin() + static_cast<std::ptrdiff_t>(w.offset),
                     clips[w.clip].begin() + static_cast<std::ptrdiff_t>(w.offset + seg_len));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy corpus

struct ToyDatasetSpec {
  int n_keywords = 3;
  int shots = 5;
  int n_sentences = 40;  // per evaluation split
  int n_noise_files = 4;
  double noise_level = 0.01;  // background noise standard deviation
  std::uint64_t seed = 0;

  void validate() const {
    if (n_keywords < 2) throw ConfigError("n_keywords must be >= 2");
    if (shots < 1) throw ConfigError("shots must be >= 1");
    if (n_sentences < 0) throw ConfigError("n_sentences must be >= 0");
    if (n_noise_files < 0) throw ConfigError("n_noise_files must be >= 0");
    if (!(noise_level >= 0.0)) throw ConfigError("noise_level must be >= 0");
  }
};

enum class ToyPrimitive { kUpChirp, kTonePair, kDownChirp };

/// One synthetic keyword: a frequency trajectory with a second harmonic.
struct ToyPattern {
  std::string name;
  ToyPrimitive primitive = ToyPrimitive::kUpChirp;
  double f_lo = 500.0;
  double f_hi = 1000.0;
  double duration_s = 0.5;
};

/// A planted event in a synthesised recording, in samples.
struct PlantedEvent {
  int keyword = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct ToyRecording {
  std::vector<double> samples;
  std::vector<PlantedEvent> events;
};

inline std::string toy_keyword_name(int i) {
  static const std::array<const char*, 20> names{"alpha", "bravo",  "charlie", "delta",  "echo",
                                                 "foxtrot", "golf", "hotel",   "india",  "juliett",
                                                 "kilo",  "lima",   "mike",    "november", "oscar",
                                                 "papa",  "quebec", "romeo",   "sierra", "tango"};
  if (i >= 0 && i < static_cast<int>(names.size())) return names[static_cast<std::size_t>(i)];
  return "kw" + std::to_string(i);
}

/// Deterministic toy signal source. Every random draw comes from one
/// seeded stream, so output depends only on the spec and call order.
class ToySynth {
 public:
  explicit ToySynth(const ToyDatasetSpec& spec) : spec_(spec), rng_(spec.seed) {
    spec_.validate();
    // Keyword bands occupy disjoint slots of a log-spaced grid so that no
    // keyword is the time-reverse of another.
    const int n = spec_.n_keywords;
    std::vector<int> slots(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) slots[static_cast<std::size_t>(i)] = i;
    std::shuffle(slots.begin(), slots.end(), rng_);
    const double lo = std::log(300.0), hi = std::log(6000.0);
    const double width = (hi - lo) / n;
    for (int i = 0; i < n; ++i) {
      ToyPattern p;
      p.name = toy_keyword_name(i);
      p.primitive = static_cast<ToyPrimitive>(i % 3);
      const double base = lo + width * slots[static_cast<std::size_t>(i)];
      const double a = base + width * uniform(0.0, 0.15);
      const double b = base + width * uniform(0.75, 0.9);
      p.f_lo = std::exp(a);
      p.f_hi = std::exp(b);
      p.duration_s = uniform(0.3, 0.8);
      patterns_.push_back(p);
    }
  }

  const std::vector<ToyPattern>& patterns() const { return patterns_; }
  const ToyDatasetSpec& spec() const { return spec_; }
  std::mt19937_64& rng() { return rng_; }

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }
  int uniform_int(int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng_); }

  /// One jittered instance of keyword k (duration +-8 %, frequency +-3 %, gain 0.5-1).
  std::vector<double> keyword_instance(int k) {
    const ToyPattern& p = patterns_.at(static_cast<std::size_t>(k));
    const double dur = p.duration_s * uniform(0.92, 1.08);
    const double fscale = uniform(0.97, 1.03);
    const double gain = 0.5 * uniform(0.5, 1.0);
    const auto n = static_cast<std::size_t>(std::lround(dur * kSampleRate));
    std::vector<double> out(n);
    double phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = static_cast<double>(i) / static_cast<double>(n);
      double f = 0.0;
      switch (p.primitive) {
        case ToyPrimitive::kUpChirp: f = p.f_lo * std::pow(p.f_hi / p.f_lo, u); break;
        case ToyPrimitive::kDownChirp: f = p.f_hi * std::pow(p.f_lo / p.f_hi, u); break;
        case ToyPrimitive::kTonePair: f = u < 0.5 ? p.f_lo : p.f_hi; break;
      }
      f *= fscale;
      phase += 2.0 * std::numbers::pi * f / kSampleRate;
      const double s = std::sin(phase) + 0.3 * std::sin(2.0 * phase);
      out[i] = gain * fade(i, n) * s / 1.3;
    }
    return out;
  }

  /// Gaussian background noise.
  std::vector<double> background(std::size_t n) {
    std::normal_distribution<double> normal(0.0, spec_.noise_level);
    std::vector<double> out(n);
    for (double& v : out) v = normal(rng_);
    return out;
  }

  /// A non-keyword distractor: a steady tone or a noise burst.
  std::vector<double> filler() {
    const auto n = static_cast<std::size_t>(std::lround(uniform(0.15, 0.5) * kSampleRate));
    std::vector<double> out(n);
    const double gain = uniform(0.05, 0.25);
    if (uniform_int(0, 1) == 0) {
      const double f = std::exp(uniform(std::log(200.0), std::log(6500.0)));
      const double phase0 = uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < n; ++i)
        out[i] = gain * fade(i, n) * std::sin(phase0 + 2.0 * std::numbers::pi * f * static_cast<double>(i) / kSampleRate);
    } else {
      std::normal_distribution<double> normal(0.0, 0.5);
      for (std::size_t i = 0; i < n; ++i) out[i] = gain * fade(i, n) * normal(rng_);
    }
    return out;
  }

  /// Keyword sample as written to train/: the instance plus background noise.
  std::vector<double> training_sample(int k) {
    std::vector<double> out = keyword_instance(k);
    const std::vector<double> noise = background(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += noise[i];
    return out;
  }

  /// A recording with the given keywords in order, separated by gaps of
  /// 0.3-1.0 s that may contain a filler.
  ToyRecording sentence(const std::vector<int>& keywords) {
    std::vector<std::vector<double>> parts;
    std::vector<int> part_kw;
    auto gap = [&] {
      const auto n = static_cast<std::size_t>(std::lround(uniform(0.3, 1.0) * kSampleRate));
      std::vector<double> g(n, 0.0);
      if (uniform(0.0, 1.0) < 0.5) {
        std::vector<double> f = filler();
        if (f.size() + 1600 < n) {
          const auto at = static_cast<std::size_t>(uniform_int(800, static_cast<int>(n - f.size() - 800)));
          for (std::size_t i = 0; i < f.size(); ++i) g[at + i] += f[i];
        }
      }
      parts.push_back(std::move(g));
      part_kw.push_back(-1);
    };
    gap();
    for (int k : keywords) {
      parts.push_back(keyword_instance(k));
      part_kw.push_back(k);
      gap();
    }
    ToyRecording rec;
    std::size_t total = 0;
    for (const auto& p : parts) total += p.size();
    rec.samples = background(total);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      for (std::size_t j = 0; j < parts[i].size(); ++j) rec.samples[pos + j] += parts[i][j];
      if (part_kw[i] >= 0) rec.events.push_back({part_kw[i], pos, pos + parts[i].size()});
      pos += parts[i].size();
    }
    clip_unit(rec.samples);
    return rec;
  }

  /// Sentence with 0-3 uniformly drawn keywords.
  ToyRecording random_sentence() {
    const int count = uniform_int(0, 3);
    std::vector<int> kws;
    for (int i = 0; i < count; ++i) kws.push_back(uniform_int(0, spec_.n_keywords - 1));
    return sentence(kws);
  }

  /// Background noise with fillers, for the no-speech class.
  std::vector<double> noise_recording(double seconds) {
    std::vector<double> out = background(static_cast<std::size_t>(std::lround(seconds * kSampleRate)));
    const int n_fill = uniform_int(2, 5);
    for (int i = 0; i < n_fill; ++i) {
      std::vector<double> f = filler();
      if (f.size() >= out.size()) continue;
      const auto at = static_cast<std::size_t>(uniform_int(0, static_cast<int>(out.size() - f.size())));
      for (std::size_t j = 0; j < f.size(); ++j) out[at + j] += f[j];
    }
    clip_unit(out);
    return out;
  }

  /// Random sentences concatenated until at least `seconds` of audio.
  ToyRecording long_recording(double seconds) {
    ToyRecording rec;
    const auto target = static_cast<std::size_t>(std::lround(seconds * kSampleRate));
    while (rec.samples.size() < target) {
      ToyRecording s = random_sentence();
      for (auto e : s.events) {
        e.begin += rec.samples.size();
        e.end += rec.samples.size();
        rec.events.push_back(e);
      }
      rec.samples.insert(rec.samples.end(), s.samples.begin(), s.samples.end());
    }
    return rec;
  }

 private:
  static double fade(std::size_t i, std::size_t n) {
    const std::size_t ramp = std::min<std::size_t>(kSampleRate / 100, n / 2);
    if (ramp == 0) return 1.0;
    const std::size_t d = std::min(i, n - 1 - i);
    if (d >= ramp) return 1.0;
    return 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(d) / static_cast<double>(ramp));
  }

  static void clip_unit(std::vector<double>& x) {
    for (double& v : x) v = std::clamp(v, -1.0, 1.0);
  }

  ToyDatasetSpec spec_;
  std::mt19937_64 rng_;
  std::vector<ToyPattern> patterns_;
};

namespace detail {

inline std::string numbered(const char* prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%03d%s", prefix, i, ext);
  return buf;
}

inline void write_toy_split(ToySynth& synth, const fs::path& dir, int n_sentences) {
  fs::create_directories(dir / "sentences");
  std::vector<EventAnnotation> events;
  for (int s = 0; s < n_sentences; ++s) {
    const std::string name = numbered("s", s, ".wav");
    ToyRecording rec = synth.random_sentence();
    write_wav(dir / "sentences" / name, rec.samples, kSampleRate);
    for (const auto& e : rec.events)
      events.push_back({name, static_cast<double>(e.begin) / kSampleRate, static_cast<double>(e.end) / kSampleRate,
                        synth.patterns()[static_cast<std::size_t>(e.keyword)].name});
  }
  write_annotations(dir / "annotations.tsv", events);
}

}  // namespace detail

/// Writes a complete toy corpus under `out` and loads it back.
inline CorpusLayout gen_toy(const ToyDatasetSpec& spec, const fs::path& out) {
  spec.validate();
  ToySynth synth(spec);
  try {
    for (int k = 0; k < spec.n_keywords; ++k) {
      const fs::path dir = out / "train" / synth.patterns()[static_cast<std::size_t>(k)].name;
      fs::create_directories(dir);
      for (int n = 0; n < spec.shots; ++n)
        write_wav(dir / detail::numbered("", n, ".wav"), synth.training_sample(k), kSampleRate);
    }
    detail::write_toy_split(synth, out / "val", spec.n_sentences);
    detail::write_toy_split(synth, out / "test", spec.n_sentences);
    if (spec.n_noise_files > 0) {
      fs::create_directories(out / "noise");
      for (int n = 0; n < spec.n_noise_files; ++n)
        write_wav(out / "noise" / detail::numbered("n", n, ".wav"), synth.noise_recording(4.0), kSampleRate);
    }
  } catch (const fs::filesystem_error& e) {
    throw Error(std::string("cannot write toy corpus: ") + e.what());
  }
  return load_corpus(out);
}

}  // namespace kws
