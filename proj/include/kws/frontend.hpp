#pragma once

// Audio preparation, segmentation and spectral features (log-Mel, HFCC).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "kws/error.hpp"
#include "kws/types.hpp"

namespace kws {

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
  std::string source_id;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class SegmentMode { kTrain, kInfer };

struct SegmentationConfig {
  double seg_len_s = 0.25;
  double train_overlap_s = 0.05;
  int infer_hop_samples = 256;

  int window_samples() const { return static_cast<int>(std::ceil(seg_len_s * kSampleRate - 1e-9)); }
  int pad_samples() const { return static_cast<int>(std::floor(seg_len_s * kSampleRate / 2.0 + 1e-9)); }
  int train_step_samples() const {
    return window_samples() - static_cast<int>(std::lround(train_overlap_s * kSampleRate));
  }
  int step_samples(SegmentMode mode) const {
    return mode == SegmentMode::kTrain ? train_step_samples() : infer_hop_samples;
  }

  void validate() const {
    if (!(seg_len_s > 0.0)) throw ParameterError("seg_len_s must be positive");
    if (!(train_overlap_s > 0.0 && train_overlap_s < seg_len_s))
      throw ParameterError("train_overlap_s must lie in (0, seg_len_s)");
    if (infer_hop_samples < 1) throw ParameterError("infer_hop_samples must be >= 1");
    if (train_step_samples() < 1) throw ParameterError("train step must be >= 1 sample");
  }
};

struct Segment {
  std::vector<double> samples;
  double center_time_s = 0.0;
  std::size_t index = 0;
};

enum class FeatureKind { kLogMel, kHfcc };

inline const char* to_string(FeatureKind kind) { return kind == FeatureKind::kLogMel ? "logmel" : "hfcc"; }

struct FeatureMatrix {
  Matrix frames;
  double frame_step_s = 0.0;
  FeatureKind kind = FeatureKind::kLogMel;
};

// ---------------------------------------------------------------------------
// Preparation

inline std::vector<double> mixdown(std::span<const double> interleaved, int channels) {
  if (channels < 1) throw ParameterError("channel count must be >= 1");
  const std::size_t frames = interleaved.size() / static_cast<std::size_t>(channels);
  std::vector<double> mono(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) acc += interleaved[i * channels + c];
    mono[i] = acc / channels;
  }
  return mono;
}

inline double peak_abs(std::span<const double> x) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  return peak;
}

/// Scales to unit peak; all-zero input is returned unchanged.
inline void peak_normalize(std::vector<double>& x) {
  const double peak = peak_abs(x);
  if (peak == 0.0) return;
  for (double& v : x) v /= peak;
}

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace detail

/// Resampler kernel constants: Kaiser-windowed sinc, beta 8.6, 32 zero
/// crossings per side, passband edge at 0.95 of the lower Nyquist rate.
struct ResamplerKernel {
  static constexpr double kBeta = 8.6;
  static constexpr double kZeroCrossings = 32.0;
  static constexpr double kCutoff = 0.95;
};

/// Band-limited rational resampling from `from_rate` to `to_rate` (polyphase
/// windowed sinc). Output length is ceil(n * to / from).
inline std::vector<double> resample(std::span<const double> x, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw ParameterError("sample rates must be positive");
  if (from_rate == to_rate) return {x.begin(), x.end()};
  const long g = std::gcd(static_cast<long>(from_rate), static_cast<long>(to_rate));
  const long up = to_rate / g;
  const long down = from_rate / g;
  const double omega = ResamplerKernel::kCutoff * std::min(1.0, static_cast<double>(up) / down);
  const double half_width = ResamplerKernel::kZeroCrossings / omega;
  const double i0_beta = std::cyl_bessel_i(0.0, ResamplerKernel::kBeta);
  auto kernel = [&](double t) {
    const double r = t / half_width;
    if (std::abs(r) >= 1.0) return 0.0;
    const double w = std::cyl_bessel_i(0.0, ResamplerKernel::kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
    return omega * detail::sinc(omega * t) * w;
  };

  const long n_in = static_cast<long>(x.size());
  const long n_out = (n_in * up + down - 1) / down;
  const long taps = static_cast<long>(std::ceil(half_width));
  const long width = 2 * taps;
  // Phase table: for phase p, taps k = base - taps + 1 + j, j in [0, width).
  const bool tabulate = up <= 4096;
  std::vector<double> table;
  if (tabulate) {
    table.resize(static_cast<std::size_t>(up * width));
    for (long p = 0; p < up; ++p) {
      const double frac = static_cast<double>(p) / up;
      for (long j = 0; j < width; ++j) table[p * width + j] = kernel(frac + static_cast<double>(taps - 1 - j));
    }
  }
  std::vector<double> y(static_cast<std::size_t>(n_out));
  for (long n = 0; n < n_out; ++n) {
    const long num = n * down;
    const long base = num / up;
    const long phase = num % up;
    const double frac = static_cast<double>(phase) / up;
    double acc = 0.0;
    for (long j = 0; j < width; ++j) {
      const long k = base - taps + 1 + j;
      if (k < 0 || k >= n_in) continue;
      const double h = tabulate ? table[phase * width + j] : kernel(frac + static_cast<double>(taps - 1 - j));
      acc += x[static_cast<std::size_t>(k)] * h;
    }
    y[static_cast<std::size_t>(n)] = acc;
  }
  return y;
}

/// Second-order Butterworth high-pass biquad (bilinear transform, Q = 1/sqrt 2).
struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad butterworth_highpass(double cutoff_hz, double rate) {
    const double w0 = 2.0 * std::numbers::pi * cutoff_hz / rate;
    const double alpha = std::sin(w0) / (2.0 * std::numbers::sqrt2 / 2.0);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    return {(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0, -2.0 * cw / a0,
            (1.0 - alpha) / a0};
  }

  void run(std::vector<double>& x) const {
    double z1 = 0.0, z2 = 0.0;  // transposed direct form II
    for (double& v : x) {
      const double in = v;
      const double out = b0 * in + z1;
      z1 = b1 * in - a1 * out + z2;
      z2 = b2 * in - a2 * out;
      v = out;
    }
  }
};

/// Zero-phase (forward-backward) Butterworth high-pass. The signal is
/// extended by odd reflection at both ends so start-up transients decay
/// outside the returned range.
inline std::vector<double> highpass_zero_phase(std::span<const double> x, double cutoff_hz, double rate) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t pad = std::min<std::size_t>(1024, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t k = pad; k >= 1; --k) ext.push_back(2.0 * x[0] - x[k]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t k = 1; k <= pad; ++k) ext.push_back(2.0 * x[n - 1] - x[n - 1 - k]);

  const Biquad hp = Biquad::butterworth_highpass(cutoff_hz, rate);
  hp.run(ext);
  std::reverse(ext.begin(), ext.end());
  hp.run(ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

inline constexpr double kHighpassHz = 50.0;

/// Mixdown -> peak normalisation -> resampling to 16 kHz -> 50 Hz high-pass.
inline AudioClip prepare_audio(std::span<const double> interleaved, int channels, int rate,
                               std::string source_id = {}) {
  if (rate <= 0) throw ParameterError("sample rate must be positive");
  if (channels < 1) throw ParameterError("channel count must be >= 1");
  if (interleaved.size() < static_cast<std::size_t>(channels)) throw DecodeError("empty audio input");
  std::vector<double> mono = mixdown(interleaved, channels);
  peak_normalize(mono);
  std::vector<double> resampled = resample(mono, rate, kSampleRate);
  AudioClip clip;
  clip.samples = highpass_zero_phase(resampled, kHighpassHz, kSampleRate);
  clip.sample_rate = kSampleRate;
  clip.source_id = std::move(source_id);
  peak_normalize(clip.samples);
  return clip;
}

// ---------------------------------------------------------------------------
// Segmentation

/// floor((padded_len - win_len) / step) + 1 for a clip of `length` samples.
inline std::size_t segment_count(std::size_t length, const SegmentationConfig& cfg, SegmentMode mode) {
  const std::size_t padded = length + 2 * static_cast<std::size_t>(cfg.pad_samples());
  const auto win = static_cast<std::size_t>(cfg.window_samples());
  const auto step = static_cast<std::size_t>(cfg.step_samples(mode));
  if (padded < win) return 1;
  return (padded - win) / step + 1;
}

inline std::vector<Segment> segment_clip(const AudioClip& clip, const SegmentationConfig& cfg, SegmentMode mode) {
  cfg.validate();
  if (clip.samples.empty()) throw ParameterError("cannot segment an empty clip");
  const std::size_t n = segment_count(clip.samples.size(), cfg, mode);
  const long pad = cfg.pad_samples();
  const long win = cfg.window_samples();
  const long step = cfg.step_samples(mode);
  const long len = static_cast<long>(clip.samples.size());
  std::vector<Segment> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Segment& seg = out[i];
    seg.index = i;
    seg.samples.assign(static_cast<std::size_t>(win), 0.0);
    const long start = static_cast<long>(i) * step - pad;  // in clip coordinates
    for (long j = 0; j < win; ++j) {
      const long src = start + j;
      if (src >= 0 && src < len) seg.samples[static_cast<std::size_t>(j)] = clip.samples[static_cast<std::size_t>(src)];
    }
    seg.center_time_s = (static_cast<double>(start) + win / 2.0) / kSampleRate;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral analysis

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters over an rfft bin grid, stored sparsely.
struct Filterbank {
  struct Filter {
    int first_bin = 0;
    std::vector<double> weights;
  };
  std::vector<Filter> filters;
  std::vector<double> centers_hz;

  std::size_t size() const { return filters.size(); }

  /// Unit-peak triangle between lo and hi with apex at center.
  static Filter triangle(double lo, double center, double hi, int n_fft, double rate) {
    const int n_bins = n_fft / 2 + 1;
    Filter f;
    f.first_bin = n_bins;
    std::vector<double> w;
    for (int b = 0; b < n_bins; ++b) {
      const double hz = b * rate / n_fft;
      double v = 0.0;
      if (hz > lo && hz <= center) v = (hz - lo) / (center - lo);
      else if (hz > center && hz < hi) v = (hi - hz) / (hi - center);
      if (v > 0.0) {
        if (f.first_bin == n_bins) f.first_bin = b;
        w.resize(static_cast<std::size_t>(b - f.first_bin + 1), 0.0);
        w.back() = v;
      }
    }
    if (w.empty()) f.first_bin = 0;
    f.weights = std::move(w);
    return f;
  }

  /// out[m] = sum_b weight(m, b) * spectrum[b]
  void apply(std::span<const double> spectrum, std::span<double> out) const {
    for (std::size_t m = 0; m < filters.size(); ++m) {
      const Filter& f = filters[m];
      double acc = 0.0;
      for (std::size_t j = 0; j < f.weights.size(); ++j) acc += f.weights[j] * spectrum[f.first_bin + j];
      out[m] = acc;
    }
  }
};

struct LogMelConfig {
  static constexpr int kFftSize = 1024;
  static constexpr int kHop = 256;
  static constexpr int kMels = 64;
  static constexpr double kFmin = 0.0;
  static constexpr double kFmax = 8000.0;
  static constexpr double kLogFloor = 1e-10;
};

/// 64 triangles spaced linearly on the HTK Mel scale over 0-8000 Hz.
inline Filterbank mel_filterbank(int n_mels = LogMelConfig::kMels, int n_fft = LogMelConfig::kFftSize,
                                 double rate = kSampleRate, double fmin = LogMelConfig::kFmin,
                                 double fmax = LogMelConfig::kFmax) {
  Filterbank fb;
  const double mlo = hz_to_mel(fmin);
  const double mhi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mlo + (mhi - mlo) * i / (n_mels + 1));
  for (int m = 0; m < n_mels; ++m) {
    fb.filters.push_back(Filterbank::triangle(edges[m], edges[m + 1], edges[m + 2], n_fft, rate));
    fb.centers_hz.push_back(edges[m + 1]);
  }
  return fb;
}

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);  // periodic
  return w;
}

inline std::vector<double> hamming_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
  return w;
}

namespace detail {

/// |rfft| (or |rfft|^2) of a windowed frame zero-padded to n_fft.
inline void frame_spectrum(std::span<const double> frame, std::span<const double> window, int n_fft, bool power,
                           std::vector<double>& out) {
  thread_local Eigen::FFT<double> fft = [] {
    Eigen::FFT<double> f;
    f.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    return f;
  }();
  thread_local std::vector<double> buf;
  thread_local std::vector<std::complex<double>> spec;
  buf.assign(static_cast<std::size_t>(n_fft), 0.0);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i] * window[i];
  fft.fwd(spec, buf);
  out.resize(static_cast<std::size_t>(n_fft / 2 + 1));
  for (std::size_t b = 0; b < out.size(); ++b) out[b] = power ? std::norm(spec[b]) : std::abs(spec[b]);
}

}  // namespace detail

/// Log-Mel magnitude spectrogram of an arbitrary-length signal. Frames are
/// centred (zero padding of n_fft/2 on both sides) and exactly
/// ceil(len / hop) frames are produced.
inline Matrix logmel_frames(std::span<const double> x) {
  using C = LogMelConfig;
  static const Filterbank fb = mel_filterbank();
  static const std::vector<double> window = hann_window(C::kFftSize);
  const std::size_t len = x.size();
  const std::size_t n_frames = (len + C::kHop - 1) / C::kHop;
  Matrix out(static_cast<Eigen::Index>(n_frames), C::kMels);
  std::vector<double> frame(C::kFftSize);
  std::vector<double> mag;
  std::vector<double> mel(C::kMels);
  const long half = C::kFftSize / 2;
  for (std::size_t t = 0; t < n_frames; ++t) {
    const long start = static_cast<long>(t) * C::kHop - half;
    for (long j = 0; j < C::kFftSize; ++j) {
      const long src = start + j;
      frame[j] = (src >= 0 && src < static_cast<long>(len)) ? x[static_cast<std::size_t>(src)] : 0.0;
    }
    detail::frame_spectrum(frame, window, C::kFftSize, false, mag);
    fb.apply(mag, mel);
    for (int m = 0; m < C::kMels; ++m) out(static_cast<Eigen::Index>(t), m) = std::log(mel[m] + C::kLogFloor);
  }
  return out;
}

/// Log-Mel spectrogram of one segment: T = ceil(L_seg * 16000 / 256) rows, 64 columns.
inline Matrix logmel(const Segment& segment, const SegmentationConfig& cfg = {}) {
  if (segment.samples.size() != static_cast<std::size_t>(cfg.window_samples()))
    throw ParameterError("segment has " + std::to_string(segment.samples.size()) + " samples, expected " +
                         std::to_string(cfg.window_samples()));
  return logmel_frames(segment.samples);
}

inline int frames_per_segment(const SegmentationConfig& cfg = {}) {
  return (cfg.window_samples() + LogMelConfig::kHop - 1) / LogMelConfig::kHop;
}

// ---------------------------------------------------------------------------
// HFCC

/// Fixed HFCC constants: 40 ms Hamming frames every 10 ms, 1024-point FFT,
/// 40 filters over 0-8000 Hz with Moore-Glasberg ERB bandwidths (E-factor 1),
/// 13 cepstra plus deltas and delta-deltas (regression half-width 2).
struct HfccConfig {
  static constexpr int kFrame = 640;
  static constexpr int kStep = 160;
  static constexpr int kFftSize = 1024;
  static constexpr int kFilters = 40;
  static constexpr double kFmin = 0.0;
  static constexpr double kFmax = 8000.0;
  static constexpr double kErbScale = 1.0;
  static constexpr int kDeltaWidth = 2;
  static constexpr double kLogFloor = 1e-10;
};

inline double erb_hz(double fc) { return 6.23e-6 * fc * fc + 93.39e-3 * fc + 28.52; }

/// Filters centred uniformly on the Mel scale, each a triangle spanning
/// fc +- E * ERB(fc); the outermost centres are chosen so the outer edges
/// land on fmin and fmax.
inline Filterbank hfcc_filterbank() {
  using C = HfccConfig;
  // Solve fc -+ E*ERB(fc) = f for the outer centres.
  auto solve = [](double edge, double sign) {
    const double a = sign * C::kErbScale * 6.23e-6;
    const double b = 1.0 + sign * C::kErbScale * 93.39e-3;
    const double c = sign * C::kErbScale * 28.52 - edge;
    if (std::abs(a) < 1e-18) return -c / b;
    const double disc = std::sqrt(b * b - 4.0 * a * c);
    const double r1 = (-b + disc) / (2.0 * a);
    const double r2 = (-b - disc) / (2.0 * a);
    return (r1 >= 0.0 && (r2 < 0.0 || r1 < r2)) ? r1 : r2;
  };
  const double first = solve(C::kFmin, -1.0);
  const double last = solve(C::kFmax, 1.0);
  Filterbank fb;
  const double mlo = hz_to_mel(first);
  const double mhi = hz_to_mel(last);
  for (int i = 0; i < C::kFilters; ++i) {
    const double fc = mel_to_hz(mlo + (mhi - mlo) * i / (C::kFilters - 1));
    const double bw = C::kErbScale * erb_hz(fc);
    fb.filters.push_back(Filterbank::triangle(fc - bw, fc, fc + bw, C::kFftSize, kSampleRate));
    fb.centers_hz.push_back(fc);
  }
  return fb;
}

/// Regression deltas over +-width frames with edge replication.
inline Matrix delta_features(const Matrix& x, int width) {
  const Eigen::Index n = x.rows();
  double denom = 0.0;
  for (int k = 1; k <= width; ++k) denom += 2.0 * k * k;
  Matrix d = Matrix::Zero(n, x.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    for (int k = 1; k <= width; ++k) {
      const Eigen::Index ahead = std::min<Eigen::Index>(t + k, n - 1);
      const Eigen::Index behind = std::max<Eigen::Index>(t - k, 0);
      d.row(t) += k * (x.row(ahead) - x.row(behind));
    }
  }
  return d / denom;
}

/// HFCC cepstra with deltas: floor((len - 640) / 160) + 1 frames of 3 * n_coeffs values.
inline FeatureMatrix hfcc(const AudioClip& clip, int n_coeffs = 13) {
  using C = HfccConfig;
  if (n_coeffs < 1 || n_coeffs > C::kFilters) throw ParameterError("n_coeffs must be in [1, 40]");
  if (clip.samples.size() < static_cast<std::size_t>(C::kFrame))
    throw ParameterError("clip shorter than one 40 ms HFCC frame");
  static const Filterbank fb = hfcc_filterbank();
  static const std::vector<double> window = hamming_window(C::kFrame);
  const std::size_t n_frames = (clip.samples.size() - C::kFrame) / C::kStep + 1;

  // Orthonormal DCT-II basis, first n_coeffs rows.
  Matrix dct(n_coeffs, C::kFilters);
  for (int k = 0; k < n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / C::kFilters) : std::sqrt(2.0 / C::kFilters);
    for (int m = 0; m < C::kFilters; ++m)
      dct(k, m) = scale * std::cos(std::numbers::pi * k * (m + 0.5) / C::kFilters);
  }

  Matrix ceps(static_cast<Eigen::Index>(n_frames), n_coeffs);
  std::vector<double> power;
  std::vector<double> energies(C::kFilters);
  Vector logs(C::kFilters);
  for (std::size_t t = 0; t < n_frames; ++t) {
    std::span<const double> frame(clip.samples.data() + t * C::kStep, C::kFrame);
    detail::frame_spectrum(frame, window, C::kFftSize, true, power);
    fb.apply(power, energies);
    for (int m = 0; m < C::kFilters; ++m) logs[m] = std::log(energies[m] + C::kLogFloor);
    ceps.row(static_cast<Eigen::Index>(t)) = (dct * logs).transpose();
  }
  const Matrix d1 = delta_features(ceps, C::kDeltaWidth);
  const Matrix d2 = delta_features(d1, C::kDeltaWidth);
  FeatureMatrix out;
  out.kind = FeatureKind::kHfcc;
  out.frame_step_s = static_cast<double>(C::kStep) / kSampleRate;
  out.frames.resize(ceps.rows(), 3 * n_coeffs);
  out.frames << ceps, d1, d2;
  return out;
}

}  // namespace kws
