#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "kws/error.hpp"

namespace kws {

/// Decoded RIFF/WAVE contents, samples interleaved and scaled to [-1, 1].
struct WavData {
  std::vector<double> interleaved;
  int channels = 1;
  int sample_rate = 0;

  std::size_t frames() const { return channels > 0 ? interleaved.size() / channels : 0; }
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace detail

/// Parses an in-memory WAV file. Supports PCM 8/16/24/32-bit and IEEE float
/// 32/64-bit, including WAVE_FORMAT_EXTENSIBLE headers.
inline WavData decode_wav(std::span<const unsigned char> bytes) {
  using detail::read_u16le;
  using detail::read_u32le;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DecodeError("not a RIFF/WAVE file");
  }
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32le(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) throw DecodeError("truncated fmt chunk");
      format = read_u16le(chunk + 8);
      channels = read_u16le(chunk + 10);
      rate = read_u32le(chunk + 12);
      bits = read_u16le(chunk + 22);
      if (format == 0xFFFE && size >= 40 && avail >= 40) format = read_u16le(chunk + 8 + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, avail);
    }
    pos = body + size + (size & 1U);
  }
  if (!have_fmt) throw DecodeError("missing fmt chunk");
  if (data == nullptr) throw DecodeError("missing data chunk");
  if (channels == 0) throw DecodeError("zero channels");
  if (rate == 0) throw DecodeError("zero sample rate");

  const std::size_t width = bits / 8;
  const bool pcm = format == 1;
  const bool ieee = format == 3;
  if (!(pcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) &&
      !(ieee && (bits == 32 || bits == 64))) {
    throw DecodeError("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits)");
  }
  const std::size_t count = data_size / width;
  WavData out;
  out.channels = channels;
  out.sample_rate = static_cast<int>(rate);
  out.interleaved.resize(count - count % channels);
  for (std::size_t i = 0; i < out.interleaved.size(); ++i) {
    const unsigned char* p = data + i * width;
    double v = 0.0;
    if (ieee && bits == 32) {
      float f;
      std::uint32_t u = read_u32le(p);
      std::memcpy(&f, &u, 4);
      v = f;
    } else if (ieee) {
      double d;
      const std::uint64_t u = read_u32le(p) | (static_cast<std::uint64_t>(read_u32le(p + 4)) << 32);
      std::memcpy(&d, &u, 8);
      v = d;
    } else if (bits == 8) {
      v = (static_cast<int>(p[0]) - 128) / 128.0;
    } else if (bits == 16) {
      v = static_cast<std::int16_t>(read_u16le(p)) / 32768.0;
    } else if (bits == 24) {
      std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
      if (s & 0x800000) s -= 0x1000000;
      v = s / 8388608.0;
    } else {
      v = static_cast<std::int32_t>(read_u32le(p)) / 2147483648.0;
    }
    out.interleaved[i] = v;
  }
  return out;
}

inline WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

/// Encodes mono samples as 16-bit PCM. Values are clipped to [-1, 1].
inline std::string encode_wav_pcm16(std::span<const double> samples, int sample_rate) {
  using detail::put_u16le;
  using detail::put_u32le;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32le(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32le(out, 16);
  put_u16le(out, 1);
  put_u16le(out, 1);
  put_u32le(out, static_cast<std::uint32_t>(sample_rate));
  put_u32le(out, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16le(out, 2);
  put_u16le(out, 16);
  out += "data";
  put_u32le(out, data_bytes);
  for (double s : samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    put_u16le(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::string bytes = encode_wav_pcm16(samples, sample_rate);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace kws
