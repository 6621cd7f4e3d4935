#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "kws/wav.hpp"

namespace {

using namespace kws;

std::span<const unsigned char> as_bytes(const std::string& s) {
  return {reinterpret_cast<const unsigned char*>(s.data()), s.size()};
}

void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>(v >> 8));
}
void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string float_stereo_wav(const std::vector<float>& interleaved, std::uint32_t rate) {
  std::string s = "RIFF";
  put32(s, static_cast<std::uint32_t>(36 + 8 + 4 + interleaved.size() * 4));
  s += "WAVEfmt ";
  put32(s, 16);
  put16(s, 3);
  put16(s, 2);
  put32(s, rate);
  put32(s, rate * 8);
  put16(s, 8);
  put16(s, 32);
  s += "LIST";  // an unrelated chunk before the data
  put32(s, 4);
  s += "INFO";
  s += "data";
  put32(s, static_cast<std::uint32_t>(interleaved.size() * 4));
  for (float f : interleaved) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put32(s, u);
  }
  return s;
}

TEST(Wav, Pcm16RoundTrip) {
  const std::vector<double> x{0.0, 0.5, -0.5, 0.999, -1.0, 0.25};
  const std::string bytes = encode_wav_pcm16(x, 16000);
  const WavData w = decode_wav(as_bytes(bytes));
  EXPECT_EQ(w.channels, 1);
  EXPECT_EQ(w.sample_rate, 16000);
  ASSERT_EQ(w.interleaved.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(w.interleaved[i], x[i], 1.0 / 16384);
}

TEST(Wav, FloatStereoWithExtraChunk) {
  const std::vector<float> x{0.1f, -0.1f, 0.2f, -0.2f, 0.3f, -0.3f};
  const WavData w = decode_wav(as_bytes(float_stereo_wav(x, 8000)));
  EXPECT_EQ(w.channels, 2);
  EXPECT_EQ(w.sample_rate, 8000);
  EXPECT_EQ(w.frames(), 3u);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(static_cast<float>(w.interleaved[i]), x[i]);
}

TEST(Wav, RejectsMalformedInput) {
  EXPECT_THROW(decode_wav(as_bytes(std::string("RIFX0000WAVE"))), DecodeError);
  EXPECT_THROW(decode_wav(as_bytes(std::string("RIFF"))), DecodeError);
  std::string no_data = encode_wav_pcm16(std::vector<double>{0.1}, 16000).substr(0, 36);
  EXPECT_THROW(decode_wav(as_bytes(no_data)), DecodeError);
  EXPECT_THROW(read_wav("/nonexistent/file.wav"), DecodeError);
}

TEST(Wav, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "kws_wav_roundtrip.wav";
  const std::vector<double> x{0.25, -0.25, 0.125};
  write_wav(path, x, 22050);
  const WavData w = read_wav(path);
  EXPECT_EQ(w.sample_rate, 22050);
  ASSERT_EQ(w.interleaved.size(), 3u);
  EXPECT_NEAR(w.interleaved[1], -0.25, 1e-4);
  std::filesystem::remove(path);
}

}  // namespace
