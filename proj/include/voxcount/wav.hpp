#pragma once

// Mono 16-bit PCM WAV reader/writer. Samples map to [-1, 1) by division by
// 32768. Only the pipeline rate is accepted on read; there is no resampling.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxcount/common.hpp"
#include "voxcount/signal.hpp"

namespace voxcount {

namespace wav_detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace wav_detail

inline std::int16_t to_pcm16(double x) {
  const double scaled = std::round(x * 32768.0);
  if (scaled >= 32767.0) return 32767;
  if (scaled <= -32768.0) return -32768;
  return static_cast<std::int16_t>(scaled);
}

inline std::string encode_wav(const AudioClip& clip) {
  using namespace wav_detail;
  const auto data_bytes = static_cast<std::uint32_t>(clip.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double x : clip.samples) put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
  return out;
}

/// Parses a RIFF/WAVE byte buffer. `origin` only labels diagnostics.
inline AudioClip decode_wav(const std::string& bytes, const std::string& origin = "<memory>",
                            int expected_rate = kDefaultSampleRate) {
  using namespace wav_detail;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  const auto fail = [&](const std::string& why) { throw InputError(origin + ": " + why); };
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const std::uint32_t size = read_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > n) fail("truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (size < 16) fail("fmt chunk too short");
      format = read_u16(p + body);
      channels = read_u16(p + body + 2);
      rate = read_u32(p + body + 4);
      bits = read_u16(p + body + 14);
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (format != 1 || bits != 16) fail("only 16-bit integer PCM is supported");
      if (channels != 1) fail("only mono audio is supported (got " + std::to_string(channels) + " channels)");
      if (static_cast<int>(rate) != expected_rate)
        fail("sample rate " + std::to_string(rate) + " Hz, expected " + std::to_string(expected_rate) + " Hz");
      std::vector<double> samples(size / 2);
      for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i] = static_cast<std::int16_t>(read_u16(p + body + 2 * i)) / 32768.0;
      return {std::move(samples), static_cast<int>(rate)};
    }
    pos = body + size + (size & 1u);
  }
  fail("no data chunk");
  return {};
}

inline AudioClip read_wav(const std::filesystem::path& path, int expected_rate = kDefaultSampleRate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string(), expected_rate);
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  const std::string bytes = encode_wav(clip);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace voxcount
