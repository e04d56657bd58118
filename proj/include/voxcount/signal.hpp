#pragma once

// Waveform-domain operations: mixing, normalization, SNR-controlled noise
// injection, edge silence trimming and overlapped windowing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "voxcount/common.hpp"

namespace voxcount {

inline constexpr int kDefaultSampleRate = 16000;

/// Mono signal. Amplitudes are nominally in [-1, 1] but intermediate sums
/// may exceed that range and are kept at full precision.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  AudioClip() = default;
  AudioClip(std::vector<double> s, int rate = kDefaultSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  friend bool operator==(const AudioClip&, const AudioClip&) = default;
};

/// Overlapped analysis windows of `window_len` samples advanced by `shift`.
struct WindowPlan {
  std::size_t window_len = 16000;
  std::size_t shift = 8000;

  static WindowPlan half_overlap(std::size_t q) { return {q, q / 2}; }

  void validate() const {
    require(shift > 0 && shift <= window_len,
            "WindowPlan requires 0 < shift <= window_len (got window_len=" +
                std::to_string(window_len) + ", shift=" + std::to_string(shift) + ")");
  }

  friend bool operator==(const WindowPlan&, const WindowPlan&) = default;
};

/// Mean squared amplitude.
inline double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

inline double peak_amplitude(std::span<const double> x) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  return peak;
}

/// Sample-wise sum; shorter clips are zero-padded at the end.
inline AudioClip mix(std::span<const AudioClip> clips) {
  require(!clips.empty(), "mix: empty clip list");
  const int rate = clips.front().sample_rate;
  std::size_t len = 0;
  for (const auto& c : clips) {
    require(c.sample_rate == rate, "mix: sample rate mismatch (" + std::to_string(rate) +
                                       " Hz vs " + std::to_string(c.sample_rate) + " Hz)");
    len = std::max(len, c.size());
  }
  std::vector<double> out(len, 0.0);
  for (const auto& c : clips)
    for (std::size_t i = 0; i < c.size(); ++i) out[i] += c.samples[i];
  return {std::move(out), rate};
}

inline AudioClip mix(std::initializer_list<AudioClip> clips) {
  return mix(std::span<const AudioClip>(clips.begin(), clips.size()));
}

/// Scales so that max |x| = 1 exactly.
inline AudioClip peak_normalize(const AudioClip& clip) {
  const double peak = peak_amplitude(clip.samples);
  require(peak > 0.0 && std::isfinite(peak), "peak_normalize: clip has no nonzero sample");
  AudioClip out = clip;
  if (peak == 1.0) return out;
  for (double& v : out.samples) v /= peak;
  return out;
}

/// Repeats (wraps) or truncates to exactly `len` samples.
inline AudioClip loop_to_length(const AudioClip& clip, std::size_t len) {
  require(!clip.empty(), "loop_to_length: empty clip");
  std::vector<double> out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = clip.samples[i % clip.size()];
  return {std::move(out), clip.sample_rate};
}

/// Center-crops clips longer than `len`, zero-pads shorter ones at the end.
inline AudioClip fit_length(const AudioClip& clip, std::size_t len) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  if (clip.size() >= len) {
    const std::size_t start = (clip.size() - len) / 2;
    out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(start + len));
  } else {
    out.samples = clip.samples;
    out.samples.resize(len, 0.0);
  }
  return out;
}

/// Result of noise injection. The two components are returned alongside the
/// sum so the achieved SNR can be re-measured.
struct NoisyMixture {
  AudioClip mixture;
  AudioClip scaled_noise;
  double gain = 0.0;
};

/// Gain g such that 10 log10(P_speech / (g^2 P_noise)) = snr_db.
inline double snr_gain(double speech_power, double noise_power, double snr_db) {
  require(speech_power > 0.0, "add_noise_at_snr: speech has zero power");
  require(noise_power > 0.0, "add_noise_at_snr: noise has zero power");
  return std::sqrt(speech_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

inline double measured_snr_db(std::span<const double> speech, std::span<const double> noise) {
  return 10.0 * std::log10(mean_power(speech) / mean_power(noise));
}

/// speech + g * noise, noise looped or truncated to the speech length.
/// Power is the mean square over the whole clip.
inline NoisyMixture add_noise_at_snr(const AudioClip& speech, const AudioClip& noise,
                                     double snr_db) {
  require(speech.sample_rate == noise.sample_rate, "add_noise_at_snr: sample rate mismatch");
  require(!speech.empty() && !noise.empty(), "add_noise_at_snr: empty input");
  require(std::isfinite(snr_db), "add_noise_at_snr: snr_db must be finite");
  AudioClip fitted = loop_to_length(noise, speech.size());
  const double g = snr_gain(mean_power(speech.samples), mean_power(fitted.samples), snr_db);
  NoisyMixture out;
  out.gain = g;
  for (double& v : fitted.samples) v *= g;
  out.mixture = speech;
  for (std::size_t i = 0; i < speech.size(); ++i) out.mixture.samples[i] += fitted.samples[i];
  out.scaled_noise = std::move(fitted);
  return out;
}

inline constexpr double kDefaultSilenceThreshold = 0.001;
inline constexpr std::size_t kDefaultSilenceBlock = 400;

/// Removes leading and trailing blocks of `block` samples whose RMS is below
/// `threshold`. Leading blocks are aligned to the start of the clip, trailing
/// blocks to its end. The first loud leading block is always kept whole.
inline AudioClip trim_silence(const AudioClip& clip, double threshold = kDefaultSilenceThreshold,
                              std::size_t block = kDefaultSilenceBlock) {
  require(threshold >= 0.0, "trim_silence: negative threshold");
  require(block > 0, "trim_silence: block must be positive");
  const std::size_t n = clip.size();
  const auto block_rms = [&](std::size_t begin, std::size_t end) {
    return std::sqrt(mean_power(std::span<const double>(clip.samples).subspan(begin, end - begin)));
  };

  std::size_t start = n;
  for (std::size_t b = 0; b < n; b += block) {
    if (block_rms(b, std::min(n, b + block)) >= threshold) {
      start = b;
      break;
    }
  }
  if (start == n) throw InputError("trim_silence: all-silent clip");

  std::size_t end = n;
  while (end > start) {
    const std::size_t begin = end > block ? end - block : 0;
    if (block_rms(std::max(begin, start), end) >= threshold) break;
    end = begin > start ? begin : start;
  }
  end = std::max(end, std::min(n, start + block));

  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

/// floor((len - q) / shift) + 1 for len >= q, else 0.
inline std::size_t window_count(std::size_t len, const WindowPlan& plan) {
  plan.validate();
  if (len < plan.window_len) return 0;
  return (len - plan.window_len) / plan.shift + 1;
}

inline std::vector<AudioClip> window(const AudioClip& clip, const WindowPlan& plan) {
  plan.validate();
  require(clip.size() >= plan.window_len,
          "window: clip of " + std::to_string(clip.size()) + " samples is shorter than q=" +
              std::to_string(plan.window_len));
  const std::size_t count = window_count(clip.size(), plan);
  std::vector<AudioClip> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto first = clip.samples.begin() + static_cast<std::ptrdiff_t>(k * plan.shift);
    out.emplace_back(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(plan.window_len)),
                     clip.sample_rate);
  }
  return out;
}

}  // namespace voxcount
