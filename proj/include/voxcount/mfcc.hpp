#pragma once

// MFCC front end: framing, taper, power spectrum, triangular mel
// filterbank, log compression and orthonormal DCT-II.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "voxcount/common.hpp"
#include "voxcount/fft.hpp"
#include "voxcount/signal.hpp"

namespace voxcount {

enum class Taper { hann, rectangular };

struct MfccConfig {
  std::size_t frame_len = 400;  // 25 ms at 16 kHz
  std::size_t frame_hop = 160;  // 10 ms
  std::size_t fft_size = 512;
  std::size_t n_mel_filters = 26;
  std::size_t n_coeffs = 13;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double epsilon = 1e-10;
  Taper taper = Taper::hann;

  void validate(int sample_rate = kDefaultSampleRate) const {
    require(frame_len > 0 && frame_hop > 0, "MfccConfig: frame_len and frame_hop must be positive");
    require(is_power_of_two(fft_size), "MfccConfig: fft_size must be a power of two");
    require(frame_len <= fft_size, "MfccConfig: frame_len exceeds fft_size");
    require(n_coeffs > 0 && n_coeffs <= n_mel_filters, "MfccConfig: need 0 < n_coeffs <= n_mel_filters");
    require(fmin_hz >= 0.0 && fmin_hz < fmax_hz && fmax_hz <= sample_rate / 2.0,
            "MfccConfig: need 0 <= fmin < fmax <= sample_rate/2");
    require(epsilon > 0.0, "MfccConfig: epsilon must be positive");
  }

  /// Rows produced for a window of `window_len` samples.
  std::size_t frame_count(std::size_t window_len) const {
    if (window_len < frame_len) return 0;
    return (window_len - frame_len) / frame_hop + 1;
  }

  friend bool operator==(const MfccConfig&, const MfccConfig&) = default;
};

/// Time x coefficient matrix for one analysis window, row-major.
struct FeatureMatrix {
  std::size_t frame_count = 0;
  std::size_t coeff_count = 0;
  std::vector<double> values;

  double at(std::size_t frame, std::size_t coeff) const { return values[frame * coeff_count + coeff]; }
  double& at(std::size_t frame, std::size_t coeff) { return values[frame * coeff_count + coeff]; }
  std::span<const double> row(std::size_t frame) const {
    return std::span<const double>(values).subspan(frame * coeff_count, coeff_count);
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

inline double hz_to_mel(double hz) {
  require(hz >= 0.0, "hz_to_mel: negative frequency");
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline std::vector<double> make_taper(Taper taper, std::size_t len) {
  std::vector<double> w(len, 1.0);
  if (taper == Taper::hann) {
    constexpr double kTwoPi = 6.283185307179586476925;
    // Periodic Hann.
    for (std::size_t n = 0; n < len; ++n)
      w[n] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) / static_cast<double>(len));
  }
  return w;
}

/// |FFT|^2 / fft_size of the tapered, zero-padded frame for bins 0..fft_size/2.
inline std::vector<double> power_spectrum(std::span<const double> frame, const FftPlan& plan,
                                          std::span<const double> taper) {
  const std::size_t n = plan.size();
  require(frame.size() <= n, "power_spectrum: frame longer than fft_size");
  require(taper.size() == frame.size(), "power_spectrum: taper length mismatch");
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i] * taper[i];
  plan.forward(buf);
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) out[k] = std::norm(buf[k]) / static_cast<double>(n);
  return out;
}

inline std::vector<double> power_spectrum(std::span<const double> frame, std::size_t fft_size,
                                          Taper taper = Taper::hann) {
  const FftPlan plan(fft_size);
  return power_spectrum(frame, plan, make_taper(taper, frame.size()));
}

/// Row-major n_mel_filters x (fft_size/2 + 1) matrix of triangular filters.
struct MelFilterbank {
  std::size_t filters = 0;
  std::size_t bins = 0;
  std::vector<double> weights;
  std::vector<double> centers_hz;

  double at(std::size_t filter, std::size_t bin) const { return weights[filter * bins + bin]; }
};

/// Filter edges are equally spaced on the mel axis between fmin and fmax;
/// each triangle rises from its left neighbour's center to its own and falls
/// to its right neighbour's, evaluated at the bin frequencies (peak 1).
inline MelFilterbank mel_filterbank(const MfccConfig& config, int sample_rate = kDefaultSampleRate) {
  config.validate(sample_rate);
  MelFilterbank fb;
  fb.filters = config.n_mel_filters;
  fb.bins = config.fft_size / 2 + 1;
  fb.weights.assign(fb.filters * fb.bins, 0.0);

  const double mel_lo = hz_to_mel(config.fmin_hz);
  const double mel_hi = hz_to_mel(config.fmax_hz);
  std::vector<double> edges(fb.filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(fb.filters + 1));
  fb.centers_hz.assign(edges.begin() + 1, edges.end() - 1);

  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(config.fft_size);
  for (std::size_t m = 0; m < fb.filters; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < fb.bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb.weights[m * fb.bins + k] = w;
      any = any || w > 0.0;
    }
    require(any, "mel_filterbank: filter " + std::to_string(m) + " (center " + std::to_string(center) +
                     " Hz) has zero width at fft_size " + std::to_string(config.fft_size) +
                     "; use fewer filters or a larger fft_size");
  }
  return fb;
}

/// Reusable extractor; holds the FFT plan, taper, filterbank and DCT basis.
class MfccExtractor {
 public:
  explicit MfccExtractor(MfccConfig config, int sample_rate = kDefaultSampleRate)
      : config_(config),
        sample_rate_(sample_rate),
        plan_(config.fft_size),
        taper_(make_taper(config.taper, config.frame_len)),
        filterbank_(mel_filterbank(config, sample_rate)) {
    // Orthonormal DCT-II basis, n_coeffs x n_mel_filters.
    const std::size_t n = config_.n_mel_filters;
    dct_.resize(config_.n_coeffs * n);
    constexpr double kPi = 3.141592653589793238463;
    for (std::size_t k = 0; k < config_.n_coeffs; ++k) {
      const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
      for (std::size_t j = 0; j < n; ++j)
        dct_[k * n + j] = scale * std::cos(kPi * static_cast<double>(k) * (2.0 * j + 1.0) / (2.0 * n));
    }
  }

  const MfccConfig& config() const { return config_; }
  const MelFilterbank& filterbank() const { return filterbank_; }

  FeatureMatrix extract(std::span<const double> window) const {
    require(window.size() >= config_.frame_len,
            "extract_mfcc: window of " + std::to_string(window.size()) +
                " samples is shorter than frame_len=" + std::to_string(config_.frame_len));
    FeatureMatrix out;
    out.frame_count = config_.frame_count(window.size());
    out.coeff_count = config_.n_coeffs;
    out.values.resize(out.frame_count * out.coeff_count);
    std::vector<double> log_mel(filterbank_.filters);
    for (std::size_t t = 0; t < out.frame_count; ++t) {
      const auto spectrum = power_spectrum(window.subspan(t * config_.frame_hop, config_.frame_len), plan_, taper_);
      for (std::size_t m = 0; m < filterbank_.filters; ++m) {
        const double* w = &filterbank_.weights[m * filterbank_.bins];
        double energy = 0.0;
        for (std::size_t k = 0; k < filterbank_.bins; ++k) energy += w[k] * spectrum[k];
        log_mel[m] = std::log(energy + config_.epsilon);
      }
      for (std::size_t k = 0; k < config_.n_coeffs; ++k) {
        const double* basis = &dct_[k * filterbank_.filters];
        double c = 0.0;
        for (std::size_t m = 0; m < filterbank_.filters; ++m) c += basis[m] * log_mel[m];
        out.at(t, k) = c;
      }
    }
    return out;
  }

  FeatureMatrix extract(const AudioClip& window) const {
    require(window.sample_rate == sample_rate_, "extract_mfcc: sample rate mismatch");
    return extract(std::span<const double>(window.samples));
  }

 private:
  MfccConfig config_;
  int sample_rate_;
  FftPlan plan_;
  std::vector<double> taper_;
  MelFilterbank filterbank_;
  std::vector<double> dct_;
};

inline FeatureMatrix extract_mfcc(const AudioClip& window, const MfccConfig& config = {}) {
  return MfccExtractor(config, window.sample_rate).extract(window);
}

/// Per-coefficient min/max fitted on the training set.
struct NormStats {
  std::vector<double> min;
  std::vector<double> max;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline NormStats fit_norm_stats(std::span<const FeatureMatrix> features) {
  require(!features.empty(), "feature_normalize: empty feature list");
  const std::size_t coeffs = features.front().coeff_count;
  NormStats stats{std::vector<double>(coeffs, std::numeric_limits<double>::infinity()),
                  std::vector<double>(coeffs, -std::numeric_limits<double>::infinity())};
  for (const auto& f : features) {
    require(f.coeff_count == coeffs, "feature_normalize: inconsistent coefficient counts");
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      const std::size_t c = i % coeffs;
      stats.min[c] = std::min(stats.min[c], f.values[i]);
      stats.max[c] = std::max(stats.max[c], f.values[i]);
    }
  }
  return stats;
}

/// (x - min) / (max - min) per coefficient; coefficients with zero range map to 0.5.
inline double normalize_value(double x, double lo, double hi) {
  return hi > lo ? (x - lo) / (hi - lo) : 0.5;
}

inline FeatureMatrix apply_norm_stats(const FeatureMatrix& f, const NormStats& stats) {
  require(stats.min.size() == f.coeff_count, "apply_norm_stats: coefficient count mismatch");
  FeatureMatrix out = f;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const std::size_t c = i % f.coeff_count;
    out.values[i] = normalize_value(f.values[i], stats.min[c], stats.max[c]);
  }
  return out;
}

struct NormalizedFeatures {
  std::vector<FeatureMatrix> features;
  NormStats stats;
};

inline NormalizedFeatures feature_normalize(std::span<const FeatureMatrix> features) {
  NormalizedFeatures out;
  out.stats = fit_norm_stats(features);
  out.features.reserve(features.size());
  for (const auto& f : features) out.features.push_back(apply_norm_stats(f, out.stats));
  return out;
}

}  // namespace voxcount
