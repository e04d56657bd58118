#pragma once

// Shared oracles and random generators for the test suite.

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "voxcount/common.hpp"
#include "voxcount/signal.hpp"

namespace vtest {

using voxcount::AudioClip;
using voxcount::Rng;

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline AudioClip random_clip(Rng& rng, std::size_t n, double amp = 1.0) {
  return AudioClip(random_vector(rng, n, -amp, amp));
}

inline AudioClip sine(double freq_hz, std::size_t n, double amp = 1.0, int rate = 16000, double phase = 0.0) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i)
    s[i] = amp * std::sin(2.0 * M_PI * freq_hz * static_cast<double>(i) / rate + phase);
  return AudioClip(std::move(s), rate);
}

/// O(N^2) DFT of the tapered, zero-padded frame, |X_k|^2 / N for k = 0..N/2.
inline std::vector<double> naive_power_spectrum(const std::vector<double>& frame, const std::vector<double>& taper,
                                                std::size_t n) {
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    long double re = 0, im = 0;
    for (std::size_t t = 0; t < frame.size(); ++t) {
      const long double ang = -2.0L * 3.14159265358979323846264338327950288L * static_cast<long double>(k * t % n) / n;
      re += frame[t] * taper[t] * std::cos(ang);
      im += frame[t] * taper[t] * std::sin(ang);
    }
    out[k] = static_cast<double>((re * re + im * im) / n);
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// max |a - b| / max(|b|_inf, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-300) {
  double scale = floor;
  for (double v : b) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / scale;
}

/// Normalized autocorrelation pitch estimate over [fmin, fmax], restricted to
/// voiced (loud) stretches of the clip.
inline double autocorrelation_pitch(const AudioClip& clip, double fmin, double fmax) {
  const auto& x = clip.samples;
  const int rate = clip.sample_rate;
  const auto lag_lo = static_cast<std::size_t>(rate / fmax);
  const auto lag_hi = static_cast<std::size_t>(rate / fmin) + 1;
  const std::size_t frame = 1024;
  std::vector<double> score(lag_hi + 1, 0.0);
  for (std::size_t start = 0; start + frame + lag_hi < x.size(); start += frame) {
    double energy = 0;
    for (std::size_t i = 0; i < frame; ++i) energy += x[start + i] * x[start + i];
    if (energy / frame < 1e-3) continue;
    for (std::size_t lag = lag_lo; lag <= lag_hi; ++lag) {
      double num = 0, e1 = 0, e2 = 0;
      for (std::size_t i = 0; i < frame; ++i) {
        num += x[start + i] * x[start + i + lag];
        e1 += x[start + i] * x[start + i];
        e2 += x[start + i + lag] * x[start + i + lag];
      }
      score[lag] += num / std::sqrt(e1 * e2 + 1e-300);
    }
  }
  std::size_t best = lag_lo;
  for (std::size_t lag = lag_lo; lag <= lag_hi; ++lag)
    if (score[lag] > score[best]) best = lag;
  return static_cast<double>(rate) / static_cast<double>(best);
}

}  // namespace vtest
