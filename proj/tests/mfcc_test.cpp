#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "voxcount/fft.hpp"
#include "voxcount/mfcc.hpp"

using namespace voxcount;

TEST(PowerSpectrum, MatchesNaiveDft) {
  Rng rng(11);
  const std::size_t lengths[] = {32, 64, 257, 400};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = lengths[trial % 4];
    std::size_t n = 1;
    while (n < len) n <<= 1;
    const Taper taper = trial % 2 ? Taper::hann : Taper::rectangular;
    const auto frame = vtest::random_vector(rng, len);
    const auto fast = power_spectrum(frame, n, taper);
    const auto slow = vtest::naive_power_spectrum(frame, make_taper(taper, len), n);
    ASSERT_EQ(fast.size(), n / 2 + 1);
    EXPECT_LE(vtest::relative_error(fast, slow), 1e-9) << "len " << len;
  }
}

TEST(PowerSpectrum, Parseval) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = std::size_t{1} << (3 + rng.below(8));
    const auto frame = vtest::random_vector(rng, n);
    const auto p = power_spectrum(frame, n, Taper::rectangular);
    // Full-spectrum energy from the one-sided bins.
    double spectral = p[0] + p[n / 2];
    for (std::size_t k = 1; k < n / 2; ++k) spectral += 2 * p[k];
    double temporal = 0;
    for (double x : frame) temporal += x * x;
    EXPECT_NEAR(spectral, temporal, 1e-9 * temporal);
  }
}

TEST(PowerSpectrum, ImpulseIsFlat) {
  std::vector<double> impulse(8, 0.0);
  impulse[0] = 1.0;
  for (double v : power_spectrum(impulse, 8, Taper::rectangular)) EXPECT_NEAR(v, 1.0 / 8.0, 1e-15);
}

TEST(PowerSpectrum, SinePeaksAtItsBin) {
  const auto s = vtest::sine(1000.0, 512);
  const auto p = power_spectrum(s.samples, 512, Taper::hann);
  EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), 32);  // 1000 Hz / (16000 / 512)
}

TEST(Fft, RejectsNonPowerOfTwo) {
  EXPECT_THROW(FftPlan(100), InputError);
  EXPECT_THROW(power_spectrum(std::vector<double>(600, 0.0), 512), InputError);
}

TEST(Mel, ScaleValues) {
  EXPECT_EQ(hz_to_mel(0.0), 0.0);
  EXPECT_NEAR(hz_to_mel(700.0), 781.1728387480312, 1e-9);
  EXPECT_NEAR(hz_to_mel(1000.0), 999.9855371396244, 1e-9);
  EXPECT_THROW(hz_to_mel(-1.0), InputError);
  for (double f = 0; f < 8000; f += 37.5) {
    EXPECT_LT(hz_to_mel(f), hz_to_mel(f + 1.0));
    EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
  }
}

TEST(Mel, FilterbankCentersAndOverlap) {
  MfccConfig c;
  c.n_mel_filters = 2;
  c.n_coeffs = 2;
  auto fb = mel_filterbank(c);
  EXPECT_NEAR(fb.centers_hz[0], 921.4557863447225, 1e-6);
  EXPECT_NEAR(fb.centers_hz[1], 3055.8840958154033, 1e-6);

  c.n_mel_filters = 4;
  c.fmin_hz = 300;
  c.fmax_hz = 4000;
  fb = mel_filterbank(c);
  const double expected[] = {662.7606087515321, 1157.116476764846, 1830.805180398562, 2748.881608271476};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(fb.centers_hz[i], expected[i], 1e-6);

  for (auto filters : {13, 26, 40}) {
    MfccConfig d;
    d.n_mel_filters = filters;
    const auto bank = mel_filterbank(d);
    for (std::size_t k = 0; k < bank.bins; ++k) {
      int nonzero = 0;
      for (std::size_t m = 0; m < bank.filters; ++m) {
        const double w = bank.at(m, k);
        EXPECT_GE(w, 0.0);
        EXPECT_LE(w, 1.0);
        nonzero += w > 0.0;
      }
      EXPECT_LE(nonzero, 2) << "bin " << k;
    }
  }
}

TEST(Mel, TooManyFiltersForFftIsRejected) {
  MfccConfig c;
  c.fft_size = 64;
  c.frame_len = 64;
  c.n_mel_filters = 128;
  EXPECT_THROW(mel_filterbank(c), InputError);
}

TEST(MfccConfig, Validation) {
  MfccConfig c;
  EXPECT_NO_THROW(c.validate());
  c.fft_size = 500;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.n_coeffs = 30;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.fmax_hz = 9000;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.frame_len = 600;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Mfcc, ShapeForOneSecondWindow) {
  const auto f = extract_mfcc(AudioClip(std::vector<double>(16000, 0.1)));
  EXPECT_EQ(f.frame_count, 98u);
  EXPECT_EQ(f.coeff_count, 13u);
  EXPECT_THROW(extract_mfcc(AudioClip(std::vector<double>(399, 0.1))), InputError);
}

TEST(Mfcc, SilenceGivesDctOfConstant) {
  const MfccConfig c;
  const auto f = extract_mfcc(AudioClip(std::vector<double>(1000, 0.0)), c);
  for (std::size_t t = 0; t < f.frame_count; ++t) {
    EXPECT_NEAR(f.at(t, 0), std::sqrt(26.0) * std::log(1e-10), 1e-9);
    for (std::size_t k = 1; k < f.coeff_count; ++k) EXPECT_NEAR(f.at(t, k), 0.0, 1e-9);
  }
}

TEST(Mfcc, DoublingAmplitudeShiftsOnlyC0) {
  Rng rng(13);
  const auto a = vtest::random_clip(rng, 4000, 0.4);
  AudioClip b = a;
  for (double& v : b.samples) v *= 2;
  const auto fa = extract_mfcc(a), fb = extract_mfcc(b);
  for (std::size_t t = 0; t < fa.frame_count; ++t) {
    EXPECT_NEAR(fb.at(t, 0) - fa.at(t, 0), std::sqrt(26.0) * std::log(4.0), 1e-6);
    for (std::size_t k = 1; k < fa.coeff_count; ++k) EXPECT_NEAR(fb.at(t, k), fa.at(t, k), 1e-6);
  }
}

TEST(Mfcc, ShiftByOneHopShiftsRows) {
  Rng rng(14);
  const auto base = vtest::random_clip(rng, 5000);
  AudioClip shifted;
  shifted.samples.assign(base.samples.begin() + 160, base.samples.end());
  const auto fa = extract_mfcc(base), fb = extract_mfcc(shifted);
  ASSERT_EQ(fb.frame_count + 1, fa.frame_count);
  for (std::size_t t = 0; t < fb.frame_count; ++t)
    for (std::size_t k = 0; k < fa.coeff_count; ++k) EXPECT_EQ(fb.at(t, k), fa.at(t + 1, k));
}

// Straight-line reference: naive DFT, triangles written from the definition,
// natural log, DCT-II with explicit orthonormal scaling.
TEST(Mfcc, MatchesStraightLineReference) {
  Rng rng(15);
  AudioClip clip = vtest::sine(440.0, 32000, 0.5);
  for (double& v : clip.samples) v += rng.normal() * 0.05;

  const MfccConfig c;
  const auto fast = extract_mfcc(clip, c);

  const auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  const auto imel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> edges(c.n_mel_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = imel(mel(8000.0) * i / (c.n_mel_filters + 1.0));
  std::vector<double> hann(c.frame_len);
  for (std::size_t n = 0; n < c.frame_len; ++n) hann[n] = 0.5 * (1 - std::cos(2 * M_PI * n / c.frame_len));

  ASSERT_EQ(fast.frame_count, (32000u - 400u) / 160u + 1u);
  double worst = 0;
  for (std::size_t t = 0; t < fast.frame_count; ++t) {
    const std::vector<double> frame(clip.samples.begin() + t * 160, clip.samples.begin() + t * 160 + 400);
    const auto p = vtest::naive_power_spectrum(frame, hann, 512);
    std::vector<double> logmel(c.n_mel_filters);
    for (std::size_t m = 0; m < c.n_mel_filters; ++m) {
      double e = 0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double f = k * 16000.0 / 512.0;
        if (f > edges[m] && f <= edges[m + 1]) e += p[k] * (f - edges[m]) / (edges[m + 1] - edges[m]);
        if (f > edges[m + 1] && f < edges[m + 2]) e += p[k] * (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      }
      logmel[m] = std::log(e + 1e-10);
    }
    for (std::size_t k = 0; k < c.n_coeffs; ++k) {
      double s = 0;
      for (std::size_t m = 0; m < c.n_mel_filters; ++m)
        s += logmel[m] * std::cos(M_PI * k * (m + 0.5) / c.n_mel_filters);
      s *= k == 0 ? std::sqrt(1.0 / c.n_mel_filters) : std::sqrt(2.0 / c.n_mel_filters);
      worst = std::max(worst, std::abs(s - fast.at(t, k)));
    }
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(FeatureNormalize, MapsToUnitRange) {
  FeatureMatrix a{2, 2, {1.0, 5.0, 3.0, 5.0}};
  FeatureMatrix b{1, 2, {2.0, 5.0}};
  const std::vector<FeatureMatrix> all{a, b};
  const auto n = feature_normalize(all);
  EXPECT_EQ(n.stats.min, (std::vector<double>{1.0, 5.0}));
  EXPECT_EQ(n.stats.max, (std::vector<double>{3.0, 5.0}));
  EXPECT_EQ(n.features[0].values, (std::vector<double>{0.0, 0.5, 1.0, 0.5}));
  EXPECT_EQ(n.features[1].values, (std::vector<double>{0.5, 0.5}));
}

TEST(FeatureNormalize, StatsReplayOnUnseenData) {
  Rng rng(16);
  std::vector<FeatureMatrix> train;
  for (int i = 0; i < 5; ++i) train.push_back({3, 4, vtest::random_vector(rng, 12)});
  const auto n = feature_normalize(train);
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(apply_norm_stats(train[i], n.stats), n.features[i]);
  for (const auto& f : n.features)
    for (double v : f.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  const FeatureMatrix wide{1, 4, {10, -10, 10, -10}};
  const auto out = apply_norm_stats(wide, n.stats);
  EXPECT_GT(out.values[0], 1.0);
  EXPECT_LT(out.values[1], 0.0);
}
