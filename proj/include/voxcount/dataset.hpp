#pragma once

// Labeled mixture datasets: corpus manifests, synthetic pitched voices and
// noise scenes, seeded (n males, m females) mixture generation, splitting
// and windowed MFCC featurization.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "voxcount/common.hpp"
#include "voxcount/mfcc.hpp"
#include "voxcount/signal.hpp"
#include "voxcount/wav.hpp"

namespace voxcount {

enum class Gender { male, female };

NLOHMANN_JSON_SERIALIZE_ENUM(Gender, {{Gender::male, "male"}, {Gender::female, "female"}})

inline const char* to_string(Gender g) { return g == Gender::male ? "male" : "female"; }

// ---------------------------------------------------------------------------
// Manifest and loaded corpus

struct SpeechEntry {
  std::string path;
  Gender gender = Gender::male;
  std::string speaker_id;
};

struct NoiseEntry {
  std::string path;
  std::string scene;
};

/// JSON array of {path, kind: speech|noise, gender?, speaker_id?, scene?}.
/// Relative paths resolve against the manifest's directory.
struct CorpusManifest {
  std::vector<SpeechEntry> speech;
  std::vector<NoiseEntry> noise;

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& s : speech)
      arr.push_back({{"path", s.path}, {"kind", "speech"}, {"gender", s.gender}, {"speaker_id", s.speaker_id}});
    for (const auto& n : noise) arr.push_back({{"path", n.path}, {"kind", "noise"}, {"scene", n.scene}});
    return arr;
  }

  static CorpusManifest from_json(const nlohmann::json& j, const std::string& origin = "manifest") {
    require(j.is_array(), origin + ": manifest must be a JSON array");
    CorpusManifest m;
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& e = j[i];
      const std::string where = origin + " entry " + std::to_string(i);
      require(e.is_object() && e.contains("path") && e.contains("kind"), where + ": needs path and kind");
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "speech") {
        require(e.contains("gender"), where + ": speech entry without gender");
        const auto g = e.at("gender").get<std::string>();
        require(g == "male" || g == "female", where + ": gender must be male or female");
        m.speech.push_back({e.at("path").get<std::string>(), g == "male" ? Gender::male : Gender::female,
                            e.value("speaker_id", e.at("path").get<std::string>())});
      } else if (kind == "noise") {
        m.noise.push_back({e.at("path").get<std::string>(), e.value("scene", std::string("unknown"))});
      } else {
        throw InputError(where + ": unknown kind '" + kind + "'");
      }
    }
    return m;
  }

  static CorpusManifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ": " + e.what());
    }
    return from_json(j, path.string());
  }
};

/// Decoded audio for every manifest entry.
struct Corpus {
  struct Voice {
    AudioClip clip;
    Gender gender = Gender::male;
    std::string speaker_id;
  };
  struct Scene {
    AudioClip clip;
    std::string tag;
  };

  std::vector<Voice> voices;
  std::vector<Scene> scenes;

  std::size_t distinct_speakers(Gender g) const {
    std::vector<std::string> ids;
    for (const auto& v : voices)
      if (v.gender == g) ids.push_back(v.speaker_id);
    std::sort(ids.begin(), ids.end());
    return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
  }

  void validate_for_mixing() const {
    require(distinct_speakers(Gender::male) >= 1 && distinct_speakers(Gender::female) >= 1 && !scenes.empty(),
            "corpus needs at least one male voice, one female voice and one noise scene");
  }

  /// Reads every referenced WAV; fails on the first unreadable file.
  static Corpus load(const CorpusManifest& m, const std::filesystem::path& base_dir = {},
                     int sample_rate = kDefaultSampleRate) {
    const auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    Corpus c;
    for (const auto& s : m.speech) {
      c.voices.push_back({read_wav(resolve(s.path), sample_rate), s.gender, s.speaker_id});
      require(!c.voices.back().clip.empty(), s.path + ": empty audio");
    }
    for (const auto& n : m.noise) {
      c.scenes.push_back({read_wav(resolve(n.path), sample_rate), n.scene});
      require(!c.scenes.back().clip.empty(), n.path + ": empty audio");
    }
    c.validate_for_mixing();
    return c;
  }

  static Corpus load(const std::filesystem::path& manifest_path) {
    return load(CorpusManifest::load(manifest_path), manifest_path.parent_path());
  }
};

// ---------------------------------------------------------------------------
// Synthetic corpus

struct PitchRange {
  double lo_hz;
  double hi_hz;
};

inline PitchRange pitch_range(Gender g) { return g == Gender::male ? PitchRange{85.0, 155.0} : PitchRange{165.0, 255.0}; }

/// Pseudo-speech: a harmonic stack whose fundamental is drawn from the
/// gender's range and drifts slowly by +-3 %, amplitude-modulated at a
/// syllabic rate of 2-8 Hz, chopped into talk spurts separated by pauses.
/// Peak amplitude is 0.9.
inline AudioClip synth_voice(Gender gender, double duration_s, std::uint64_t seed,
                             int sample_rate = kDefaultSampleRate) {
  require(duration_s > 0.0, "synth_voice: duration must be positive");
  constexpr double kTwoPi = 6.283185307179586476925;
  constexpr double kDrift = 0.03;
  Rng rng(seed);
  const PitchRange range = pitch_range(gender);
  const double f0 = rng.uniform(range.lo_hz * (1.0 + kDrift), range.hi_hz * (1.0 - kDrift));
  const double drift_rate = rng.uniform(0.3, 1.0);
  const double drift_phase = rng.uniform(0.0, kTwoPi);
  const double syllable_rate = rng.uniform(2.0, 8.0);
  const double fs = sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));

  const std::size_t harmonics = std::max<std::size_t>(1, static_cast<std::size_t>(3800.0 / (f0 * (1.0 + kDrift))));
  std::vector<std::complex<double>> weights(harmonics);
  for (std::size_t k = 0; k < harmonics; ++k)
    weights[k] = std::polar(1.0 / static_cast<double>(k + 1), rng.uniform(0.0, kTwoPi));

  // Talk spurt / pause timeline, in samples.
  std::vector<std::pair<std::size_t, std::size_t>> spurts;
  std::size_t t = static_cast<std::size_t>(rng.uniform(0.0, 0.15) * fs);
  while (t < n) {
    const auto len = static_cast<std::size_t>(rng.uniform(0.6, 1.8) * fs);
    spurts.emplace_back(t, std::min(n, t + len));
    t += len + static_cast<std::size_t>(rng.uniform(0.1, 0.35) * fs);
  }

  std::vector<double> out(n, 0.0);
  const auto ramp = static_cast<std::size_t>(0.01 * fs);
  double phase = 0.0;
  std::size_t spurt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double time = static_cast<double>(i) / fs;
    phase += kTwoPi * f0 * (1.0 + kDrift * std::sin(kTwoPi * drift_rate * time + drift_phase)) / fs;
    if (phase > kTwoPi) phase -= kTwoPi;
    while (spurt < spurts.size() && i >= spurts[spurt].second) ++spurt;
    if (spurt == spurts.size() || i < spurts[spurt].first) continue;
    const auto [begin, end] = spurts[spurt];
    const double local = static_cast<double>(i - begin) / fs;
    double env = 0.25 + 0.75 * (0.5 - 0.5 * std::cos(kTwoPi * syllable_rate * local));
    if (i - begin < ramp) env *= static_cast<double>(i - begin) / ramp;
    if (end - i < ramp) env *= static_cast<double>(end - i) / ramp;

    const std::complex<double> z = std::polar(1.0, phase);
    std::complex<double> zk = z;
    double s = 0.0;
    for (std::size_t k = 0; k < harmonics; ++k) {
      s += (weights[k] * zk).imag();
      zk *= z;
    }
    out[i] = env * s;
  }

  const double peak = peak_amplitude(out);
  if (peak > 0.0)
    for (double& v : out) v *= 0.9 / peak;
  return {std::move(out), sample_rate};
}

/// Environmental stand-in: white noise through a one-pole low-pass whose
/// coefficient sets a scene-specific spectral tilt, plus a slow level swell.
inline AudioClip synth_noise(std::size_t scene, std::size_t scene_count, double duration_s, std::uint64_t seed,
                             int sample_rate = kDefaultSampleRate) {
  require(duration_s > 0.0 && scene < scene_count, "synth_noise: bad scene or duration");
  constexpr double kTwoPi = 6.283185307179586476925;
  Rng rng(seed);
  const double pole = scene_count > 1 ? 0.1 + 0.85 * static_cast<double>(scene) / static_cast<double>(scene_count - 1) : 0.5;
  const double white_mix = 0.05 + 0.3 * rng.uniform();
  const double swell_rate = rng.uniform(0.2, 1.0);
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  std::vector<double> out(n);
  double lp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.normal();
    lp = pole * lp + (1.0 - pole) * w;
    const double swell = 0.75 + 0.25 * std::sin(kTwoPi * swell_rate * static_cast<double>(i) / sample_rate);
    out[i] = swell * (lp + white_mix * w);
  }
  const double peak = peak_amplitude(out);
  for (double& v : out) v *= 0.9 / peak;
  return {std::move(out), sample_rate};
}

struct SynthCorpusSpec {
  std::size_t voices_per_gender = 200;
  std::size_t scenes = 10;
  double voice_duration_s = 6.0;
  double noise_duration_s = 4.0;
};

inline Corpus synth_corpus(const SynthCorpusSpec& spec, std::uint64_t seed) {
  require(spec.voices_per_gender >= 1 && spec.scenes >= 1, "synth_corpus: need at least one voice and one scene");
  Corpus c;
  for (Gender g : {Gender::male, Gender::female})
    for (std::size_t i = 0; i < spec.voices_per_gender; ++i) {
      const std::string id = std::string(to_string(g)) + "_" + std::to_string(i);
      c.voices.push_back({synth_voice(g, spec.voice_duration_s, derive_seed(seed, "voice/" + std::string(to_string(g)), i)),
                          g, id});
    }
  for (std::size_t s = 0; s < spec.scenes; ++s)
    c.scenes.push_back({synth_noise(s, spec.scenes, spec.noise_duration_s, derive_seed(seed, "scene", s)),
                        "scene_" + std::to_string(s)});
  return c;
}

/// Writes one WAV per entry under `dir` plus `dir/manifest.json`.
inline CorpusManifest write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  CorpusManifest m;
  for (std::size_t i = 0; i < c.voices.size(); ++i) {
    const std::string name = c.voices[i].speaker_id + ".wav";
    write_wav(dir / name, c.voices[i].clip);
    m.speech.push_back({name, c.voices[i].gender, c.voices[i].speaker_id});
  }
  for (const auto& s : c.scenes) {
    const std::string name = s.tag + ".wav";
    write_wav(dir / name, s.clip);
    m.noise.push_back({name, s.tag});
  }
  std::ofstream(dir / "manifest.json") << m.to_json().dump(2) << '\n';
  return m;
}

// ---------------------------------------------------------------------------
// Mixtures

inline constexpr int kDefaultMaxSpeakers = 10;
inline constexpr std::size_t kClipSamples = 80000;  // 5 s at 16 kHz
/// snr_db value that disables noise injection.
inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

struct MixtureLabel {
  int n_males = 0;
  int n_females = 0;
  int n_max = kDefaultMaxSpeakers;

  void validate() const {
    require(n_males >= 0 && n_females >= 0 && n_males + n_females >= 1 && n_males + n_females <= n_max,
            "MixtureLabel: need 1 <= n + m <= n_max (got n=" + std::to_string(n_males) +
                ", m=" + std::to_string(n_females) + ", n_max=" + std::to_string(n_max) + ")");
  }

  std::array<double, 2> normalized() const {
    return {static_cast<double>(n_males) / n_max, static_cast<double>(n_females) / n_max};
  }

  friend bool operator==(const MixtureLabel&, const MixtureLabel&) = default;
};

struct MixtureSample {
  AudioClip clip;
  MixtureLabel label;
  std::string noise_tag;
  std::uint64_t seed = 0;
};

struct MixtureOptions {
  int n_max = kDefaultMaxSpeakers;
  std::size_t clip_samples = kClipSamples;
  double trim_threshold = kDefaultSilenceThreshold;
  std::size_t trim_block = kDefaultSilenceBlock;
};

namespace dataset_detail {

/// Voice indices grouped by speaker, in first-appearance order.
inline std::vector<std::vector<std::size_t>> speakers_of(const Corpus& c, Gender g) {
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < c.voices.size(); ++i) {
    if (c.voices[i].gender != g) continue;
    auto [it, inserted] = index.emplace(c.voices[i].speaker_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

inline void pick_voices(const Corpus& c, Gender g, int count, Rng& rng, std::vector<std::size_t>& out) {
  auto groups = speakers_of(c, g);
  require(static_cast<int>(groups.size()) >= count,
          "corpus has " + std::to_string(groups.size()) + " distinct " + to_string(g) + " speakers, mixture needs " +
              std::to_string(count));
  for (int k = 0; k < count; ++k) {
    const auto j = static_cast<std::size_t>(k) + rng.below(groups.size() - static_cast<std::size_t>(k));
    std::swap(groups[static_cast<std::size_t>(k)], groups[j]);
    const auto& chosen = groups[static_cast<std::size_t>(k)];
    out.push_back(chosen[rng.below(chosen.size())]);
  }
}

}  // namespace dataset_detail

/// Selects n male and m female clips from distinct speakers, trims their
/// edge silence, mixes them, injects one noise scene at snr_db (skipped for
/// kNoiseless), peak-normalizes and fits the result to clip_samples.
inline MixtureSample generate_mixture(const Corpus& corpus, int n, int m, double snr_db, std::uint64_t seed,
                                      const MixtureOptions& opt = {}) {
  MixtureLabel label{n, m, opt.n_max};
  label.validate();
  require(!corpus.scenes.empty() || snr_db == kNoiseless, "generate_mixture: corpus has no noise scenes");
  Rng rng(seed);
  std::vector<std::size_t> picks;
  dataset_detail::pick_voices(corpus, Gender::male, n, rng, picks);
  dataset_detail::pick_voices(corpus, Gender::female, m, rng, picks);

  std::vector<AudioClip> sources;
  sources.reserve(picks.size());
  for (auto i : picks) sources.push_back(trim_silence(corpus.voices[i].clip, opt.trim_threshold, opt.trim_block));
  AudioClip mixed = mix(sources);

  MixtureSample out;
  out.label = label;
  out.seed = seed;
  if (!corpus.scenes.empty()) {
    const auto& scene = corpus.scenes[rng.below(corpus.scenes.size())];
    if (snr_db != kNoiseless) {
      mixed = add_noise_at_snr(mixed, scene.clip, snr_db).mixture;
      out.noise_tag = scene.tag;
    }
  }
  out.clip = fit_length(peak_normalize(mixed), opt.clip_samples);
  return out;
}

/// Label and seed of one dataset item, before any audio is produced.
struct MixtureRecipe {
  int n_males = 0;
  int n_females = 0;
  std::uint64_t seed = 0;
  friend bool operator==(const MixtureRecipe&, const MixtureRecipe&) = default;
};

/// All (n, m) with 1 <= n + m <= n_max, ordered by total then n.
inline std::vector<std::pair<int, int>> admissible_pairs(int n_max) {
  std::vector<std::pair<int, int>> pairs;
  for (int total = 1; total <= n_max; ++total)
    for (int n = 0; n <= total; ++n) pairs.emplace_back(n, total - n);
  return pairs;
}

/// (n, m) uniform over admissible pairs; item seeds derived from the master seed.
inline std::vector<MixtureRecipe> plan_dataset(std::size_t count, std::uint64_t seed, int n_max = kDefaultMaxSpeakers) {
  require(count >= 1, "generate_dataset: count must be >= 1");
  require(n_max >= 1, "generate_dataset: n_max must be >= 1");
  const auto pairs = admissible_pairs(n_max);
  Rng rng(derive_seed(seed, "labels"));
  std::vector<MixtureRecipe> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& [n, m] = pairs[rng.below(pairs.size())];
    out[i] = {n, m, derive_seed(seed, "mixture", i)};
  }
  return out;
}

inline std::vector<MixtureSample> generate_dataset(const Corpus& corpus, std::size_t count, double snr_db,
                                                   std::uint64_t seed, const MixtureOptions& opt = {}) {
  std::vector<MixtureSample> out;
  for (const auto& r : plan_dataset(count, seed, opt.n_max))
    out.push_back(generate_mixture(corpus, r.n_males, r.n_females, snr_db, r.seed, opt));
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_frac = 0.7;
  double test_frac = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    require(train_frac > 0.0 && train_frac < 1.0 && test_frac > 0.0 && test_frac < 1.0 &&
                std::abs(train_frac + test_frac - 1.0) <= 1e-9,
            "SplitSpec: fractions must lie in (0,1) and sum to 1");
  }
};

/// Index partition. The held-out share is halved into validation and test,
/// validation taking the extra item when the hold-out is odd.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;

  std::size_t held_out() const { return validation.size() + test.size(); }
};

inline SplitIndices split_indices(std::size_t count, const SplitSpec& spec) {
  spec.validate();
  require(count > 0, "split: empty sample list");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(derive_seed(spec.seed, "split"));
  rng.shuffle(order.begin(), order.end());
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_frac * static_cast<double>(count)));
  const std::size_t held = count - std::min(n_train, count);
  const std::size_t n_val = (held + 1) / 2;
  require(n_train > 0 && held > 0 && n_val > 0 && held - n_val > 0,
          "split: " + std::to_string(count) + " samples leave an empty partition");
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

template <class Item>
struct SplitSets {
  std::vector<Item> train;
  std::vector<Item> validation;
  std::vector<Item> test;
};

template <class Item>
SplitSets<Item> split(const std::vector<Item>& items, const SplitSpec& spec) {
  const auto idx = split_indices(items.size(), spec);
  SplitSets<Item> out;
  for (auto i : idx.train) out.train.push_back(items[i]);
  for (auto i : idx.validation) out.validation.push_back(items[i]);
  for (auto i : idx.test) out.test.push_back(items[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Featurization

struct LabeledFeatures {
  FeatureMatrix features;
  MixtureLabel label;
  std::uint32_t clip_index = 0;
};

/// One FeatureMatrix per analysis window of the clip.
inline std::vector<FeatureMatrix> featurize_clip(const AudioClip& clip, const WindowPlan& plan,
                                                 const MfccExtractor& extractor) {
  std::vector<FeatureMatrix> out;
  for (const auto& w : window(clip, plan)) out.push_back(extractor.extract(w));
  return out;
}

inline std::vector<LabeledFeatures> featurize_dataset(const std::vector<MixtureSample>& samples,
                                                      const WindowPlan& plan, const MfccConfig& config) {
  const MfccExtractor extractor(config);
  std::vector<LabeledFeatures> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (auto& f : featurize_clip(samples[i].clip, plan, extractor))
      out.push_back({std::move(f), samples[i].label, static_cast<std::uint32_t>(i)});
  return out;
}

}  // namespace voxcount
