#pragma once

// Training, evaluation and the comparison grids: architecture, kernel size,
// conv block count, filter count, window length and split robustness.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxcount/common.hpp"
#include "voxcount/dataset.hpp"
#include "voxcount/mfcc.hpp"
#include "voxcount/model_zoo.hpp"
#include "voxcount/nn/checkpoint.hpp"
#include "voxcount/nn/network.hpp"
#include "voxcount/parallel.hpp"
#include "voxcount/shards.hpp"

namespace voxcount {

// ---------------------------------------------------------------------------
// Specs

struct DatasetSpec {
  std::size_t count = 2000;
  int n_max = 4;
  double snr_db = 10.0;
  SynthCorpusSpec corpus;

  friend bool operator==(const DatasetSpec& a, const DatasetSpec& b) {
    return a.count == b.count && a.n_max == b.n_max && a.snr_db == b.snr_db &&
           a.corpus.voices_per_gender == b.corpus.voices_per_gender && a.corpus.scenes == b.corpus.scenes &&
           a.corpus.voice_duration_s == b.corpus.voice_duration_s &&
           a.corpus.noise_duration_s == b.corpus.noise_duration_s;
  }
};

struct ExperimentSpec {
  std::string name = "experiment";
  Architecture architecture = Architecture::cnn_lstm_fc;
  ArchitectureParams params = ArchitectureParams::desk();
  WindowPlan plan{16000, 8000};
  MfccConfig mfcc;
  DatasetSpec dataset;
  double train_frac = 0.7;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  /// Split seed; derived from `seed` when unset.
  std::optional<std::uint64_t> split_seed;
  /// Off by default: the metrics `seconds` column is then 0 and repeated
  /// runs produce byte-identical files.
  bool record_wall_clock = false;

  /// Desk-scale defaults: synthetic corpus, N_max = 4, reduced network.
  static ExperimentSpec desk() { return {}; }

  /// Full-size network (q = 32000, shift = q/2, N_max = 10). Seven pooling
  /// stages need >= 128 coefficients, so the MFCC front end is widened to
  /// 128 mel filters and coefficients over a 1024-point FFT.
  static ExperimentSpec paper() {
    ExperimentSpec s;
    s.params = ArchitectureParams::paper();
    s.plan = WindowPlan::half_overlap(32000);
    s.mfcc.fft_size = 1024;
    s.mfcc.n_mel_filters = 128;
    s.mfcc.n_coeffs = 128;
    s.dataset.n_max = kDefaultMaxSpeakers;
    s.dataset.count = 19000;
    return s;
  }

  SplitSpec split() const {
    return {train_frac, 1.0 - train_frac, split_seed.value_or(derive_seed(seed, "split"))};
  }
  std::uint64_t corpus_seed() const { return derive_seed(seed, "corpus"); }
  std::uint64_t dataset_seed() const { return derive_seed(seed, "dataset"); }
  std::uint64_t model_seed() const { return derive_seed(seed, "model"); }

  InputGeometry geometry() const { return {mfcc.frame_count(plan.window_len), mfcc.n_coeffs}; }
  ModelConfig model() const { return build_model(architecture, geometry(), params); }

  /// Checks every config before any work starts.
  void validate() const {
    plan.validate();
    mfcc.validate();
    split().validate();
    require(plan.window_len <= kClipSamples, "window length exceeds the 5 s clip");
    require(plan.window_len >= mfcc.frame_len, "window shorter than one MFCC frame");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(learning_rate > 0.0, "learning_rate must be positive");
    require(dataset.count >= 1 && dataset.n_max >= 1, "dataset count and n_max must be >= 1");
    model();
  }
};

inline void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  j = {{"name", s.name},
       {"architecture", s.architecture},
       {"params", s.params},
       {"window", s.plan},
       {"mfcc", s.mfcc},
       {"dataset",
        {{"count", s.dataset.count},
         {"n_max", s.dataset.n_max},
         {"snr_db", s.dataset.snr_db},
         {"voices_per_gender", s.dataset.corpus.voices_per_gender},
         {"scenes", s.dataset.corpus.scenes},
         {"voice_duration_s", s.dataset.corpus.voice_duration_s},
         {"noise_duration_s", s.dataset.corpus.noise_duration_s}}},
       {"train_frac", s.train_frac},
       {"epochs", s.epochs},
       {"batch_size", s.batch_size},
       {"learning_rate", s.learning_rate},
       {"patience", s.patience},
       {"seed", s.seed},
       {"record_wall_clock", s.record_wall_clock}};
  if (s.split_seed) j["split_seed"] = *s.split_seed;
}

/// Missing keys keep the values already in `s` (overrides on a preset).
inline void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  s.name = j.value("name", s.name);
  s.architecture = j.value("architecture", s.architecture);
  if (j.contains("params")) from_json(j.at("params"), s.params);
  if (j.contains("window")) from_json(j.at("window"), s.plan);
  if (j.contains("mfcc")) from_json(j.at("mfcc"), s.mfcc);
  if (auto it = j.find("dataset"); it != j.end()) {
    s.dataset.count = it->value("count", s.dataset.count);
    s.dataset.n_max = it->value("n_max", s.dataset.n_max);
    s.dataset.snr_db = it->value("snr_db", s.dataset.snr_db);
    s.dataset.corpus.voices_per_gender = it->value("voices_per_gender", s.dataset.corpus.voices_per_gender);
    s.dataset.corpus.scenes = it->value("scenes", s.dataset.corpus.scenes);
    s.dataset.corpus.voice_duration_s = it->value("voice_duration_s", s.dataset.corpus.voice_duration_s);
    s.dataset.corpus.noise_duration_s = it->value("noise_duration_s", s.dataset.corpus.noise_duration_s);
  }
  s.train_frac = j.value("train_frac", s.train_frac);
  s.epochs = j.value("epochs", s.epochs);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.patience = j.value("patience", s.patience);
  s.seed = j.value("seed", s.seed);
  s.record_wall_clock = j.value("record_wall_clock", s.record_wall_clock);
  if (j.contains("split_seed")) s.split_seed = j.at("split_seed").get<std::uint64_t>();
}

// ---------------------------------------------------------------------------
// Data

/// Every window of every clip, unnormalized, in clip order.
inline FeatureShard forge_features(const Corpus& corpus, const DatasetSpec& ds, std::uint64_t dataset_seed,
                                   const WindowPlan& plan, const MfccConfig& mfcc, std::size_t jobs = 1) {
  corpus.validate_for_mixing();
  const auto recipes = plan_dataset(ds.count, dataset_seed, ds.n_max);
  const MfccExtractor extractor(mfcc);
  MixtureOptions opt;
  opt.n_max = ds.n_max;
  std::vector<std::vector<FeatureMatrix>> per_clip(recipes.size());
  parallel_for(recipes.size(), jobs, [&](std::size_t i) {
    const auto& r = recipes[i];
    const auto sample = generate_mixture(corpus, r.n_males, r.n_females, ds.snr_db, r.seed, opt);
    per_clip[i] = featurize_clip(sample.clip, plan, extractor);
  });
  FeatureShard shard;
  shard.frame_count = mfcc.frame_count(plan.window_len);
  shard.coeff_count = mfcc.n_coeffs;
  for (std::size_t i = 0; i < recipes.size(); ++i)
    for (const auto& f : per_clip[i])
      shard.records.push_back({static_cast<std::uint32_t>(recipes[i].n_males),
                               static_cast<std::uint32_t>(recipes[i].n_females), static_cast<std::uint32_t>(i),
                               std::vector<float>(f.values.begin(), f.values.end())});
  return shard;
}

/// Partitions records by parent clip so no clip straddles two splits.
inline SplitSets<FeatureShard::Record> split_by_clip(const FeatureShard& all, std::size_t clip_count,
                                                     const SplitSpec& spec) {
  const auto idx = split_indices(clip_count, spec);
  std::vector<std::vector<const FeatureShard::Record*>> by_clip(clip_count);
  for (const auto& r : all.records) {
    require(r.clip_index < clip_count, "split_by_clip: clip index out of range");
    by_clip[r.clip_index].push_back(&r);
  }
  SplitSets<FeatureShard::Record> out;
  const auto take = [&](const std::vector<std::size_t>& clips, std::vector<FeatureShard::Record>& dst) {
    for (auto c : clips)
      for (const auto* r : by_clip[c]) dst.push_back(*r);
  };
  take(idx.train, out.train);
  take(idx.validation, out.validation);
  take(idx.test, out.test);
  return out;
}

inline NormStats fit_norm_stats(const FeatureShard& shard) {
  require(!shard.records.empty(), "fit_norm_stats: empty shard");
  const std::size_t c = shard.coeff_count;
  NormStats s{std::vector<double>(c, std::numeric_limits<double>::infinity()),
              std::vector<double>(c, -std::numeric_limits<double>::infinity())};
  for (const auto& r : shard.records)
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      const double v = r.values[i];
      s.min[i % c] = std::min(s.min[i % c], v);
      s.max[i % c] = std::max(s.max[i % c], v);
    }
  return s;
}

/// Normalized features and targets in the layout the network consumes.
struct WindowSet {
  std::size_t frames = 0;
  std::size_t coeffs = 0;
  int n_max = kDefaultMaxSpeakers;
  std::vector<float> features;  // size() * frames * coeffs
  std::vector<float> targets;   // size() * 2, each count / n_max
  std::vector<std::array<int, 2>> counts;
  std::vector<std::uint32_t> clips;

  std::size_t size() const { return clips.size(); }
  std::size_t window_size() const { return frames * coeffs; }
};

inline WindowSet make_window_set(const FeatureShard& shard, const NormStats& stats, int n_max) {
  require(stats.min.size() == shard.coeff_count, "make_window_set: NormStats do not match the shard");
  WindowSet w;
  w.frames = shard.frame_count;
  w.coeffs = shard.coeff_count;
  w.n_max = n_max;
  w.features.reserve(shard.records.size() * w.window_size());
  for (const auto& r : shard.records) {
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      const std::size_t c = i % w.coeffs;
      w.features.push_back(static_cast<float>(normalize_value(r.values[i], stats.min[c], stats.max[c])));
    }
    w.targets.push_back(static_cast<float>(static_cast<double>(r.n_males) / n_max));
    w.targets.push_back(static_cast<float>(static_cast<double>(r.n_females) / n_max));
    w.counts.push_back({static_cast<int>(r.n_males), static_cast<int>(r.n_females)});
    w.clips.push_back(r.clip_index);
  }
  return w;
}

struct PreparedData {
  WindowSet train;
  WindowSet validation;
  WindowSet test;
  NormStats stats;
  std::uint64_t feature_hash = 0;
};

inline PreparedData prepare_from_shards(const FeatureShard& train, const FeatureShard& validation,
                                        const FeatureShard& test, int n_max, std::uint64_t feature_hash) {
  PreparedData d;
  d.stats = fit_norm_stats(train);
  d.train = make_window_set(train, d.stats, n_max);
  d.validation = make_window_set(validation, d.stats, n_max);
  d.test = make_window_set(test, d.stats, n_max);
  d.feature_hash = feature_hash;
  return d;
}

/// Everything downstream of the corpus for one spec: mixtures, windowing,
/// MFCCs, split by clip, NormStats fitted on the training split only.
struct SplitShards {
  FeatureShard train, validation, test;
};

inline SplitShards make_split_shards(const FeatureShard& all, std::size_t clips, const SplitSpec& split) {
  auto parts = split_by_clip(all, clips, split);
  SplitShards s;
  for (auto* p : {&s.train, &s.validation, &s.test}) {
    p->frame_count = all.frame_count;
    p->coeff_count = all.coeff_count;
  }
  s.train.records = std::move(parts.train);
  s.validation.records = std::move(parts.validation);
  s.test.records = std::move(parts.test);
  return s;
}

/// Caches the synthetic corpus and per-geometry features so grid points and
/// split seeds sharing a data configuration reuse them.
class DataProvider {
 public:
  explicit DataProvider(std::size_t jobs = 1, std::function<void(const std::string&)> log = {})
      : jobs_(jobs), log_(std::move(log)) {}

  /// Uses an externally loaded corpus instead of the synthetic one.
  void set_corpus(Corpus c) {
    std::lock_guard lock(mutex_);
    external_ = std::make_shared<Corpus>(std::move(c));
  }

  std::shared_ptr<const Corpus> corpus(const ExperimentSpec& s) {
    std::lock_guard lock(mutex_);
    if (external_) return external_;
    const std::string key = nlohmann::json{{"seed", s.corpus_seed()},
                                           {"voices", s.dataset.corpus.voices_per_gender},
                                           {"scenes", s.dataset.corpus.scenes},
                                           {"voice_s", s.dataset.corpus.voice_duration_s},
                                           {"noise_s", s.dataset.corpus.noise_duration_s}}
                                .dump();
    auto& slot = corpora_[key];
    if (!slot) {
      say("synthesizing corpus");
      slot = std::make_shared<Corpus>(synth_corpus(s.dataset.corpus, s.corpus_seed()));
    }
    return slot;
  }

  /// All windows for the spec's dataset and feature configuration.
  std::shared_ptr<const FeatureShard> features(const ExperimentSpec& s) {
    const auto c = corpus(s);
    const std::string key = nlohmann::json{{"dataset_seed", s.dataset_seed()},
                                           {"count", s.dataset.count},
                                           {"n_max", s.dataset.n_max},
                                           {"snr", s.dataset.snr_db},
                                           {"features", feature_config_hash(s.mfcc, s.plan)},
                                           {"corpus", reinterpret_cast<std::uintptr_t>(c.get())}}
                                .dump();
    std::shared_ptr<std::once_flag> once;
    {
      std::lock_guard lock(mutex_);
      auto& entry = features_[key];
      if (!entry.once) entry.once = std::make_shared<std::once_flag>();
      once = entry.once;
    }
    std::call_once(*once, [&] {
      say("forging " + std::to_string(s.dataset.count) + " mixtures (q=" + std::to_string(s.plan.window_len) +
          ", shift=" + std::to_string(s.plan.shift) + ")");
      auto shard = std::make_shared<FeatureShard>(forge_features(*c, s.dataset, s.dataset_seed(), s.plan, s.mfcc, jobs_));
      std::lock_guard lock(mutex_);
      features_[key].shard = std::move(shard);
    });
    std::lock_guard lock(mutex_);
    return features_[key].shard;
  }

  PreparedData prepare(const ExperimentSpec& s) {
    const auto all = features(s);
    const auto parts = make_split_shards(*all, s.dataset.count, s.split());
    return prepare_from_shards(parts.train, parts.validation, parts.test, s.dataset.n_max,
                               feature_config_hash(s.mfcc, s.plan));
  }

 private:
  void say(const std::string& msg) {
    if (log_) log_(msg);
  }

  struct FeatureEntry {
    std::shared_ptr<std::once_flag> once;
    std::shared_ptr<const FeatureShard> shard;
  };

  std::size_t jobs_;
  std::function<void(const std::string&)> log_;
  std::mutex mutex_;
  std::shared_ptr<Corpus> external_;
  std::map<std::string, std::shared_ptr<Corpus>> corpora_;
  std::map<std::string, FeatureEntry> features_;
};

// ---------------------------------------------------------------------------
// Baselines

/// MSE of the best constant predictor when (n, m) is uniform over the
/// admissible pairs: the mean of the two normalized target variances.
inline double uniform_label_baseline_mse(int n_max) {
  const auto pairs = admissible_pairs(n_max);
  const double k = static_cast<double>(pairs.size());
  double mean_n = 0, mean_m = 0, sq_n = 0, sq_m = 0;
  for (const auto& [n, m] : pairs) {
    const double a = static_cast<double>(n) / n_max, b = static_cast<double>(m) / n_max;
    mean_n += a / k;
    mean_m += b / k;
    sq_n += a * a / k;
    sq_m += b * b / k;
  }
  return 0.5 * ((sq_n - mean_n * mean_n) + (sq_m - mean_m * mean_m));
}

/// Population variance of the targets, averaged over the two outputs; the
/// MSE of predicting the set's own target mean.
inline double target_variance(const WindowSet& w) {
  require(w.size() > 0, "target_variance: empty set");
  std::array<double, 2> mean{0, 0}, sq{0, 0};
  for (std::size_t i = 0; i < w.size(); ++i)
    for (int o = 0; o < 2; ++o) {
      const double t = w.targets[2 * i + o];
      mean[o] += t;
      sq[o] += t * t;
    }
  const double n = static_cast<double>(w.size());
  double var = 0;
  for (int o = 0; o < 2; ++o) var += sq[o] / n - (mean[o] / n) * (mean[o] / n);
  return var / 2.0;
}

// ---------------------------------------------------------------------------
// Evaluation

inline nn::Tensor<float> gather_batch(const WindowSet& w, std::span<const std::size_t> idx) {
  nn::Tensor<float> x({idx.size(), w.frames, w.coeffs});
  const std::size_t ws = w.window_size();
  for (std::size_t b = 0; b < idx.size(); ++b)
    std::copy_n(w.features.begin() + static_cast<std::ptrdiff_t>(idx[b] * ws), ws, x.data.begin() + static_cast<std::ptrdiff_t>(b * ws));
  return x;
}

inline nn::Tensor<float> gather_targets(const WindowSet& w, std::span<const std::size_t> idx) {
  nn::Tensor<float> y({idx.size(), kOutputUnits});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    y.data[2 * b] = w.targets[2 * idx[b]];
    y.data[2 * b + 1] = w.targets[2 * idx[b] + 1];
  }
  return y;
}

/// Inference-mode predictions for every window, in set order.
inline std::vector<std::array<double, 2>> predict(nn::Network<float>& net, const WindowSet& w,
                                                  std::size_t batch_size = 64) {
  std::vector<std::array<double, 2>> out(w.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < w.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(w.size(), start + batch_size); ++i) idx.push_back(i);
    const auto y = net.forward(gather_batch(w, idx), false);
    for (std::size_t b = 0; b < idx.size(); ++b) out[idx[b]] = {y.data[2 * b], y.data[2 * b + 1]};
  }
  return out;
}

struct EvalResult {
  double mse = 0.0;
  double count_accuracy = 0.0;
  std::size_t windows = 0;
  std::size_t clips = 0;
};

/// Window-level MSE over both outputs plus clip-level exact-count accuracy
/// from the aggregated window predictions.
inline EvalResult score_predictions(const WindowSet& w, const std::vector<std::array<double, 2>>& preds) {
  require(preds.size() == w.size(), "score_predictions: prediction count mismatch");
  require(w.size() > 0, "score_predictions: empty set");
  EvalResult r;
  double acc = 0.0;
  std::map<std::uint32_t, std::vector<std::array<double, 2>>> by_clip;
  std::map<std::uint32_t, std::array<int, 2>> truth;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (int o = 0; o < 2; ++o) {
      const double d = preds[i][o] - static_cast<double>(w.targets[2 * i + o]);
      acc += d * d;
    }
    by_clip[w.clips[i]].push_back(preds[i]);
    truth[w.clips[i]] = w.counts[i];
  }
  r.windows = w.size();
  r.mse = acc / (2.0 * static_cast<double>(w.size()));
  std::size_t correct = 0;
  for (const auto& [clip, p] : by_clip) {
    const auto c = aggregate_clip_prediction(p, w.n_max);
    if (c.males == truth[clip][0] && c.females == truth[clip][1]) ++correct;
  }
  r.clips = by_clip.size();
  r.count_accuracy = static_cast<double>(correct) / static_cast<double>(r.clips);
  return r;
}

inline EvalResult evaluate(nn::Network<float>& net, const WindowSet& w) { return score_predictions(w, predict(net, w)); }

// ---------------------------------------------------------------------------
// Training

struct MetricsRecord {
  std::string experiment;
  std::string point;
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double seconds = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct TrainResult {
  ModelConfig model;
  std::vector<MetricsRecord> history;
  nn::ParameterSnapshot checkpoint;  // best validation epoch (initialization when no epoch ran)
  std::size_t best_epoch = 0;
  double best_train_mse = std::numeric_limits<double>::quiet_NaN();
  double best_val_mse = std::numeric_limits<double>::quiet_NaN();
};

using ProgressFn = std::function<void(const MetricsRecord&)>;

/// Seeded mini-batch Adam training with early stopping on validation MSE.
/// Epoch metrics are inference-mode MSEs over the full training and
/// validation sets after the epoch's updates; the returned checkpoint is the
/// best validation epoch.
inline TrainResult train(const ExperimentSpec& spec, const PreparedData& data, const std::string& point = "",
                         const ProgressFn& progress = {}) {
  spec.validate();
  require(data.feature_hash == feature_config_hash(spec.mfcc, spec.plan),
          "train: feature shards were produced with a different MFCC/window configuration");
  require(data.train.size() > 0 && data.validation.size() > 0, "train: empty training or validation set");
  const InputGeometry geometry{data.train.frames, data.train.coeffs};
  require(geometry == spec.geometry(), "train: shard geometry does not match the experiment");

  TrainResult result;
  result.model = spec.model();
  const std::uint64_t arch_hash = architecture_hash(result.model);
  nn::Network<float> net(result.model.layers, result.model.input_shape(), spec.model_seed());
  nn::Adam<float> adam({spec.learning_rate});
  result.checkpoint = nn::snapshot(net, arch_hash);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(data.train.size());
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed(spec.seed, "shuffle", epoch));
    shuffle.shuffle(order.begin(), order.end());
    net.reseed_dropout(derive_seed(spec.seed, "dropout-epoch", epoch));
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += spec.batch_size, ++batch_index) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(spec.batch_size, order.size() - start));
      net.zero_grad();
      const auto pred = net.forward(gather_batch(data.train, idx), true);
      const auto loss = nn::mse_loss(pred, gather_targets(data.train, idx));
      if (!std::isfinite(loss.value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      net.backward(loss.grad);
      adam.step(net.parameters());
    }

    MetricsRecord rec;
    rec.experiment = spec.name;
    rec.point = point;
    rec.epoch = epoch;
    rec.train_mse = evaluate(net, data.train).mse;
    rec.val_mse = evaluate(net, data.validation).mse;
    if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.val_mse))
      throw NumericError("non-finite evaluation MSE after epoch " + std::to_string(epoch));
    rec.seconds = spec.record_wall_clock
                      ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                      : 0.0;
    result.history.push_back(rec);
    if (progress) progress(rec);

    if (result.best_epoch == 0 || rec.val_mse < result.best_val_mse) {
      result.best_epoch = epoch;
      result.best_val_mse = rec.val_mse;
      result.best_train_mse = rec.train_mse;
      result.checkpoint = nn::snapshot(net, arch_hash);
      since_best = 0;
    } else if (++since_best >= spec.patience) {
      break;
    }
  }
  return result;
}

/// Rebuilds a network from its config and checkpoint; the architecture hash
/// must match.
inline nn::Network<float> load_network(const ModelConfig& model, const nn::ParameterSnapshot& checkpoint) {
  require(architecture_hash(model) == checkpoint.architecture_hash,
          "checkpoint architecture hash does not match the model config");
  nn::Network<float> net(model.layers, model.input_shape(), 0);
  nn::restore(net, checkpoint);
  return net;
}

inline EvalResult evaluate(const ModelConfig& model, const nn::ParameterSnapshot& checkpoint, const WindowSet& w) {
  require(InputGeometry{w.frames, w.coeffs} == model.input,
          "evaluate: shard geometry " + std::to_string(w.frames) + "x" + std::to_string(w.coeffs) +
              " does not match the checkpoint's input " + std::to_string(model.input.frames) + "x" +
              std::to_string(model.input.coeffs));
  auto net = load_network(model, checkpoint);
  return evaluate(net, w);
}

/// JSON sidecar stored next to a checkpoint.
inline nlohmann::json checkpoint_sidecar(const ModelConfig& model, const ExperimentSpec& spec, bool has_optimizer_state) {
  return {{"model", model},
          {"architecture_hash", architecture_hash(model)},
          {"feature_hash", feature_config_hash(spec.mfcc, spec.plan)},
          {"n_max", spec.dataset.n_max},
          {"optimizer_state", has_optimizer_state},
          {"experiment", spec}};
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kMetricsHeader = "experiment,point,epoch,train_mse,val_mse,seconds";

namespace csv_detail {

inline std::string escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace csv_detail

inline std::string emit_metrics_csv(const std::vector<MetricsRecord>& records) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : records)
    out += csv_detail::escape(r.experiment) + "," + csv_detail::escape(r.point) + "," + std::to_string(r.epoch) + "," +
           format_double(r.train_mse) + "," + format_double(r.val_mse) + "," + format_double(r.seconds) + "\n";
  return out;
}

inline std::vector<MetricsRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(std::getline(in, line) && line == kMetricsHeader, "metrics CSV: unexpected header");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = csv_detail::split_line(line);
    require(cells.size() == 6, "metrics CSV: expected 6 columns in '" + line + "'");
    MetricsRecord r;
    r.experiment = cells[0];
    r.point = cells[1];
    r.epoch = std::stoull(cells[2]);
    r.train_mse = std::stod(cells[3]);
    r.val_mse = std::stod(cells[4]);
    r.seconds = std::stod(cells[5]);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grids

enum class GridKind { architecture, kernel, channels, filters, window };

NLOHMANN_JSON_SERIALIZE_ENUM(GridKind, {
                                           {GridKind::architecture, "architecture"},
                                           {GridKind::kernel, "kernel"},
                                           {GridKind::channels, "channels"},
                                           {GridKind::filters, "filters"},
                                           {GridKind::window, "window"},
                                       })

inline GridKind parse_grid_kind(const std::string& name) {
  for (GridKind g : {GridKind::architecture, GridKind::kernel, GridKind::channels, GridKind::filters, GridKind::window})
    if (nlohmann::json(g).get<std::string>() == name) return g;
  throw InputError("unknown grid '" + name + "' (expected architecture, kernel, channels, filters or window)");
}

/// MFCC geometry tall and wide enough for seven 2x2 pooling stages: 128
/// cepstral coefficients (from 128 mel filters over a 1024-point FFT) and
/// 198 frames from a 2 s window.
inline void use_deep_conv_geometry(ExperimentSpec& s) {
  s.mfcc.fft_size = 1024;
  s.mfcc.n_mel_filters = 128;
  s.mfcc.n_coeffs = 128;
  s.plan = WindowPlan::half_overlap(32000);
}

struct GridPoint {
  std::string label;
  ExperimentSpec spec;
};

/// The grid's points as overrides of `base`, in table order. The block-count
/// grid switches to the deep-conv geometry because seven pooling stages need
/// both input dimensions >= 128.
inline std::vector<GridPoint> grid_points(GridKind grid, const ExperimentSpec& base) {
  std::vector<GridPoint> out;
  const auto add = [&](std::string label, auto&& edit) {
    GridPoint p{std::move(label), base};
    edit(p.spec);
    p.spec.name = base.name;
    out.push_back(std::move(p));
  };
  switch (grid) {
    case GridKind::architecture:
      for (Architecture a : {Architecture::fc, Architecture::cnn_fc, Architecture::lstm_fc, Architecture::cnn_lstm_fc})
        add(display_name(a), [a](ExperimentSpec& s) { s.architecture = a; });
      break;
    case GridKind::kernel:
      for (std::size_t k : {3, 5, 7})
        add(std::to_string(k) + "x" + std::to_string(k), [k](ExperimentSpec& s) {
          s.architecture = Architecture::cnn_lstm_fc;
          s.params.conv.kernel_h = s.params.conv.kernel_w = k;
        });
      break;
    case GridKind::channels:
      for (std::size_t c : {3, 5, 7})
        add(std::to_string(c), [c](ExperimentSpec& s) {
          s.architecture = Architecture::cnn_lstm_fc;
          s.params.conv.blocks = c;
          s.params.conv.filters_per_block.clear();
          use_deep_conv_geometry(s);
        });
      break;
    case GridKind::filters:
      for (std::size_t f : {64, 128, 256})
        add(std::to_string(f), [f](ExperimentSpec& s) {
          s.architecture = Architecture::cnn_lstm_fc;
          s.params.conv.filters = f;
          s.params.conv.filters_per_block.clear();
        });
      break;
    case GridKind::window:
      for (std::size_t q : {32000, 16000, 8000})
        add("q=" + std::to_string(q), [q](ExperimentSpec& s) { s.plan = WindowPlan::half_overlap(q); });
      break;
  }
  return out;
}

struct AblationRow {
  std::string point;
  double train_mse = std::numeric_limits<double>::quiet_NaN();
  double val_mse = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_epoch = 0;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

struct AblationReport {
  GridKind grid = GridKind::architecture;
  std::vector<AblationRow> rows;
  std::vector<MetricsRecord> metrics;  // all points, grid order
  std::vector<TrainResult> results;    // parallel to rows; empty model on failure
};

/// Trains every grid point on identical data and seed. A failing point is
/// recorded with its error and does not stop the grid.
inline AblationReport run_ablation(GridKind grid, const ExperimentSpec& base, DataProvider& data,
                                   std::size_t jobs = 1, const ProgressFn& progress = {}) {
  const auto points = grid_points(grid, base);
  AblationReport report;
  report.grid = grid;
  report.rows.resize(points.size());
  report.results.resize(points.size());
  parallel_for(points.size(), jobs, [&](std::size_t i) {
    AblationRow& row = report.rows[i];
    row.point = points[i].label;
    try {
      points[i].spec.validate();
      const auto prepared = data.prepare(points[i].spec);
      report.results[i] = train(points[i].spec, prepared, points[i].label, progress);
      row.train_mse = report.results[i].best_train_mse;
      row.val_mse = report.results[i].best_val_mse;
      row.best_epoch = report.results[i].best_epoch;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  for (const auto& r : report.results) report.metrics.insert(report.metrics.end(), r.history.begin(), r.history.end());
  return report;
}

inline std::string emit_ablation_csv(const AblationReport& r) {
  std::string out = "grid,point,train_mse,val_mse,best_epoch,status\n";
  const std::string grid = nlohmann::json(r.grid).get<std::string>();
  for (const auto& row : r.rows)
    out += grid + "," + csv_detail::escape(row.point) + "," + (row.ok() ? format_double(row.train_mse) : "") + "," +
           (row.ok() ? format_double(row.val_mse) : "") + "," + std::to_string(row.best_epoch) + "," +
           csv_detail::escape(row.ok() ? "ok" : "error: " + row.error) + "\n";
  return out;
}

struct RobustnessRow {
  std::uint64_t split_seed = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  std::size_t best_epoch = 0;
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  std::vector<MetricsRecord> metrics;

  double mean_val() const {
    double s = 0;
    for (const auto& r : rows) s += r.val_mse;
    return s / static_cast<double>(rows.size());
  }
  /// (max - min) / mean of the final validation MSEs.
  double relative_spread() const {
    double lo = rows.front().val_mse, hi = lo;
    for (const auto& r : rows) {
      lo = std::min(lo, r.val_mse);
      hi = std::max(hi, r.val_mse);
    }
    return (hi - lo) / mean_val();
  }
};

inline std::vector<std::uint64_t> robustness_split_seeds(const ExperimentSpec& base, std::size_t k) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < k; ++i) seeds.push_back(derive_seed(base.seed, "robustness-split", i));
  return seeds;
}

/// Retrains `base` once per split seed, everything else identical.
inline RobustnessReport run_split_robustness(const ExperimentSpec& base, const std::vector<std::uint64_t>& split_seeds,
                                             DataProvider& data, std::size_t jobs = 1, const ProgressFn& progress = {}) {
  require(split_seeds.size() >= 2, "split robustness needs at least 2 seeds");
  base.validate();
  RobustnessReport report;
  report.rows.resize(split_seeds.size());
  std::vector<TrainResult> results(split_seeds.size());
  parallel_for(split_seeds.size(), jobs, [&](std::size_t i) {
    ExperimentSpec s = base;
    s.split_seed = split_seeds[i];
    results[i] = train(s, data.prepare(s), "split_seed=" + std::to_string(split_seeds[i]), progress);
    report.rows[i] = {split_seeds[i], results[i].best_train_mse, results[i].best_val_mse, results[i].best_epoch};
  });
  for (const auto& r : results) report.metrics.insert(report.metrics.end(), r.history.begin(), r.history.end());
  return report;
}

inline RobustnessReport run_split_robustness(const ExperimentSpec& base, std::size_t k, DataProvider& data,
                                             std::size_t jobs = 1, const ProgressFn& progress = {}) {
  return run_split_robustness(base, robustness_split_seeds(base, k), data, jobs, progress);
}

inline std::string emit_robustness_csv(const RobustnessReport& r) {
  std::string out = "split_seed,train_mse,val_mse,best_epoch\n";
  for (const auto& row : r.rows)
    out += std::to_string(row.split_seed) + "," + format_double(row.train_mse) + "," + format_double(row.val_mse) +
           "," + std::to_string(row.best_epoch) + "\n";
  return out;
}

}  // namespace voxcount
