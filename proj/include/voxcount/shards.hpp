#pragma once

// Feature shard container, one file per split:
//   "VXFM" | u32 version | u32 frame_count | u32 coeff_count | u64 record count
//   per record: u32 n_males | u32 n_females | u32 clip index |
//               frame_count x coeff_count float32, row-major
// Features are stored unnormalized. A JSON sidecar next to the shard
// ("<shard>.json") carries the MfccConfig, WindowPlan and the training-set
// NormStats so the exact normalization can be replayed.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxcount/binary_io.hpp"
#include "voxcount/dataset.hpp"
#include "voxcount/mfcc.hpp"

namespace voxcount {

inline constexpr char kShardMagic[] = "VXFM";
inline constexpr std::uint32_t kShardVersion = 1;

NLOHMANN_JSON_SERIALIZE_ENUM(Taper, {{Taper::hann, "hann"}, {Taper::rectangular, "rectangular"}})

inline void to_json(nlohmann::json& j, const MfccConfig& c) {
  j = {{"frame_len", c.frame_len},   {"frame_hop", c.frame_hop}, {"fft_size", c.fft_size},
       {"n_mel_filters", c.n_mel_filters}, {"n_coeffs", c.n_coeffs}, {"fmin_hz", c.fmin_hz},
       {"fmax_hz", c.fmax_hz},       {"epsilon", c.epsilon},     {"taper", c.taper}};
}

inline void from_json(const nlohmann::json& j, MfccConfig& c) {
  c.frame_len = j.value("frame_len", c.frame_len);
  c.frame_hop = j.value("frame_hop", c.frame_hop);
  c.fft_size = j.value("fft_size", c.fft_size);
  c.n_mel_filters = j.value("n_mel_filters", c.n_mel_filters);
  c.n_coeffs = j.value("n_coeffs", c.n_coeffs);
  c.fmin_hz = j.value("fmin_hz", c.fmin_hz);
  c.fmax_hz = j.value("fmax_hz", c.fmax_hz);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.taper = j.value("taper", c.taper);
}

inline void to_json(nlohmann::json& j, const WindowPlan& p) { j = {{"window_len", p.window_len}, {"shift", p.shift}}; }
inline void from_json(const nlohmann::json& j, WindowPlan& p) {
  p.window_len = j.value("window_len", p.window_len);
  p.shift = j.value("shift", p.shift);
}

inline void to_json(nlohmann::json& j, const NormStats& s) { j = {{"min", s.min}, {"max", s.max}}; }
inline void from_json(const nlohmann::json& j, NormStats& s) {
  s.min = j.at("min").get<std::vector<double>>();
  s.max = j.at("max").get<std::vector<double>>();
}

/// Identity of the feature pipeline; training refuses shards whose hash
/// differs from the experiment's.
inline std::uint64_t feature_config_hash(const MfccConfig& mfcc, const WindowPlan& plan) {
  return fnv1a64(nlohmann::json{{"mfcc", mfcc}, {"window", plan}}.dump());
}

/// Float32 feature records of one split.
struct FeatureShard {
  std::size_t frame_count = 0;
  std::size_t coeff_count = 0;
  struct Record {
    std::uint32_t n_males = 0;
    std::uint32_t n_females = 0;
    std::uint32_t clip_index = 0;
    std::vector<float> values;
    friend bool operator==(const Record&, const Record&) = default;
  };
  std::vector<Record> records;

  friend bool operator==(const FeatureShard&, const FeatureShard&) = default;
};

struct ShardSidecar {
  std::string split;
  MfccConfig mfcc;
  WindowPlan plan;
  NormStats norm_stats;
  int n_max = kDefaultMaxSpeakers;
  std::size_t records = 0;

  std::uint64_t config_hash() const { return feature_config_hash(mfcc, plan); }
};

inline void to_json(nlohmann::json& j, const ShardSidecar& s) {
  j = {{"split", s.split},     {"mfcc", s.mfcc},       {"window", s.plan},
       {"norm_stats", s.norm_stats}, {"n_max", s.n_max}, {"records", s.records},
       {"config_hash", s.config_hash()}};
}
inline void from_json(const nlohmann::json& j, ShardSidecar& s) {
  s.split = j.value("split", std::string());
  s.mfcc = j.at("mfcc").get<MfccConfig>();
  s.plan = j.at("window").get<WindowPlan>();
  s.norm_stats = j.at("norm_stats").get<NormStats>();
  s.n_max = j.at("n_max").get<int>();
  s.records = j.at("records").get<std::size_t>();
}

inline FeatureShard make_shard(const std::vector<LabeledFeatures>& items) {
  FeatureShard s;
  if (!items.empty()) {
    s.frame_count = items.front().features.frame_count;
    s.coeff_count = items.front().features.coeff_count;
  }
  for (const auto& it : items) {
    require(it.features.frame_count == s.frame_count && it.features.coeff_count == s.coeff_count,
            "make_shard: inconsistent feature geometry");
    s.records.push_back({static_cast<std::uint32_t>(it.label.n_males), static_cast<std::uint32_t>(it.label.n_females),
                         it.clip_index, std::vector<float>(it.features.values.begin(), it.features.values.end())});
  }
  return s;
}

inline std::string encode_shard(const FeatureShard& s) {
  ByteWriter w;
  w.bytes(std::string_view(kShardMagic, 4));
  w.u32(kShardVersion);
  w.u32(static_cast<std::uint32_t>(s.frame_count));
  w.u32(static_cast<std::uint32_t>(s.coeff_count));
  w.u64(s.records.size());
  for (const auto& r : s.records) {
    w.u32(r.n_males);
    w.u32(r.n_females);
    w.u32(r.clip_index);
    w.f32s(r.values.data(), r.values.size());
  }
  return w.str();
}

inline FeatureShard decode_shard(ByteReader r) {
  if (r.bytes(4) != std::string_view(kShardMagic, 4)) throw InputError(r.origin() + ": not a feature shard");
  const auto version = r.u32();
  if (version != kShardVersion) throw InputError(r.origin() + ": unsupported shard version " + std::to_string(version));
  FeatureShard s;
  s.frame_count = r.u32();
  s.coeff_count = r.u32();
  const auto count = r.u64();
  s.records.resize(count);
  for (auto& rec : s.records) {
    rec.n_males = r.u32();
    rec.n_females = r.u32();
    rec.clip_index = r.u32();
    rec.values.resize(s.frame_count * s.coeff_count);
    r.f32s(rec.values.data(), rec.values.size());
  }
  if (!r.at_end()) throw InputError(r.origin() + ": trailing bytes after shard");
  return s;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& shard) {
  auto p = shard;
  p += ".json";
  return p;
}

inline void write_shard(const std::filesystem::path& path, const FeatureShard& shard, const ShardSidecar& sidecar) {
  ByteWriter w;
  w.bytes(encode_shard(shard));
  w.save(path);
  std::ofstream(sidecar_path(path)) << nlohmann::json(sidecar).dump(2) << '\n';
}

struct LoadedShard {
  FeatureShard shard;
  ShardSidecar sidecar;
};

inline LoadedShard read_shard(const std::filesystem::path& path) {
  LoadedShard out;
  out.shard = decode_shard(ByteReader::load(path));
  std::ifstream in(sidecar_path(path));
  if (!in) throw InputError("missing sidecar " + sidecar_path(path).string());
  try {
    out.sidecar = nlohmann::json::parse(in).get<ShardSidecar>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(sidecar_path(path).string() + ": " + e.what());
  }
  require(out.sidecar.records == out.shard.records.size(), path.string() + ": sidecar record count mismatch");
  return out;
}

}  // namespace voxcount
