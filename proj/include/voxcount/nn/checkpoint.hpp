#pragma once

// Checkpoint container:
//   "VXCK" | u32 version | u64 architecture hash | u32 parameter count
//   per parameter: u32 name length | name | u32 rank | rank x u32 dims | float32 payload

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxcount/binary_io.hpp"
#include "voxcount/nn/network.hpp"

namespace voxcount::nn {

inline constexpr char kCheckpointMagic[] = "VXCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Parameter values detached from a network, always stored as float32.
struct ParameterSnapshot {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  std::uint64_t architecture_hash = 0;
  std::vector<Entry> entries;

  friend bool operator==(const ParameterSnapshot&, const ParameterSnapshot&) = default;
};

template <class T>
ParameterSnapshot snapshot(Network<T>& net, std::uint64_t architecture_hash) {
  ParameterSnapshot s;
  s.architecture_hash = architecture_hash;
  for (auto& p : net.parameters())
    s.entries.push_back({p.name, p.tensor->shape, std::vector<float>(p.tensor->data.begin(), p.tensor->data.end())});
  return s;
}

template <class T>
void restore(Network<T>& net, const ParameterSnapshot& s) {
  auto params = net.parameters();
  require(params.size() == s.entries.size(), "checkpoint: parameter count " + std::to_string(s.entries.size()) +
                                                 " does not match network (" + std::to_string(params.size()) + ")");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = s.entries[i];
    require(e.name == params[i].name && e.shape == params[i].tensor->shape,
            "checkpoint: parameter " + e.name + " " + to_string(e.shape) + " does not match " + params[i].name +
                " " + to_string(params[i].tensor->shape));
    std::copy(e.values.begin(), e.values.end(), params[i].tensor->data.begin());
  }
}

inline std::string encode_checkpoint(const ParameterSnapshot& s) {
  ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u64(s.architecture_hash);
  w.u32(static_cast<std::uint32_t>(s.entries.size()));
  for (const auto& e : s.entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(e.values.data(), e.values.size());
  }
  return w.str();
}

inline void write_checkpoint(const std::filesystem::path& path, const ParameterSnapshot& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  const std::string bytes = encode_checkpoint(s);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ParameterSnapshot read_checkpoint(ByteReader r) {
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw InputError(r.origin() + ": not a checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw InputError(r.origin() + ": unsupported checkpoint version " + std::to_string(version));
  ParameterSnapshot s;
  s.architecture_hash = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ParameterSnapshot::Entry e;
    e.name = r.bytes(r.u32());
    const auto rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u32());
    e.values.resize(shape_size(e.shape));
    r.f32s(e.values.data(), e.values.size());
    s.entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw InputError(r.origin() + ": trailing bytes after checkpoint");
  return s;
}

inline ParameterSnapshot read_checkpoint(const std::filesystem::path& path) {
  return read_checkpoint(ByteReader::load(path));
}

}  // namespace voxcount::nn
