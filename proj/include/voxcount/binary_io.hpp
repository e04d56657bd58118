#pragma once

// Little-endian primitives for the shard and checkpoint containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxcount/common.hpp"

namespace voxcount {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void bytes(std::string_view s) { buffer_.append(s); }
  void f32s(const float* p, std::size_t n) { raw(p, 4 * n); }

  const std::string& str() const { return buffer_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (!out) throw InputError("write failed for " + path.string());
  }

 private:
  void raw(const void* p, std::size_t n) { buffer_.append(static_cast<const char*>(p), n); }
  std::string buffer_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  static ByteReader load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes), path.string());
  }

  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  float f32() { return pod<float>(); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void f32s(float* out, std::size_t n) {
    need(4 * n);
    std::memcpy(out, data_.data() + pos_, 4 * n);
    pos_ += 4 * n;
  }

  bool at_end() const { return pos_ == data_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  template <class P>
  P pod() {
    need(sizeof(P));
    P v;
    std::memcpy(&v, data_.data() + pos_, sizeof(P));
    pos_ += sizeof(P);
    return v;
  }

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw InputError(origin_ + ": truncated file");
  }

  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace voxcount
