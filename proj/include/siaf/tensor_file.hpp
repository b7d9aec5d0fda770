// SPDX-License-Identifier: Apache-2.0
//
// SIAF binary tensor container (little-endian):
//
//   magic "SIAF" | version u16 = 1 | tensor count u32
//   per tensor: name length u16 | name bytes | dtype u8 | rank u8 |
//               dims u32 x rank | scale_exp i8 | payload length u64 | payload
//
// dtype: 0 = packed spikes (64-bit LSB-first words), 1 = int8, 2 = int32,
// 3 = uint8 (image, rank 3).
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "siaf/error.hpp"
#include "siaf/tensor.hpp"

namespace siaf {

enum class DType : std::uint8_t { kSpike = 0, kInt8 = 1, kInt32 = 2, kUInt8 = 3 };

using AnyTensor = std::variant<SpikeTensor, QTensor, AccTensor, ByteImage>;

inline constexpr std::uint16_t kTensorFileVersion = 1;

/// Named tensors in insertion-independent (sorted) order.
class TensorFile {
 public:
  void put(const std::string& name, AnyTensor t) { tensors_[name] = std::move(t); }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  const std::map<std::string, AnyTensor>& tensors() const { return tensors_; }

  template <class T>
  const T& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("tensor '" + name + "' not found in weight file");
    if (auto* p = std::get_if<T>(&it->second)) return *p;
    throw ConfigError("tensor '" + name + "' has unexpected dtype");
  }

  std::vector<std::uint8_t> serialize() const;
  static TensorFile parse(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

  void save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError(path, 0, "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError(path, 0, "write failed");
  }

  static TensorFile load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path, 0, "cannot open file");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(bytes, path);
  }

 private:
  std::map<std::string, AnyTensor> tensors_;
};

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    auto b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, const std::string& source)
      : bytes_(bytes), source_(source) {}

  template <class T>
  T le(const char* field) {
    need(sizeof(T), field);
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  const std::uint8_t* raw(std::size_t n, const char* field) {
    need(n, field);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(std::uint64_t at, const std::string& what) const { throw ParseError(source_, at, what); }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) fail(pos_, std::string("truncated while reading ") + field);
  }
  const std::vector<std::uint8_t>& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> TensorFile::serialize() const {
  detail::ByteWriter w;
  w.raw("SIAF", 4);
  w.le<std::uint16_t>(kTensorFileVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, tensor] : tensors_) {
    if (name.size() > 0xFFFF) throw ConfigError("tensor name too long: " + name.substr(0, 32));
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    std::visit(
        [&](const auto& t) {
          using T = std::decay_t<decltype(t)>;
          const Shape& shape = t.shape();
          if constexpr (std::is_same_v<T, SpikeTensor>) {
            w.le<std::uint8_t>(static_cast<std::uint8_t>(DType::kSpike));
          } else if constexpr (std::is_same_v<T, QTensor>) {
            w.le<std::uint8_t>(static_cast<std::uint8_t>(DType::kInt8));
          } else if constexpr (std::is_same_v<T, AccTensor>) {
            w.le<std::uint8_t>(static_cast<std::uint8_t>(DType::kInt32));
          } else {
            w.le<std::uint8_t>(static_cast<std::uint8_t>(DType::kUInt8));
          }
          w.le<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
          for (auto d : shape) w.le<std::uint32_t>(d);
          if constexpr (std::is_same_v<T, SpikeTensor>) {
            w.le<std::int8_t>(0);
            w.le<std::uint64_t>(t.words().size() * 8);
            for (auto word : t.words()) w.le<std::uint64_t>(word);
          } else if constexpr (std::is_same_v<T, QTensor>) {
            w.le<std::int8_t>(static_cast<std::int8_t>(t.scale_exp()));
            w.le<std::uint64_t>(t.size());
            for (auto v : t.data()) w.le<std::int8_t>(v);
          } else if constexpr (std::is_same_v<T, AccTensor>) {
            if (t.scale_exp() < -128 || t.scale_exp() > 127) throw ConfigError("scale_exp out of i8 range");
            w.le<std::int8_t>(static_cast<std::int8_t>(t.scale_exp()));
            w.le<std::uint64_t>(t.size() * 4);
            for (auto v : t.data()) w.le<std::int32_t>(v);
          } else {
            w.le<std::int8_t>(0);
            w.le<std::uint64_t>(t.data().size());
            w.raw(t.data().data(), t.data().size());
          }
        },
        tensor);
  }
  return w.take();
}

inline TensorFile TensorFile::parse(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  const std::uint8_t* magic = r.raw(4, "magic");
  if (std::memcmp(magic, "SIAF", 4) != 0) r.fail(0, "bad magic bytes (expected \"SIAF\")");
  const auto version_at = r.pos();
  const auto version = r.le<std::uint16_t>("version");
  if (version != kTensorFileVersion) r.fail(version_at, "unsupported format version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>("tensor count");

  TensorFile file;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto entry_at = r.pos();
    const auto name_len = r.le<std::uint16_t>("name length");
    const auto* name_bytes = r.raw(name_len, "name");
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    if (file.contains(name)) r.fail(entry_at, "duplicate tensor name '" + name + "'");
    const auto dtype_at = r.pos();
    const auto dtype = r.le<std::uint8_t>("dtype");
    const auto rank = r.le<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint32_t>("dims");
    const auto scale_at = r.pos();
    const auto scale_exp = r.le<std::int8_t>("scale_exp");
    const auto len_at = r.pos();
    const auto payload_len = r.le<std::uint64_t>("payload length");
    const std::size_t n = element_count(shape);

    auto expect_len = [&](std::uint64_t expected) {
      if (payload_len != expected) {
        r.fail(len_at, "payload length " + std::to_string(payload_len) + " != expected " +
                           std::to_string(expected) + " for '" + name + "'");
      }
    };

    try {
      switch (static_cast<DType>(dtype)) {
        case DType::kSpike: {
          if (rank == 0) r.fail(dtype_at, "spike tensor '" + name + "' has rank 0");
          const std::size_t words = (n + 63) / 64;
          expect_len(words * 8);
          std::vector<std::uint64_t> payload(words);
          for (auto& w : payload) w = r.le<std::uint64_t>("spike payload");
          file.put(name, SpikeTensor::from_words(shape, std::move(payload)));
          break;
        }
        case DType::kInt8: {
          expect_len(n);
          const auto* p = r.raw(n, "int8 payload");
          std::vector<std::int8_t> data(n);
          std::memcpy(data.data(), p, n);
          if (scale_exp < -16 || scale_exp > 0) r.fail(scale_at, "int8 scale_exp outside [-16, 0]");
          file.put(name, QTensor(shape, std::move(data), scale_exp));
          break;
        }
        case DType::kInt32: {
          expect_len(n * 4);
          std::vector<std::int32_t> data(n);
          for (auto& v : data) v = r.le<std::int32_t>("int32 payload");
          file.put(name, AccTensor(shape, std::move(data), scale_exp));
          break;
        }
        case DType::kUInt8: {
          if (rank != 3) r.fail(dtype_at, "uint8 tensor '" + name + "' must have rank 3");
          expect_len(n);
          const auto* p = r.raw(n, "uint8 payload");
          file.put(name, ByteImage(shape[0], shape[1], shape[2], std::vector<std::uint8_t>(p, p + n)));
          break;
        }
        default:
          r.fail(dtype_at, "unknown dtype code " + std::to_string(dtype));
      }
    } catch (const ShapeError& e) {
      r.fail(entry_at, std::string("invalid tensor '") + name + "': " + e.what());
    }
  }
  if (!r.done()) r.fail(r.pos(), "trailing bytes after last tensor");
  return file;
}

}  // namespace siaf
