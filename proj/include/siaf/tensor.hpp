// SPDX-License-Identifier: Apache-2.0
//
// Core tensor types shared by the reference model and the accelerator
// simulator.
//
// SpikeTensor stores one bit per element, LSB-first inside 64-bit words, words
// in row-major element order. Bits past the last element are always zero.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "siaf/error.hpp"

namespace siaf {

using Shape = std::vector<std::uint32_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline bool valid_time_steps(std::uint32_t t) { return t == 1 || t == 2 || t == 4; }

/// Narrows a 64-bit intermediate into the 32-bit accumulator range.
inline std::int32_t checked_i32(std::int64_t v, std::string_view what) {
  if (v < std::numeric_limits<std::int32_t>::min() || v > std::numeric_limits<std::int32_t>::max()) {
    throw OverflowError(std::string(what) + ": value " + std::to_string(v) +
                        " overflows 32-bit accumulator");
  }
  return static_cast<std::int32_t>(v);
}

namespace detail {

inline std::size_t flat_index(const Shape& shape, std::span<const std::uint32_t> idx) {
  if (idx.size() != shape.size()) {
    throw IndexError("index rank " + std::to_string(idx.size()) + " != tensor rank " +
                     std::to_string(shape.size()));
  }
  std::size_t flat = 0;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (idx[d] >= shape[d]) {
      throw IndexError("index " + std::to_string(idx[d]) + " out of range for dim " +
                       std::to_string(d) + " of shape " + shape_str(shape));
    }
    flat = flat * shape[d] + idx[d];
  }
  return flat;
}

inline std::span<const std::uint32_t> as_span(std::initializer_list<std::uint32_t> il) {
  return {il.begin(), il.size()};
}

}  // namespace detail

/// Bit-packed binary activation tensor. The first dimension is the time step.
class SpikeTensor {
 public:
  static constexpr std::size_t kWordBits = 64;

  SpikeTensor() = default;

  explicit SpikeTensor(Shape shape) : shape_(std::move(shape)) {
    if (shape_.empty()) throw ShapeError("spike tensor needs at least the time dimension");
    if (!valid_time_steps(shape_[0])) {
      throw ShapeError("time steps must be 1, 2 or 4, got " + std::to_string(shape_[0]));
    }
    size_ = element_count(shape_);
    words_.assign((size_ + kWordBits - 1) / kWordBits, 0);
  }

  /// Adopts an existing packed payload. Padding bits must be zero.
  static SpikeTensor from_words(Shape shape, std::vector<std::uint64_t> words) {
    SpikeTensor s(std::move(shape));
    if (words.size() != s.words_.size()) {
      throw ShapeError("packed payload has " + std::to_string(words.size()) + " words, expected " +
                       std::to_string(s.words_.size()));
    }
    s.words_ = std::move(words);
    if (s.size_ % kWordBits != 0 && !s.words_.empty()) {
      const std::uint64_t pad_mask = ~((std::uint64_t{1} << (s.size_ % kWordBits)) - 1);
      if (s.words_.back() & pad_mask) throw ShapeError("packed payload has nonzero padding bits");
    }
    return s;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return size_; }
  std::uint32_t time_steps() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  /// Elements per time step.
  std::size_t step_size() const noexcept { return shape_.empty() ? 0 : size_ / shape_[0]; }

  std::size_t index(std::span<const std::uint32_t> idx) const {
    return detail::flat_index(shape_, idx);
  }

  bool get(std::span<const std::uint32_t> idx) const { return get_flat(index(idx)); }
  bool get(std::initializer_list<std::uint32_t> idx) const { return get(detail::as_span(idx)); }
  void set(std::span<const std::uint32_t> idx, bool v) { set_flat(index(idx), v); }
  void set(std::initializer_list<std::uint32_t> idx, bool v) { set(detail::as_span(idx), v); }

  bool get_flat(std::size_t i) const {
    if (i >= size_) throw IndexError("flat index " + std::to_string(i) + " out of range");
    return (words_[i / kWordBits] >> (i % kWordBits)) & 1u;
  }
  void set_flat(std::size_t i, bool v) {
    if (i >= size_) throw IndexError("flat index " + std::to_string(i) + " out of range");
    const std::uint64_t mask = std::uint64_t{1} << (i % kWordBits);
    if (v) {
      words_[i / kWordBits] |= mask;
    } else {
      words_[i / kWordBits] &= ~mask;
    }
  }

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> mutable_words() noexcept { return words_; }

  std::size_t count_ones() const noexcept {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  /// Copies out time step `t` as a T=1 tensor with the remaining dims.
  SpikeTensor time_slice(std::uint32_t t) const {
    if (t >= time_steps()) throw IndexError("time step out of range");
    Shape s = shape_;
    s[0] = 1;
    SpikeTensor out(s);
    const std::size_t n = step_size();
    for (std::size_t i = 0; i < n; ++i) out.set_flat(i, get_flat(t * n + i));
    return out;
  }

  /// Same elements under a new shape with equal element count and valid T.
  SpikeTensor reshaped(Shape shape) const {
    if (element_count(shape) != size_) throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return from_words(std::move(shape), words_);
  }

  friend bool operator==(const SpikeTensor& a, const SpikeTensor& b) {
    return a.shape_ == b.shape_ && a.words_ == b.words_;
  }

 private:
  Shape shape_;
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Fraction of zero elements; padding bits are not elements.
inline double sparsity(const SpikeTensor& s) {
  if (s.size() == 0) return 1.0;
  const std::size_t zeros = s.size() - s.count_ones();
  return static_cast<double>(zeros) / static_cast<double>(s.size());
}

inline double density(const SpikeTensor& s) {
  if (s.size() == 0) return 0.0;
  return static_cast<double>(s.count_ones()) / static_cast<double>(s.size());
}

/// 8-bit weights; represented value is data * 2^scale_exp. BN is folded in.
class QTensor {
 public:
  QTensor() = default;
  QTensor(Shape shape, std::vector<std::int8_t> data, std::int32_t scale_exp)
      : shape_(std::move(shape)), data_(std::move(data)), scale_exp_(scale_exp) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("QTensor data size " + std::to_string(data_.size()) + " != shape " +
                       shape_str(shape_));
    }
    if (scale_exp_ < -16 || scale_exp_ > 0) {
      throw ShapeError("QTensor scale_exp " + std::to_string(scale_exp_) + " outside [-16, 0]");
    }
  }
  QTensor(Shape shape, std::int32_t scale_exp)
      : QTensor(shape, std::vector<std::int8_t>(element_count(shape), 0), scale_exp) {}

  const Shape& shape() const noexcept { return shape_; }
  std::span<const std::int8_t> data() const noexcept { return data_; }
  std::span<std::int8_t> mutable_data() noexcept { return data_; }
  std::int32_t scale_exp() const noexcept { return scale_exp_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::int8_t at(std::initializer_list<std::uint32_t> idx) const {
    return data_[detail::flat_index(shape_, detail::as_span(idx))];
  }
  std::int8_t& at(std::initializer_list<std::uint32_t> idx) {
    return data_[detail::flat_index(shape_, detail::as_span(idx))];
  }

  friend bool operator==(const QTensor&, const QTensor&) = default;

 private:
  Shape shape_;
  std::vector<std::int8_t> data_;
  std::int32_t scale_exp_ = 0;
};

/// 32-bit accumulator tensor (pre-LIF currents, membrane potentials, biases).
class AccTensor {
 public:
  AccTensor() = default;
  AccTensor(Shape shape, std::vector<std::int32_t> data, std::int32_t scale_exp)
      : shape_(std::move(shape)), data_(std::move(data)), scale_exp_(scale_exp) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("AccTensor data size " + std::to_string(data_.size()) + " != shape " +
                       shape_str(shape_));
    }
  }
  AccTensor(Shape shape, std::int32_t scale_exp)
      : AccTensor(shape, std::vector<std::int32_t>(element_count(shape), 0), scale_exp) {}

  const Shape& shape() const noexcept { return shape_; }
  std::span<const std::int32_t> data() const noexcept { return data_; }
  std::span<std::int32_t> mutable_data() noexcept { return data_; }
  std::int32_t scale_exp() const noexcept { return scale_exp_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::int32_t at(std::initializer_list<std::uint32_t> idx) const {
    return data_[detail::flat_index(shape_, detail::as_span(idx))];
  }
  std::int32_t& at(std::initializer_list<std::uint32_t> idx) {
    return data_[detail::flat_index(shape_, detail::as_span(idx))];
  }

  AccTensor reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return AccTensor(std::move(shape), data_, scale_exp_);
  }

  friend bool operator==(const AccTensor&, const AccTensor&) = default;

 private:
  Shape shape_;
  std::vector<std::int32_t> data_;
  std::int32_t scale_exp_ = 0;
};

/// 8-bit image, shape [channels, height, width].
class ByteImage {
 public:
  ByteImage() = default;
  ByteImage(std::uint32_t channels, std::uint32_t height, std::uint32_t width,
            std::vector<std::uint8_t> data)
      : shape_{channels, height, width}, data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("ByteImage data size mismatch for shape " + shape_str(shape_));
    }
  }
  ByteImage(std::uint32_t channels, std::uint32_t height, std::uint32_t width)
      : ByteImage(channels, height, width,
                  std::vector<std::uint8_t>(std::size_t{channels} * height * width, 0)) {}

  const Shape& shape() const noexcept { return shape_; }
  std::uint32_t channels() const noexcept { return shape_[0]; }
  std::uint32_t height() const noexcept { return shape_[1]; }
  std::uint32_t width() const noexcept { return shape_[2]; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> mutable_data() noexcept { return data_; }

  std::uint8_t at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
    return data_[detail::flat_index(shape_, detail::as_span({c, y, x}))];
  }
  std::uint8_t& at(std::uint32_t c, std::uint32_t y, std::uint32_t x) {
    return data_[detail::flat_index(shape_, detail::as_span({c, y, x}))];
  }

  friend bool operator==(const ByteImage&, const ByteImage&) = default;

 private:
  Shape shape_{0, 0, 0};
  std::vector<std::uint8_t> data_;
};

/// Splits an image into 8 T=1 spike tensors of shape [1, C, H, W]; plane b
/// holds bit b (b = 0 is the LSB).
inline std::vector<SpikeTensor> bitplane_decompose(const ByteImage& img) {
  std::vector<SpikeTensor> planes;
  planes.reserve(8);
  const Shape s{1, img.channels(), img.height(), img.width()};
  for (int b = 0; b < 8; ++b) planes.emplace_back(s);
  const auto px = img.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    for (int b = 0; b < 8; ++b) {
      if ((px[i] >> b) & 1u) planes[static_cast<std::size_t>(b)].set_flat(i, true);
    }
  }
  return planes;
}

inline ByteImage bitplane_recompose(std::span<const SpikeTensor> planes) {
  if (planes.size() != 8) throw ShapeError("expected 8 bitplanes, got " + std::to_string(planes.size()));
  const Shape& s = planes[0].shape();
  if (s.size() != 4 || s[0] != 1) throw ShapeError("bitplanes must have shape [1, C, H, W]");
  for (const auto& p : planes) {
    if (p.shape() != s) {
      throw ShapeError("bitplane shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(s));
    }
  }
  ByteImage img(s[1], s[2], s[3]);
  auto px = img.mutable_data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    unsigned v = 0;
    for (unsigned b = 0; b < 8; ++b) v |= static_cast<unsigned>(planes[b].get_flat(i)) << b;
    px[i] = static_cast<std::uint8_t>(v);
  }
  return img;
}

}  // namespace siaf
