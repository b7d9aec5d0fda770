// SPDX-License-Identifier: Apache-2.0
//
// Test-only oracles: unpacked, byte-per-element re-implementations written
// without reusing any library arithmetic.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "siaf/tensor.hpp"

namespace siaf::testing {

/// Unpacked mirror of a tensor: one int64 per element, row-major.
struct Dense {
  Shape shape;
  std::vector<std::int64_t> v;

  std::int64_t& at4(std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d) {
    return v[((std::size_t{a} * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  std::int64_t at4(std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d) const {
    return v[((std::size_t{a} * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  std::int64_t& at3(std::uint32_t a, std::uint32_t b, std::uint32_t c) {
    return v[(std::size_t{a} * shape[1] + b) * shape[2] + c];
  }
  std::int64_t at3(std::uint32_t a, std::uint32_t b, std::uint32_t c) const {
    return v[(std::size_t{a} * shape[1] + b) * shape[2] + c];
  }
};

inline Dense dense(const SpikeTensor& s) {
  Dense d{s.shape(), std::vector<std::int64_t>(s.size())};
  for (std::size_t i = 0; i < s.size(); ++i) d.v[i] = s.get_flat(i);
  return d;
}
inline Dense dense(const AccTensor& a) { return Dense{a.shape(), {a.data().begin(), a.data().end()}}; }
inline Dense dense(const QTensor& q) { return Dense{q.shape(), {q.data().begin(), q.data().end()}}; }

inline std::vector<std::int64_t> values(const AccTensor& a) { return {a.data().begin(), a.data().end()}; }

inline SpikeTensor random_spikes(const Shape& shape, std::mt19937_64& rng, double p = 0.3) {
  SpikeTensor s(shape);
  std::bernoulli_distribution bit(p);
  for (std::size_t i = 0; i < s.size(); ++i) s.set_flat(i, bit(rng));
  return s;
}

inline QTensor random_weights(const Shape& shape, std::mt19937_64& rng, int lo = -128, int hi = 127, std::int32_t scale = -6) {
  std::uniform_int_distribution<int> d(lo, hi);
  std::vector<std::int8_t> v(element_count(shape));
  for (auto& x : v) x = static_cast<std::int8_t>(d(rng));
  return QTensor(shape, std::move(v), scale);
}

inline AccTensor random_bias(std::uint32_t n, std::mt19937_64& rng, int lo = -64, int hi = 64, std::int32_t scale = -6) {
  std::uniform_int_distribution<int> d(lo, hi);
  std::vector<std::int32_t> v(n);
  for (auto& x : v) x = d(rng);
  return AccTensor({n}, std::move(v), scale);
}

inline ByteImage random_image(std::uint32_t c, std::uint32_t h, std::uint32_t w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, 255);
  ByteImage img(c, h, w);
  for (auto& p : img.mutable_data()) p = static_cast<std::uint8_t>(d(rng));
  return img;
}

/// Scalar LIF: hard reset, floor leak, one neuron at a time.
inline std::vector<int> lif_scalar(const std::vector<std::int64_t>& currents, std::int64_t threshold, int shift,
                                   std::int64_t* final_membrane = nullptr) {
  std::vector<int> s(currents.size(), 0);
  std::int64_t u = 0;
  bool fired = false;
  for (std::size_t t = 0; t < currents.size(); ++t) {
    std::int64_t leaked = u;
    // floor division by 2^shift, written without the shift operator
    const std::int64_t div = std::int64_t{1} << shift;
    leaked = (leaked >= 0) ? leaked / div : -((-leaked + div - 1) / div);
    u = (fired ? 0 : leaked) + currents[t];
    fired = u >= threshold;
    s[t] = fired ? 1 : 0;
  }
  if (final_membrane) *final_membrane = fired ? 0 : u;
  return s;
}

/// Naive 3x3 convolution, padding 1, stride s, on [T, C, H, W] integers.
inline Dense conv3x3_oracle(const Dense& x, const Dense& w, const std::vector<std::int64_t>& bias, std::uint32_t stride = 1) {
  const auto T = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const auto O = w.shape[0];
  const std::uint32_t Ho = (H + 2 - 3) / stride + 1, Wo = (W + 2 - 3) / stride + 1;
  Dense out{{T, O, Ho, Wo}, std::vector<std::int64_t>(std::size_t{T} * O * Ho * Wo)};
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t o = 0; o < O; ++o)
      for (std::uint32_t y = 0; y < Ho; ++y)
        for (std::uint32_t xx = 0; xx < Wo; ++xx) {
          std::int64_t acc = bias.empty() ? 0 : bias[o];
          for (std::uint32_t c = 0; c < C; ++c)
            for (int ky = -1; ky <= 1; ++ky)
              for (int kx = -1; kx <= 1; ++kx) {
                const long iy = long(y * stride) + ky, ix = long(xx * stride) + kx;
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                acc += x.at4(t, c, std::uint32_t(iy), std::uint32_t(ix)) * w.at4(o, c, std::uint32_t(ky + 1), std::uint32_t(kx + 1));
              }
          out.at4(t, o, y, xx) = acc;
        }
  return out;
}

/// Naive matmul over the last axis: out[t][n][o] = b[o] + sum_d x[t][n][d] w[o][d].
inline Dense linear_oracle(const Dense& x, const Dense& w, const std::vector<std::int64_t>& bias) {
  const auto T = x.shape[0], N = x.shape[1], D = x.shape[2];
  const auto O = w.shape[0];
  Dense out{{T, N, O}, std::vector<std::int64_t>(std::size_t{T} * N * O)};
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t n = 0; n < N; ++n)
      for (std::uint32_t o = 0; o < O; ++o) {
        std::int64_t acc = bias.empty() ? 0 : bias[o];
        for (std::uint32_t d = 0; d < D; ++d) acc += x.at3(t, n, d) * w.v[std::size_t{o} * D + d];
        out.at3(t, n, o) = acc;
      }
  return out;
}

}  // namespace siaf::testing
