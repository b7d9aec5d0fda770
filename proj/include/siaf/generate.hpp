// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random models and images for testing and benchmarking.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "siaf/error.hpp"
#include "siaf/model.hpp"
#include "siaf/tensor.hpp"

namespace siaf {

enum class SizeClass : std::uint8_t { kTiny, kSmall, kPaper384 };

struct SizeSpec {
  std::string name;
  std::uint32_t blocks = 1;
  std::uint32_t dim = 16;
  std::uint32_t heads = 2;
  std::uint32_t mlp_ratio = 4;
  std::uint32_t in_channels = 3;
  std::uint32_t in_size = 8;
  std::uint32_t classes = 10;
};

inline SizeSpec size_spec(SizeClass c) {
  switch (c) {
    case SizeClass::kTiny: return {"tiny", 1, 16, 2, 4, 3, 8, 10};
    case SizeClass::kSmall: return {"small", 2, 32, 4, 4, 3, 16, 10};
    case SizeClass::kPaper384: return {"paper-384", 8, 384, 12, 4, 3, 32, 10};
  }
  throw ConfigError("unknown size class");
}

inline SizeClass parse_size_class(const std::string& s) {
  if (s == "tiny") return SizeClass::kTiny;
  if (s == "small") return SizeClass::kSmall;
  if (s == "paper-384") return SizeClass::kPaper384;
  throw ConfigError("unknown size class '" + s + "' (expected tiny, small or paper-384)");
}

namespace detail {

/// mt19937_64 with a modulo draw; identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  std::int64_t uniform(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(eng_() % span);
  }

 private:
  std::mt19937_64 eng_;
};

inline constexpr std::int32_t kWeightScale = -6;

inline QTensor weights(Rng& rng, Shape shape, int lo = -64, int hi = 63) {
  std::vector<std::int8_t> v(element_count(shape));
  for (auto& x : v) x = static_cast<std::int8_t>(rng.uniform(lo, hi));
  return QTensor(std::move(shape), std::move(v), kWeightScale);
}

inline AccTensor bias(Rng& rng, std::uint32_t n, std::int32_t scale, int lo, int hi) {
  std::vector<std::int32_t> v(n);
  for (auto& x : v) x = static_cast<std::int32_t>(rng.uniform(lo, hi));
  return AccTensor({n}, std::move(v), scale);
}

}  // namespace detail

/// Random model of the given size class. Thresholds are theta = 0.5 in each
/// layer's accumulator scale; weights are int8 at scale 2^-6.
inline ModelConfig generate_model(SizeClass size, std::uint64_t seed, std::uint32_t time_steps) {
  if (!valid_time_steps(time_steps)) throw ConfigError("time_steps must be 1, 2 or 4");
  const SizeSpec spec = size_spec(size);
  detail::Rng rng(seed);
  const std::int32_t ws = detail::kWeightScale;
  const LifParams lif{half_threshold_for_scale(ws), 2};

  ModelConfig cfg;
  cfg.time_steps = time_steps;
  cfg.in_channels = spec.in_channels;
  cfg.in_height = cfg.in_width = spec.in_size;

  const std::uint32_t D = spec.dim;
  const std::uint32_t widths[4] = {D / 8, D / 4, D / 2, D};
  std::uint32_t in = spec.in_channels;
  for (std::uint32_t s = 0; s < 4; ++s) {
    const std::string n = "tok.conv" + std::to_string(s);
    const bool enc = s == 0;
    const std::int32_t bscale = enc ? ws - 8 : ws;
    AccTensor b = enc ? detail::bias(rng, widths[s], bscale, -4096, 4096) : detail::bias(rng, widths[s], bscale, -16, 16);
    cfg.tokenizer.push_back(LayerSpec{ConvBn3x3{n, in, widths[s], 1, detail::weights(rng, {widths[s], in, 3, 3}), std::move(b)}});
    cfg.tokenizer.push_back(LayerSpec{Lif{"tok.lif" + std::to_string(s), enc ? LifParams{half_threshold_for_scale(bscale), 2} : lif}});
    if (s == 1 || s == 3) cfg.tokenizer.push_back(LayerSpec{MaxPool2x2{"tok.pool" + std::to_string(s)}});
    in = widths[s];
  }

  for (std::uint32_t i = 0; i < spec.blocks; ++i) {
    const std::string b = "blk" + std::to_string(i);
    Ssa s;
    s.name = b + ".attn.ssa";
    s.dim = D;
    s.heads = spec.heads;
    s.w_q = detail::weights(rng, {D, D});
    s.w_k = detail::weights(rng, {D, D});
    s.w_v = detail::weights(rng, {D, D});
    s.w_proj = detail::weights(rng, {D, D});
    s.b_q = detail::bias(rng, D, ws, -16, 16);
    s.b_k = detail::bias(rng, D, ws, -16, 16);
    s.b_v = detail::bias(rng, D, ws, -16, 16);
    s.b_proj = detail::bias(rng, D, ws, -16, 16);
    s.lif_q = s.lif_k = s.lif_v = s.lif_proj = lif;
    s.lif_attn = LifParams{1, 2};
    s.scale_shift = 3;
    Block blk;
    blk.attention = IandResidual{b + ".attn", {LayerSpec{std::move(s)}}};
    const std::uint32_t H = D * spec.mlp_ratio;
    blk.mlp = IandResidual{b + ".mlp",
                           {LayerSpec{Linear{b + ".mlp.fc1", D, H, detail::weights(rng, {H, D}), detail::bias(rng, H, ws, -16, 16)}},
                            LayerSpec{Lif{b + ".mlp.lif1", lif}},
                            LayerSpec{Linear{b + ".mlp.fc2", H, D, detail::weights(rng, {D, H}), detail::bias(rng, D, ws, -16, 16)}},
                            LayerSpec{Lif{b + ".mlp.lif2", lif}}}};
    cfg.blocks.push_back(std::move(blk));
  }

  cfg.head.name = "head";
  cfg.head.classes = spec.classes;
  cfg.head.dim = D;
  cfg.head.weights = detail::weights(rng, {spec.classes, D});
  cfg.head.bias = detail::bias(rng, spec.classes, ws, -64, 64);
  validate(cfg);
  return cfg;
}

inline ByteImage generate_image(std::uint32_t channels, std::uint32_t height, std::uint32_t width, std::uint64_t seed) {
  detail::Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  ByteImage img(channels, height, width);
  for (auto& p : img.mutable_data()) p = static_cast<std::uint8_t>(rng.uniform(0, 255));
  return img;
}

inline ByteImage generate_image(const ModelConfig& cfg, std::uint64_t seed) {
  return generate_image(cfg.in_channels, cfg.in_height, cfg.in_width, seed);
}

}  // namespace siaf
