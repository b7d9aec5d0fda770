// SPDX-License-Identifier: Apache-2.0
//
// Layer and model descriptions for the spiking transformer. Weights are
// already BN-folded; biases live in the accumulator scale of their layer.
#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "siaf/error.hpp"
#include "siaf/lif.hpp"
#include "siaf/tensor.hpp"

namespace siaf {

/// 3x3 convolution with padding 1. Weights [out, in, 3, 3], bias [out].
struct ConvBn3x3 {
  std::string name;
  std::uint32_t in_ch = 0;
  std::uint32_t out_ch = 0;
  std::uint32_t stride = 1;
  QTensor weights;
  AccTensor bias;
};

/// Pointwise convolution on [T, C, H, W]. Weights [out, in], bias [out].
struct ConvBn1x1 {
  std::string name;
  std::uint32_t in_ch = 0;
  std::uint32_t out_ch = 0;
  QTensor weights;
  AccTensor bias;
};

/// Per-token linear layer on [T, N, D]. Weights [out, in], bias [out].
struct Linear {
  std::string name;
  std::uint32_t in_dim = 0;
  std::uint32_t out_dim = 0;
  QTensor weights;
  AccTensor bias;
};

struct MaxPool2x2 {
  std::string name;
};

struct Lif {
  std::string name;
  LifParams params;
};

struct LayerSpec;

/// out = x AND NOT inner(x).
struct IandResidual {
  std::string name;
  std::vector<LayerSpec> inner;
};

/// Softmax-free spiking self-attention on [T, N, D].
struct Ssa {
  std::string name;
  std::uint32_t dim = 0;
  std::uint32_t heads = 1;
  QTensor w_q, w_k, w_v, w_proj;  // [dim, dim]
  AccTensor b_q, b_k, b_v, b_proj;  // [dim]
  LifParams lif_q, lif_k, lif_v, lif_attn, lif_proj;
  std::uint32_t scale_shift = 3;
};

/// Spike-count aggregation over time and tokens followed by a linear layer.
struct ClassifierHead {
  std::string name = "head";
  std::uint32_t classes = 0;
  std::uint32_t dim = 0;
  QTensor weights;  // [classes, dim]
  AccTensor bias;   // [classes]
};

struct LayerSpec {
  std::variant<ConvBn3x3, ConvBn1x1, Linear, MaxPool2x2, Lif, IandResidual, Ssa> op;

  const std::string& name() const {
    return std::visit([](const auto& l) -> const std::string& { return l.name; }, op);
  }
};

struct Block {
  IandResidual attention;  // inner = { Ssa }
  IandResidual mlp;        // inner = { Linear, Lif, Linear, Lif }
};

struct ModelConfig {
  std::uint32_t time_steps = 4;
  std::uint32_t in_channels = 3;
  std::uint32_t in_height = 0;
  std::uint32_t in_width = 0;
  std::vector<LayerSpec> tokenizer;  // tokenizer[0] is the encoding layer
  std::vector<Block> blocks;
  ClassifierHead head;
};

namespace detail {

struct ShapeCursor {
  bool tokens = false;  // false: [C, H, W]; true: [N, D]
  std::uint32_t c = 0, h = 0, w = 0;  // tokens: w = N, c = D
  bool pending_lif = false;  // last op produced currents
};

inline void expect_weights(const QTensor& w, const Shape& shape, const std::string& name) {
  if (w.shape() != shape) {
    throw ConfigError(name + ": weight shape " + shape_str(w.shape()) + " != expected " + shape_str(shape));
  }
}
inline void expect_bias(const AccTensor& b, std::uint32_t n, const std::string& name) {
  if (b.shape() != Shape{n}) {
    throw ConfigError(name + ": bias shape " + shape_str(b.shape()) + " != expected [" + std::to_string(n) + "]");
  }
}

inline void check_layer(const LayerSpec& layer, ShapeCursor& cur, bool first);

inline void check_layers(const std::vector<LayerSpec>& layers, ShapeCursor& cur, bool first) {
  for (std::size_t i = 0; i < layers.size(); ++i) check_layer(layers[i], cur, first && i == 0);
}

inline void check_layer(const LayerSpec& layer, ShapeCursor& cur, bool first) {
  const std::string& name = layer.name();
  if (!first && cur.pending_lif && !std::holds_alternative<Lif>(layer.op)) {
    throw ConfigError(name + ": layer consumes accumulator currents; a Lif layer must come first");
  }
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, ConvBn3x3>) {
          if (cur.tokens) throw ConfigError(name + ": conv3x3 needs [C,H,W] activations");
          if (l.in_ch != cur.c) throw ConfigError(name + ": in_ch " + std::to_string(l.in_ch) + " != " + std::to_string(cur.c));
          if (l.stride != 1 && l.stride != 2) throw ConfigError(name + ": stride must be 1 or 2");
          expect_weights(l.weights, {l.out_ch, l.in_ch, 3, 3}, name);
          expect_bias(l.bias, l.out_ch, name);
          cur.c = l.out_ch;
          cur.h = (cur.h - 1) / l.stride + 1;
          cur.w = (cur.w - 1) / l.stride + 1;
          cur.pending_lif = true;
        } else if constexpr (std::is_same_v<T, ConvBn1x1>) {
          if (cur.tokens) throw ConfigError(name + ": conv1x1 needs [C,H,W] activations");
          if (l.in_ch != cur.c) throw ConfigError(name + ": in_ch mismatch");
          expect_weights(l.weights, {l.out_ch, l.in_ch}, name);
          expect_bias(l.bias, l.out_ch, name);
          cur.c = l.out_ch;
          cur.pending_lif = true;
        } else if constexpr (std::is_same_v<T, Linear>) {
          if (!cur.tokens) throw ConfigError(name + ": linear needs [N,D] activations");
          if (l.in_dim != cur.c) throw ConfigError(name + ": in_dim " + std::to_string(l.in_dim) + " != " + std::to_string(cur.c));
          expect_weights(l.weights, {l.out_dim, l.in_dim}, name);
          expect_bias(l.bias, l.out_dim, name);
          cur.c = l.out_dim;
          cur.pending_lif = true;
        } else if constexpr (std::is_same_v<T, MaxPool2x2>) {
          if (cur.tokens) throw ConfigError(name + ": maxpool needs [C,H,W] activations");
          if (cur.h < 2 || cur.w < 2) throw ConfigError(name + ": spatial size too small to pool");
          cur.h /= 2;
          cur.w /= 2;
        } else if constexpr (std::is_same_v<T, Lif>) {
          if (!cur.pending_lif) throw ConfigError(name + ": Lif must follow a conv/linear layer");
          l.params.validate();
          cur.pending_lif = false;
        } else if constexpr (std::is_same_v<T, IandResidual>) {
          ShapeCursor inner = cur;
          check_layers(l.inner, inner, false);
          if (inner.pending_lif || l.inner.empty()) throw ConfigError(name + ": residual branch must end with a Lif layer");
          if (inner.tokens != cur.tokens || inner.c != cur.c || inner.h != cur.h || inner.w != cur.w) {
            throw ConfigError(name + ": residual branch changes the activation shape");
          }
        } else if constexpr (std::is_same_v<T, Ssa>) {
          if (!cur.tokens) throw ConfigError(name + ": ssa needs [N,D] activations");
          if (l.dim != cur.c) throw ConfigError(name + ": dim mismatch");
          if (l.heads == 0 || l.dim % l.heads != 0) throw ConfigError(name + ": dim not divisible by heads");
          for (const QTensor* w : {&l.w_q, &l.w_k, &l.w_v, &l.w_proj}) expect_weights(*w, {l.dim, l.dim}, name);
          for (const AccTensor* b : {&l.b_q, &l.b_k, &l.b_v, &l.b_proj}) expect_bias(*b, l.dim, name);
          for (const LifParams* p : {&l.lif_q, &l.lif_k, &l.lif_v, &l.lif_attn, &l.lif_proj}) p->validate();
          if (l.scale_shift > 30) throw ConfigError(name + ": scale_shift too large");
        }
      },
      layer.op);
}

}  // namespace detail

/// Checks channel chaining, weight shapes and structural rules.
inline void validate(const ModelConfig& cfg) {
  if (!valid_time_steps(cfg.time_steps)) throw ConfigError("time_steps must be 1, 2 or 4");
  if (cfg.in_channels == 0 || cfg.in_height == 0 || cfg.in_width == 0) throw ConfigError("input shape must be non-empty");
  if (cfg.tokenizer.empty() || !std::holds_alternative<ConvBn3x3>(cfg.tokenizer.front().op)) {
    throw ConfigError("first tokenizer layer must be the ConvBn3x3 encoding layer");
  }
  detail::ShapeCursor cur{false, cfg.in_channels, cfg.in_height, cfg.in_width, false};
  detail::check_layers(cfg.tokenizer, cur, true);
  if (cur.pending_lif) throw ConfigError("tokenizer must end with a Lif layer");
  cur = detail::ShapeCursor{true, cur.c, 1, cur.h * cur.w, false};
  for (const auto& b : cfg.blocks) {
    if (b.attention.inner.size() != 1 || !std::holds_alternative<Ssa>(b.attention.inner[0].op)) {
      throw ConfigError(b.attention.name + ": attention branch must hold exactly one Ssa layer");
    }
    detail::check_layer(LayerSpec{b.attention}, cur, false);
    detail::check_layer(LayerSpec{b.mlp}, cur, false);
  }
  const auto& h = cfg.head;
  if (h.dim != cur.c) throw ConfigError("head dim " + std::to_string(h.dim) + " != embedding dim " + std::to_string(cur.c));
  detail::expect_weights(h.weights, {h.classes, h.dim}, h.name);
  detail::expect_bias(h.bias, h.classes, h.name);
}

/// Token grid produced by the tokenizer: {tokens, embedding dim}.
inline std::pair<std::uint32_t, std::uint32_t> token_shape(const ModelConfig& cfg) {
  detail::ShapeCursor cur{false, cfg.in_channels, cfg.in_height, cfg.in_width, false};
  detail::check_layers(cfg.tokenizer, cur, true);
  return {cur.h * cur.w, cur.c};
}

}  // namespace siaf
