// SPDX-License-Identifier: Apache-2.0
//
// Golden functional model. Naive loops, one layer and one time step at a
// time; this is the oracle the accelerator simulator is checked against.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "siaf/lif.hpp"
#include "siaf/model.hpp"
#include "siaf/tensor.hpp"

namespace siaf {

/// Activations are spikes, except when the residual operator is switched to
/// addition (test-only), which produces small integers.
using Activation = std::variant<SpikeTensor, AccTensor>;

enum class TraceKind : std::uint8_t {
  kCurrents,    // pre-LIF accumulator values
  kActivation,  // values consumed by the next layer
};

struct TraceEntry {
  std::string name;
  TraceKind kind = TraceKind::kActivation;
  Activation value;
};

struct LayerTrace {
  std::vector<TraceEntry> entries;

  void add(std::string name, TraceKind kind, Activation v) {
    entries.push_back(TraceEntry{std::move(name), kind, std::move(v)});
  }
};

/// Tally of arithmetic classes executed by the attention path.
struct OpInventory {
  std::uint64_t adds = 0;
  std::uint64_t and_popcounts = 0;
  std::uint64_t shifts = 0;
  std::uint64_t compares = 0;
  std::uint64_t multiplies = 0;
  std::uint64_t divides = 0;
  std::uint64_t exponentials = 0;
};

enum class ResidualMode : std::uint8_t { kIand, kAdd };

struct ForwardOptions {
  ResidualMode residual = ResidualMode::kIand;
};

inline const Shape& activation_shape(const Activation& a) {
  return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, a);
}

inline std::int64_t activation_value(const Activation& a, std::size_t flat) {
  if (auto* s = std::get_if<SpikeTensor>(&a)) return s->get_flat(flat) ? 1 : 0;
  return std::get<AccTensor>(a).data()[flat];
}

inline bool is_binary(const Activation& a) {
  if (std::holds_alternative<SpikeTensor>(a)) return true;
  for (auto v : std::get<AccTensor>(a).data()) {
    if (v != 0 && v != 1) return false;
  }
  return true;
}

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

inline AccTensor conv3x3_generic(const Activation& x, const QTensor& w, const AccTensor& b, std::uint32_t stride) {
  const Shape& s = activation_shape(x);
  require_rank(s, 4, "conv_bn_3x3");
  const std::uint32_t T = s[0], C = s[1], H = s[2], W = s[3];
  if (w.shape().size() != 4 || w.shape()[1] != C || w.shape()[2] != 3 || w.shape()[3] != 3) {
    throw ShapeError("conv_bn_3x3: weight shape " + shape_str(w.shape()) + " incompatible with input " + shape_str(s));
  }
  const std::uint32_t O = w.shape()[0];
  if (b.shape() != Shape{O}) throw ShapeError("conv_bn_3x3: bias shape mismatch");
  if (stride == 0) throw ShapeError("conv_bn_3x3: stride must be positive");
  const std::uint32_t Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
  AccTensor out({T, O, Ho, Wo}, w.scale_exp());
  auto od = out.mutable_data();
  const auto wd = w.data();
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t o = 0; o < O; ++o)
      for (std::uint32_t oy = 0; oy < Ho; ++oy)
        for (std::uint32_t ox = 0; ox < Wo; ++ox) {
          std::int64_t acc = b.data()[o];
          for (std::uint32_t c = 0; c < C; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = static_cast<int>(oy * stride) + ky - 1;
                const int ix = static_cast<int>(ox * stride) + kx - 1;
                if (iy < 0 || ix < 0 || iy >= static_cast<int>(H) || ix >= static_cast<int>(W)) continue;
                const std::size_t xi = ((std::size_t{t} * C + c) * H + iy) * W + ix;
                const std::int64_t v = activation_value(x, xi);
                if (v == 0) continue;
                acc += v * wd[((std::size_t{o} * C + c) * 3 + ky) * 3 + kx];
              }
          od[((std::size_t{t} * O + o) * Ho + oy) * Wo + ox] = checked_i32(acc, "conv_bn_3x3");
        }
  return out;
}

// Shared by pointwise conv ([T, C, P] with P = H*W, channel-major) and
// linear ([T, N, D], feature-minor).
inline void pointwise_generic(const Activation& x, const QTensor& w, const AccTensor& b, bool channel_major,
                              std::uint32_t T, std::uint32_t C, std::uint32_t P, std::span<std::int32_t> out,
                              const char* op, OpInventory* inv) {
  if (w.shape() != Shape{w.shape()[0], C} || w.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": weight shape " + shape_str(w.shape()) + " incompatible with " + std::to_string(C) + " inputs");
  }
  const std::uint32_t O = w.shape()[0];
  if (b.shape() != Shape{O}) throw ShapeError(std::string(op) + ": bias shape mismatch");
  const auto wd = w.data();
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t p = 0; p < P; ++p)
      for (std::uint32_t o = 0; o < O; ++o) {
        std::int64_t acc = b.data()[o];
        for (std::uint32_t c = 0; c < C; ++c) {
          const std::size_t xi = channel_major ? (std::size_t{t} * C + c) * P + p : (std::size_t{t} * P + p) * C + c;
          const std::int64_t v = activation_value(x, xi);
          if (v == 0) continue;
          if (v == 1) {
            acc += wd[std::size_t{o} * C + c];
            if (inv) ++inv->adds;
          } else {
            acc += v * wd[std::size_t{o} * C + c];
            if (inv) ++inv->multiplies;
          }
        }
        const std::size_t oi = channel_major ? (std::size_t{t} * O + o) * P + p : (std::size_t{t} * P + p) * O + o;
        out[oi] = checked_i32(acc, op);
      }
}

inline AccTensor linear_generic(const Activation& x, const QTensor& w, const AccTensor& b, OpInventory* inv = nullptr) {
  const Shape& s = activation_shape(x);
  require_rank(s, 3, "linear");
  if (w.shape().size() != 2) throw ShapeError("linear: weights must be rank 2");
  AccTensor out({s[0], s[1], w.shape()[0]}, w.scale_exp());
  pointwise_generic(x, w, b, false, s[0], s[2], s[1], out.mutable_data(), "linear", inv);
  return out;
}

}  // namespace detail

/// 3x3 convolution, padding 1, on binary input [T, C, H, W]. Each time step
/// is independent; binary inputs make every product a select-and-add.
inline AccTensor conv_bn_3x3(const SpikeTensor& x, const QTensor& w, const AccTensor& b, std::uint32_t stride = 1) {
  return detail::conv3x3_generic(Activation{x}, w, b, stride);
}

/// Encoding layer: integer convolution over the 8-bit image, repeated at every
/// time step. Accumulator scale is the weight scale minus 8 (pixel / 256).
inline AccTensor conv_bn_3x3_image(const ByteImage& img, const QTensor& w, const AccTensor& b, std::uint32_t stride,
                                   std::uint32_t time_steps) {
  const std::uint32_t C = img.channels(), H = img.height(), W = img.width();
  AccTensor pixels({1, C, H, W}, 0);
  auto pd = pixels.mutable_data();
  for (std::size_t i = 0; i < pd.size(); ++i) pd[i] = img.data()[i];
  const AccTensor one = detail::conv3x3_generic(Activation{pixels}, w, b, stride);
  Shape s = one.shape();
  s[0] = time_steps;
  AccTensor out(s, w.scale_exp() - 8);
  const std::size_t n = one.size();
  for (std::uint32_t t = 0; t < time_steps; ++t) {
    std::copy(one.data().begin(), one.data().end(), out.mutable_data().begin() + static_cast<std::ptrdiff_t>(t * n));
  }
  return out;
}

inline AccTensor conv_bn_1x1(const SpikeTensor& x, const QTensor& w, const AccTensor& b) {
  const Shape& s = x.shape();
  detail::require_rank(s, 4, "conv_bn_1x1");
  if (w.shape().size() != 2) throw ShapeError("conv_bn_1x1: weights must be rank 2");
  AccTensor out({s[0], w.shape()[0], s[2], s[3]}, w.scale_exp());
  detail::pointwise_generic(Activation{x}, w, b, true, s[0], s[1], s[2] * s[3], out.mutable_data(), "conv_bn_1x1", nullptr);
  return out;
}

/// Per-token linear layer on [T, N, D].
inline AccTensor linear(const SpikeTensor& x, const QTensor& w, const AccTensor& b) {
  return detail::linear_generic(Activation{x}, w, b);
}

/// x AND NOT y on packed words.
inline SpikeTensor iand(const SpikeTensor& x, const SpikeTensor& y) {
  if (x.shape() != y.shape()) throw ShapeError("iand: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  SpikeTensor out(x.shape());
  auto o = out.mutable_words();
  const auto xw = x.words();
  const auto yw = y.words();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xw[i] & ~yw[i];
  return out;
}

/// 2x2 max pooling, stride 2, on [T, C, H, W]. For spikes this is an OR.
inline Activation maxpool2x2(const Activation& x) {
  const Shape& s = activation_shape(x);
  detail::require_rank(s, 4, "maxpool2x2");
  const std::uint32_t T = s[0], C = s[1], H = s[2] / 2, W = s[3] / 2;
  const Shape os{T, C, H, W};
  auto pooled = [&](std::uint32_t t, std::uint32_t c, std::uint32_t y, std::uint32_t xx) {
    std::int64_t m = std::numeric_limits<std::int64_t>::min();
    for (std::uint32_t dy = 0; dy < 2; ++dy)
      for (std::uint32_t dx = 0; dx < 2; ++dx) {
        const std::size_t i = ((std::size_t{t} * C + c) * s[2] + 2 * y + dy) * s[3] + 2 * xx + dx;
        m = std::max(m, activation_value(x, i));
      }
    return m;
  };
  if (std::holds_alternative<SpikeTensor>(x)) {
    SpikeTensor out(os);
    std::size_t i = 0;
    for (std::uint32_t t = 0; t < T; ++t)
      for (std::uint32_t c = 0; c < C; ++c)
        for (std::uint32_t y = 0; y < H; ++y)
          for (std::uint32_t xx = 0; xx < W; ++xx, ++i) out.set_flat(i, pooled(t, c, y, xx) != 0);
    return out;
  }
  AccTensor out(os, std::get<AccTensor>(x).scale_exp());
  auto od = out.mutable_data();
  std::size_t i = 0;
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t c = 0; c < C; ++c)
      for (std::uint32_t y = 0; y < H; ++y)
        for (std::uint32_t xx = 0; xx < W; ++xx, ++i) od[i] = static_cast<std::int32_t>(pooled(t, c, y, xx));
  return out;
}

inline SpikeTensor maxpool2x2(const SpikeTensor& x) { return std::get<SpikeTensor>(maxpool2x2(Activation{x})); }

/// [T, C, H, W] -> [T, H*W, C]; token n = y * W + x.
inline Activation flatten_tokens(const Activation& x) {
  const Shape& s = activation_shape(x);
  detail::require_rank(s, 4, "flatten_tokens");
  const std::uint32_t T = s[0], C = s[1], P = s[2] * s[3];
  const Shape os{T, P, C};
  if (auto* sp = std::get_if<SpikeTensor>(&x)) {
    SpikeTensor out(os);
    for (std::uint32_t t = 0; t < T; ++t)
      for (std::uint32_t c = 0; c < C; ++c)
        for (std::uint32_t p = 0; p < P; ++p)
          if (sp->get_flat((std::size_t{t} * C + c) * P + p)) out.set_flat((std::size_t{t} * P + p) * C + c, true);
    return out;
  }
  const auto& a = std::get<AccTensor>(x);
  AccTensor out(os, a.scale_exp());
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t c = 0; c < C; ++c)
      for (std::uint32_t p = 0; p < P; ++p)
        out.mutable_data()[(std::size_t{t} * P + p) * C + c] = a.data()[(std::size_t{t} * C + c) * P + p];
  return out;
}

struct SsaResult {
  SpikeTensor out;
  LayerTrace trace;  // q/k/v/attn/proj currents and spikes
};

/// Spiking self-attention: binary Q, K, V; A = (Q K^T) V per head and time
/// step, then an arithmetic shift, LIF, projection and LIF. No softmax.
inline SsaResult ssa(const Activation& x, const Ssa& spec, OpInventory* inv = nullptr) {
  const Shape& s = activation_shape(x);
  detail::require_rank(s, 3, "ssa");
  const std::uint32_t T = s[0], N = s[1], D = s[2];
  if (D != spec.dim) throw ShapeError("ssa: input dim " + std::to_string(D) + " != " + std::to_string(spec.dim));
  if (spec.heads == 0 || D % spec.heads != 0) throw ShapeError("ssa: dim not divisible by heads");
  const std::uint32_t dh = D / spec.heads;

  SsaResult r;
  auto project = [&](const QTensor& w, const AccTensor& b, const LifParams& p, const char* tag) {
    AccTensor cur = detail::linear_generic(x, w, b, inv);
    LifResult lif = lif_seq(cur, p);
    if (inv) inv->compares += cur.size();
    r.trace.add(spec.name + "." + tag + "_cur", TraceKind::kCurrents, cur);
    r.trace.add(spec.name + "." + tag, TraceKind::kActivation, lif.spikes);
    return lif.spikes;
  };
  const SpikeTensor q = project(spec.w_q, spec.b_q, spec.lif_q, "q");
  const SpikeTensor k = project(spec.w_k, spec.b_k, spec.lif_k, "k");
  const SpikeTensor v = project(spec.w_v, spec.b_v, spec.lif_v, "v");

  AccTensor attn_cur({T, N, D}, 0);
  auto ad = attn_cur.mutable_data();
  std::vector<std::int64_t> scores(std::size_t{N} * N);
  for (std::uint32_t t = 0; t < T; ++t) {
    for (std::uint32_t h = 0; h < spec.heads; ++h) {
      const std::uint32_t d0 = h * dh;
      for (std::uint32_t n = 0; n < N; ++n)
        for (std::uint32_t m = 0; m < N; ++m) {
          std::int64_t cnt = 0;
          for (std::uint32_t d = 0; d < dh; ++d) {
            cnt += (q.get_flat((std::size_t{t} * N + n) * D + d0 + d) && k.get_flat((std::size_t{t} * N + m) * D + d0 + d)) ? 1 : 0;
          }
          if (inv) ++inv->and_popcounts;
          scores[std::size_t{n} * N + m] = cnt;
        }
      for (std::uint32_t n = 0; n < N; ++n)
        for (std::uint32_t d = 0; d < dh; ++d) {
          std::int64_t acc = 0;
          for (std::uint32_t m = 0; m < N; ++m) {
            if (v.get_flat((std::size_t{t} * N + m) * D + d0 + d)) {
              acc += scores[std::size_t{n} * N + m];
              if (inv) ++inv->adds;
            }
          }
          const std::int32_t a = checked_i32(acc, "ssa attention");
          ad[(std::size_t{t} * N + n) * D + d0 + d] = a >> spec.scale_shift;
          if (inv) ++inv->shifts;
        }
    }
  }
  r.trace.add(spec.name + ".attn_cur", TraceKind::kCurrents, attn_cur);
  const LifResult attn = lif_seq(attn_cur, spec.lif_attn);
  if (inv) inv->compares += attn_cur.size();
  r.trace.add(spec.name + ".attn", TraceKind::kActivation, attn.spikes);

  AccTensor proj_cur = detail::linear_generic(Activation{attn.spikes}, spec.w_proj, spec.b_proj, inv);
  const LifResult proj = lif_seq(proj_cur, spec.lif_proj);
  if (inv) inv->compares += proj_cur.size();
  r.trace.add(spec.name + ".proj_cur", TraceKind::kCurrents, proj_cur);
  r.trace.add(spec.name + ".proj", TraceKind::kActivation, proj.spikes);
  r.out = proj.spikes;
  return r;
}

/// logits = W . rate + bias, rate[d] = spike count over time steps and tokens.
inline AccTensor classifier_head(const Activation& x, const ClassifierHead& head) {
  const Shape& s = activation_shape(x);
  detail::require_rank(s, 3, "classifier_head");
  const std::uint32_t T = s[0], N = s[1], D = s[2];
  if (head.weights.shape() != Shape{head.classes, D}) throw ShapeError("classifier_head: weight shape mismatch");
  if (head.bias.shape() != Shape{head.classes}) throw ShapeError("classifier_head: bias shape mismatch");
  std::vector<std::int64_t> rate(D, 0);
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t n = 0; n < N; ++n)
      for (std::uint32_t d = 0; d < D; ++d) rate[d] += activation_value(x, (std::size_t{t} * N + n) * D + d);
  AccTensor logits({head.classes}, head.weights.scale_exp());
  for (std::uint32_t c = 0; c < head.classes; ++c) {
    std::int64_t acc = head.bias.data()[c];
    for (std::uint32_t d = 0; d < D; ++d) acc += rate[d] * head.weights.data()[std::size_t{c} * D + d];
    logits.mutable_data()[c] = checked_i32(acc, "classifier_head");
  }
  return logits;
}

namespace detail {

inline Activation run_layers(const Activation& in, const std::vector<LayerSpec>& layers, LayerTrace& trace,
                             const ForwardOptions& opts);

inline Activation run_layer(const Activation& x, const LayerSpec& layer, LayerTrace& trace, const ForwardOptions& opts) {
  return std::visit(
      [&](const auto& l) -> Activation {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, ConvBn3x3>) {
          AccTensor cur = conv3x3_generic(x, l.weights, l.bias, l.stride);
          trace.add(l.name, TraceKind::kCurrents, cur);
          return cur;
        } else if constexpr (std::is_same_v<T, ConvBn1x1>) {
          const Shape& s = activation_shape(x);
          require_rank(s, 4, "conv_bn_1x1");
          AccTensor cur({s[0], l.out_ch, s[2], s[3]}, l.weights.scale_exp());
          pointwise_generic(x, l.weights, l.bias, true, s[0], s[1], s[2] * s[3], cur.mutable_data(), "conv_bn_1x1", nullptr);
          trace.add(l.name, TraceKind::kCurrents, cur);
          return cur;
        } else if constexpr (std::is_same_v<T, Linear>) {
          AccTensor cur = linear_generic(x, l.weights, l.bias);
          trace.add(l.name, TraceKind::kCurrents, cur);
          return cur;
        } else if constexpr (std::is_same_v<T, Lif>) {
          const auto* cur = std::get_if<AccTensor>(&x);
          if (!cur) throw ShapeError(l.name + ": Lif expects accumulator currents");
          SpikeTensor s = lif_seq(*cur, l.params).spikes;
          trace.add(l.name, TraceKind::kActivation, s);
          return s;
        } else if constexpr (std::is_same_v<T, MaxPool2x2>) {
          Activation y = maxpool2x2(x);
          trace.add(l.name, TraceKind::kActivation, y);
          return y;
        } else if constexpr (std::is_same_v<T, Ssa>) {
          SsaResult r = ssa(x, l);
          for (auto& e : r.trace.entries) trace.entries.push_back(std::move(e));
          return r.out;
        } else {
          static_assert(std::is_same_v<T, IandResidual>);
          const Activation y = run_layers(x, l.inner, trace, opts);
          Activation out;
          if (opts.residual == ResidualMode::kIand) {
            const auto* xs = std::get_if<SpikeTensor>(&x);
            const auto* ys = std::get_if<SpikeTensor>(&y);
            if (!xs || !ys) throw ShapeError(l.name + ": iand needs binary operands");
            out = iand(*xs, *ys);
          } else {
            // Additive residual, test-only contrast to IAND.
            const Shape& s = activation_shape(x);
            AccTensor sum(s, 0);
            for (std::size_t i = 0; i < sum.size(); ++i) {
              sum.mutable_data()[i] = checked_i32(activation_value(x, i) + activation_value(y, i), "residual add");
            }
            out = std::move(sum);
          }
          trace.add(l.name, TraceKind::kActivation, out);
          return out;
        }
      },
      layer.op);
}

inline Activation run_layers(const Activation& in, const std::vector<LayerSpec>& layers, LayerTrace& trace,
                             const ForwardOptions& opts) {
  Activation x = in;
  for (const auto& layer : layers) x = run_layer(x, layer, trace, opts);
  return x;
}

}  // namespace detail

/// iand(x, inner(x)). The inner branch must end in a Lif layer.
inline SpikeTensor iand_residual(const SpikeTensor& x, const std::vector<LayerSpec>& inner, LayerTrace* trace = nullptr) {
  LayerTrace local;
  const Activation y = detail::run_layers(Activation{x}, inner, trace ? *trace : local, ForwardOptions{});
  const auto* ys = std::get_if<SpikeTensor>(&y);
  if (!ys) throw ShapeError("iand_residual: inner branch must end with a Lif layer");
  return iand(x, *ys);
}

/// Encoding layer plus the remaining tokenizer stages; output [T, C, H, W].
inline SpikeTensor tokenizer_forward(const ByteImage& img, const ModelConfig& cfg, LayerTrace* trace = nullptr) {
  LayerTrace local;
  LayerTrace& tr = trace ? *trace : local;
  if (cfg.tokenizer.empty()) throw ConfigError("empty tokenizer");
  const auto* enc = std::get_if<ConvBn3x3>(&cfg.tokenizer.front().op);
  if (!enc) throw ConfigError("first tokenizer layer must be ConvBn3x3");
  if (img.channels() != cfg.in_channels || img.height() != cfg.in_height || img.width() != cfg.in_width) {
    throw ShapeError("input image shape " + shape_str(img.shape()) + " does not match model input");
  }
  AccTensor cur = conv_bn_3x3_image(img, enc->weights, enc->bias, enc->stride, cfg.time_steps);
  tr.add(enc->name, TraceKind::kCurrents, cur);
  std::vector<LayerSpec> rest(cfg.tokenizer.begin() + 1, cfg.tokenizer.end());
  Activation out = detail::run_layers(Activation{std::move(cur)}, rest, tr, ForwardOptions{});
  auto* s = std::get_if<SpikeTensor>(&out);
  if (!s) throw ConfigError("tokenizer must end with a Lif layer");
  return *s;
}

struct ForwardResult {
  AccTensor logits;
  LayerTrace trace;
};

/// Tokenizer -> blocks (attention then MLP, each with an IAND residual) -> head.
inline ForwardResult model_forward(const ByteImage& img, const ModelConfig& cfg, const ForwardOptions& opts = {}) {
  ForwardResult r;
  Activation x = flatten_tokens(Activation{tokenizer_forward(img, cfg, &r.trace)});
  for (const auto& b : cfg.blocks) {
    x = detail::run_layer(x, LayerSpec{b.attention}, r.trace, opts);
    x = detail::run_layer(x, LayerSpec{b.mlp}, r.trace, opts);
  }
  r.logits = classifier_head(x, cfg.head);
  r.trace.add(cfg.head.name, TraceKind::kCurrents, r.logits);
  return r;
}

}  // namespace siaf
