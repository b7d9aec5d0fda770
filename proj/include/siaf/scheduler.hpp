// SPDX-License-Identifier: Apache-2.0
//
// Compiles a model into per-layer tile-job plans and executes them on the
// dataflow model. Spiking layers run on the PE array with a fused LIF;
// pooling, IAND and the classifier reduction run on an 8-lane vector unit.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "siaf/accel.hpp"
#include "siaf/error.hpp"
#include "siaf/memory.hpp"
#include "siaf/model.hpp"
#include "siaf/reference.hpp"
#include "siaf/tensor.hpp"

namespace siaf {

enum class StepKind : std::uint8_t {
  kEncode,         // 8-bit image conv via bitplanes + LIF
  kConv3x3,        // + LIF
  kConv1x1,        // + LIF
  kLinear,         // + LIF, on tokens
  kSsaKv,          // K^T V for one head, result kept in temp SRAM
  kSsaQm,          // Q (K^T V) for one head, shift + attention LIF
  kMaxPool,        // vector unit
  kFlatten,        // layout only
  kResidualBegin,  // saves the residual input
  kIand,           // vector unit
  kHead,           // vector unit: spike counts and dot products
};

inline const char* step_kind_name(StepKind k) {
  switch (k) {
    case StepKind::kEncode: return "encode";
    case StepKind::kConv3x3: return "conv3x3";
    case StepKind::kConv1x1: return "conv1x1";
    case StepKind::kLinear: return "linear";
    case StepKind::kSsaKv: return "ssa_kv";
    case StepKind::kSsaQm: return "ssa_qm";
    case StepKind::kMaxPool: return "maxpool";
    case StepKind::kFlatten: return "flatten";
    case StepKind::kResidualBegin: return "residual";
    case StepKind::kIand: return "iand";
    case StepKind::kHead: return "head";
  }
  return "?";
}

/// Which SSA register a linear step reads from and writes to.
enum class SsaRole : std::uint8_t { kNone, kQ, kK, kV, kProj };

struct LayerPlan {
  StepKind kind = StepKind::kConv3x3;
  std::string name;      // trace entry of the currents (or of the activation for vector steps)
  std::string lif_name;  // trace entry of the fused LIF output
  SsaRole role = SsaRole::kNone;
  const QTensor* weights = nullptr;
  const AccTensor* bias = nullptr;
  const LifParams* lif = nullptr;
  const Ssa* ssa = nullptr;
  const ClassifierHead* head = nullptr;
  std::uint32_t head_index = 0;
  bool last_head = false;

  PeLayerShape shape;  // PE steps
  std::vector<TileJob> jobs;
  std::uint64_t vector_elements = 0;  // vector steps, per inference
  std::uint64_t temp_words = 0;       // partial-sum footprint
  std::uint64_t operand_base = 0;     // temp address of K^T V results
  std::uint64_t membrane_words = 0;   // serial LIF state
  CycleStats planned;

  bool on_pe_array() const {
    return kind == StepKind::kEncode || kind == StepKind::kConv3x3 || kind == StepKind::kConv1x1 || kind == StepKind::kLinear ||
           kind == StepKind::kSsaKv || kind == StepKind::kSsaQm;
  }
  /// Weight words fetched from the weight SRAM per pass.
  std::uint64_t weight_words() const {
    if (kind == StepKind::kHead) return std::uint64_t{head->classes} * head->dim;
    return on_pe_array() && shape.operands == OperandSource::kWeightSram ? shape.weight_words() : 0;
  }
  std::uint64_t neurons() const { return lif ? std::uint64_t{shape.out_ch} * shape.out_positions() : 0; }
};

inline std::uint64_t vector_cycles(std::uint64_t elements, const AccelConfig& cfg) {
  return (elements + cfg.vector_lanes - 1) / cfg.vector_lanes;
}

/// Every (time step, output channel, tile) is released exactly once and sees
/// every input channel exactly once per bitplane. A parallel encoding layer
/// computes lane 0 only and fans it out at release.
inline void check_job_coverage(const PeLayerShape& s, const std::vector<TileJob>& jobs, const Schedule& sched,
                               const AccelConfig& cfg) {
  const std::uint32_t tiles = s.kind == TileKind::kConv3x3 ? s.strips() : s.chunks();
  const std::uint32_t planes = s.encoding ? 8 : 1;
  const std::uint32_t lanes = s.encoding && sched.is_parallel() ? 1 : sched.time_steps;
  std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> released;
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, std::uint64_t> seen;
  for (const TileJob& j : jobs) {
    if (j.group_end <= j.group_begin || j.group_end > s.in_ch || j.group_end - j.group_begin > channel_group_size(s.kind, cfg)) {
      throw ConfigError(s.name + ": job channel group out of range");
    }
    if (j.out_channel >= s.out_ch || j.tile >= tiles || j.lane_count == 0 || j.lane_count > cfg.arrays_per_block ||
        j.lane_begin + j.lane_count > lanes) {
      throw ConfigError(s.name + ": job outside layer bounds");
    }
    for (std::uint32_t l = j.lane_begin; l < j.lane_begin + j.lane_count; ++l) {
      seen[{l, j.out_channel, j.tile}] += j.group_end - j.group_begin;
      if (j.last_group && !released.insert({l, j.out_channel, j.tile}).second) {
        throw ConfigError(s.name + ": output tile released twice");
      }
    }
  }
  if (released.size() != std::size_t{lanes} * s.out_ch * tiles || seen.size() != released.size()) {
    throw ConfigError(s.name + ": jobs do not cover the layer output");
  }
  for (const auto& [_, n] : seen) {
    if (n != std::uint64_t{s.in_ch} * planes) throw ConfigError(s.name + ": input channels not covered exactly once");
  }
}

namespace detail {

class Compiler {
 public:
  Compiler(const AccelConfig& accel, const Schedule& sched, const BankSet& banks) : accel_(accel), sched_(sched), banks_(banks) {}

  std::vector<LayerPlan> plans;

  void pe_step(LayerPlan p) {
    p.jobs = plan_layer(p.shape, accel_, sched_);
    check_job_coverage(p.shape, p.jobs, sched_, accel_);
    p.planned = planned_cycles(p.jobs, accel_);
    const std::uint64_t lanes = sched_.is_parallel() ? sched_.time_steps : 1;
    p.temp_words = lanes * (p.shape.kind == TileKind::kConv3x3 ? std::uint64_t{p.shape.height} * p.shape.strips() * 8
                                                               : std::uint64_t{p.shape.chunks()} * 64);
    if (p.temp_words > banks_.temp.capacity_words()) {
      throw CapacityError(p.name + ": partial sums need " + std::to_string(p.temp_words) + " temp words, bank holds " +
                          std::to_string(banks_.temp.capacity_words()));
    }
    if (p.lif && !sched_.is_parallel() && sched_.time_steps > 1) p.membrane_words = p.neurons();
    plans.push_back(std::move(p));
  }

  void vector_step(StepKind kind, std::string name, std::uint64_t elements) {
    LayerPlan p;
    p.kind = kind;
    p.name = std::move(name);
    p.vector_elements = elements;
    p.planned.cycles = p.planned.vector_cycles = vector_cycles(elements, accel_);
    plans.push_back(std::move(p));
  }

  // Spatial stage: [C, H, W].
  void spatial(const std::vector<LayerSpec>& layers, std::uint32_t& c, std::uint32_t& h, std::uint32_t& w, bool encoding_first) {
    const std::uint32_t T = sched_.time_steps;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& layer = layers[i];
      if (const auto* mp = std::get_if<MaxPool2x2>(&layer.op)) {
        vector_step(StepKind::kMaxPool, mp->name, std::uint64_t{T} * c * h * w);
        h /= 2;
        w /= 2;
        continue;
      }
      const Lif* lif = i + 1 < layers.size() ? std::get_if<Lif>(&layers[i + 1].op) : nullptr;
      LayerPlan p;
      p.name = layer.name();
      if (const auto* cv = std::get_if<ConvBn3x3>(&layer.op)) {
        p.kind = (encoding_first && i == 0) ? StepKind::kEncode : StepKind::kConv3x3;
        p.shape = PeLayerShape{cv->name, TileKind::kConv3x3, cv->in_ch, cv->out_ch, h, w, cv->stride};
        p.shape.encoding = p.kind == StepKind::kEncode;
        p.weights = &cv->weights;
        p.bias = &cv->bias;
      } else if (const auto* pw = std::get_if<ConvBn1x1>(&layer.op)) {
        p.kind = StepKind::kConv1x1;
        p.shape = PeLayerShape{pw->name, TileKind::kPointwise, pw->in_ch, pw->out_ch, 1, h * w};
        p.weights = &pw->weights;
        p.bias = &pw->bias;
      } else {
        throw ConfigError(layer.name() + ": unsupported layer kind in the spatial stage");
      }
      if (!lif) throw ConfigError(layer.name() + ": PE layers need a fused Lif");
      p.lif = &lif->params;
      p.lif_name = lif->name;
      const std::uint32_t oc = p.shape.out_ch, oh = p.shape.kind == TileKind::kConv3x3 ? p.shape.out_height() : h,
                          ow = p.shape.kind == TileKind::kConv3x3 ? p.shape.out_width() : w;
      pe_step(std::move(p));
      c = oc;
      h = oh;
      w = ow;
      ++i;  // the Lif
    }
  }

  // Token stage: [N, D].
  void tokens(const std::vector<LayerSpec>& layers, std::uint32_t n, std::uint32_t& d) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& layer = layers[i];
      if (const auto* lin = std::get_if<Linear>(&layer.op)) {
        const Lif* lif = i + 1 < layers.size() ? std::get_if<Lif>(&layers[i + 1].op) : nullptr;
        if (!lif) throw ConfigError(lin->name + ": PE layers need a fused Lif");
        linear(lin->name, lif->name, &lin->weights, &lin->bias, &lif->params, SsaRole::kNone, lin->in_dim, lin->out_dim, n);
        d = lin->out_dim;
        ++i;
      } else if (const auto* s = std::get_if<Ssa>(&layer.op)) {
        ssa(*s, n);
      } else if (const auto* r = std::get_if<IandResidual>(&layer.op)) {
        residual(*r, n, d);
      } else {
        throw ConfigError(layer.name() + ": unsupported layer kind in the token stage");
      }
    }
  }

  void residual(const IandResidual& r, std::uint32_t n, std::uint32_t d) {
    LayerPlan begin;
    begin.kind = StepKind::kResidualBegin;
    begin.name = r.name;
    plans.push_back(begin);
    std::uint32_t inner_d = d;
    tokens(r.inner, n, inner_d);
    vector_step(StepKind::kIand, r.name, std::uint64_t{sched_.time_steps} * n * d);
  }

  void linear(const std::string& name, const std::string& lif_name, const QTensor* w, const AccTensor* b, const LifParams* lif,
              SsaRole role, std::uint32_t in, std::uint32_t out, std::uint32_t n) {
    LayerPlan p;
    p.kind = StepKind::kLinear;
    p.name = name;
    p.lif_name = lif_name;
    p.role = role;
    p.weights = w;
    p.bias = b;
    p.lif = lif;
    p.shape = PeLayerShape{name, TileKind::kPointwise, in, out, 1, n};
    pe_step(std::move(p));
  }

  void ssa(const Ssa& s, std::uint32_t n) {
    const std::uint32_t D = s.dim, dh = s.dim / s.heads, T = sched_.time_steps;
    linear(s.name + ".q_cur", s.name + ".q", &s.w_q, &s.b_q, &s.lif_q, SsaRole::kQ, D, D, n);
    linear(s.name + ".k_cur", s.name + ".k", &s.w_k, &s.b_k, &s.lif_k, SsaRole::kK, D, D, n);
    linear(s.name + ".v_cur", s.name + ".v", &s.w_v, &s.b_v, &s.lif_v, SsaRole::kV, D, D, n);
    const std::uint64_t m_words = std::uint64_t{T} * dh * dh;
    if (m_words > banks_.temp.capacity_words()) throw CapacityError(s.name + ": K^T V does not fit the temp SRAM");
    const std::uint64_t m_base = banks_.temp.capacity_words() - m_words;
    for (std::uint32_t h = 0; h < s.heads; ++h) {
      LayerPlan kv;
      kv.kind = StepKind::kSsaKv;
      kv.name = s.name + ".kv" + std::to_string(h);
      kv.ssa = &s;
      kv.head_index = h;
      kv.shape = PeLayerShape{kv.name, TileKind::kMatMul, n, dh, 1, dh};
      kv.shape.operands = OperandSource::kSpikeSram;
      kv.shape.per_lane_operands = true;
      kv.operand_base = m_base;
      pe_step(std::move(kv));

      LayerPlan qm;
      qm.kind = StepKind::kSsaQm;
      qm.name = s.name + ".attn_cur";
      qm.lif_name = s.name + ".attn";
      qm.ssa = &s;
      qm.lif = &s.lif_attn;
      qm.head_index = h;
      qm.last_head = h + 1 == s.heads;
      qm.shape = PeLayerShape{qm.name, TileKind::kMatMul, dh, dh, 1, n};
      qm.shape.operands = OperandSource::kTempSram;
      qm.shape.per_lane_operands = true;
      qm.operand_base = m_base;
      const std::uint64_t psum = (sched_.is_parallel() ? T : 1) * std::uint64_t{qm.shape.chunks()} * 64;
      if (psum > m_base || (sched_.is_parallel() ? T : 1) * std::uint64_t{plans.back().shape.chunks()} * 64 > m_base) {
        throw CapacityError(s.name + ": attention partial sums overlap the K^T V region");
      }
      pe_step(std::move(qm));
    }
    linear(s.name + ".proj_cur", s.name + ".proj", &s.w_proj, &s.b_proj, &s.lif_proj, SsaRole::kProj, D, D, n);
  }

 private:
  const AccelConfig& accel_;
  const Schedule& sched_;
  const BankSet& banks_;
};

}  // namespace detail

/// Layer-by-layer plans. The plans keep pointers into `cfg`.
inline std::vector<LayerPlan> compile(const ModelConfig& cfg, const AccelConfig& accel, const Schedule& sched,
                                      const BudgetConfig& budget = {}) {
  validate(cfg);
  accel.validate();
  sched.validate();
  if (sched.time_steps != cfg.time_steps) {
    throw ConfigError("schedule T=" + std::to_string(sched.time_steps) + " does not match model T=" + std::to_string(cfg.time_steps));
  }
  const BankSet banks = default_budget(budget);
  detail::Compiler c(accel, sched, banks);
  std::uint32_t ch = cfg.in_channels, h = cfg.in_height, w = cfg.in_width;
  c.spatial(cfg.tokenizer, ch, h, w, true);
  LayerPlan flat;
  flat.kind = StepKind::kFlatten;
  flat.name = "flatten";
  c.plans.push_back(flat);
  const std::uint32_t n = h * w;
  std::uint32_t d = ch;
  for (const Block& b : cfg.blocks) {
    c.residual(b.attention, n, d);
    c.residual(b.mlp, n, d);
  }
  LayerPlan head;
  head.kind = StepKind::kHead;
  head.name = cfg.head.name;
  head.head = &cfg.head;
  const std::uint64_t passes = sched.is_parallel() ? 1 : sched.time_steps;
  head.vector_elements = std::uint64_t{cfg.time_steps} * n * d + passes * cfg.head.classes * d;
  head.planned.cycles = head.planned.vector_cycles = vector_cycles(std::uint64_t{cfg.time_steps} * n * d, accel) +
                                                     passes * vector_cycles(std::uint64_t{cfg.head.classes} * d, accel);
  c.plans.push_back(head);
  return std::move(c.plans);
}

struct PlanSummary {
  std::uint64_t cycles = 0;
  std::uint64_t pe_cycles = 0;
  std::uint64_t vector_cycles = 0;
  std::uint64_t fill_cycles = 0;
  std::uint64_t drain_cycles = 0;
  std::uint64_t weight_words = 0;
  std::uint64_t membrane_bytes = 0;  // serial: sum over LIF layers
  std::uint64_t max_membrane_bytes = 0;
  std::uint64_t pe_layers = 0;
  double frames_per_second = 0;
};

inline PlanSummary summarize(const std::vector<LayerPlan>& plans, const AccelConfig& accel) {
  PlanSummary s;
  for (const LayerPlan& p : plans) {
    s.cycles += p.planned.cycles;
    s.vector_cycles += p.planned.vector_cycles;
    if (p.on_pe_array()) {
      s.pe_cycles += p.planned.cycles;
      ++s.pe_layers;
    }
    s.fill_cycles += p.planned.fill_cycles;
    s.drain_cycles += p.planned.drain_cycles;
    s.weight_words += p.weight_words();
    s.membrane_bytes += membrane_bytes_for(p.membrane_words);
    s.max_membrane_bytes = std::max(s.max_membrane_bytes, membrane_bytes_for(p.membrane_words));
  }
  s.frames_per_second = s.cycles ? accel.clock_hz / static_cast<double>(s.cycles) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Execution

struct LayerReport {
  std::string name;
  std::string kind;
  CycleStats stats;
  std::uint64_t weight_reads = 0;
  std::uint64_t weight_words = 0;
  std::uint64_t membrane_reads = 0;
  std::uint64_t membrane_writes = 0;
};

struct RunReport {
  Schedule schedule;
  AccelConfig accel;
  std::vector<LayerReport> layers;
  CycleStats total;
  TrafficReport traffic;
  EnergyReport energy;
  std::uint64_t membrane_bytes = 0;      // serial: sum over LIF layers; parallel: 0
  std::uint64_t membrane_bank_bytes = 0;  // capacity of the spill bank
  std::vector<std::pair<std::string, double>> sparsity;  // per spiking activation, in execution order

  double frames_per_second() const { return total.cycles ? accel.clock_hz / static_cast<double>(total.cycles) : 0.0; }
  double latency_seconds() const { return static_cast<double>(total.cycles) / accel.clock_hz; }
};

struct ExecuteOptions {
  BudgetConfig budget;
  std::optional<EnergyModel> energy;  // default_energy_model when unset
  std::string fault_layer;            // negate the weights of this PE step (testing the verifier)
};

struct ExecuteResult {
  AccTensor logits;
  LayerTrace trace;
  RunReport report;
};

namespace detail {

/// [T, O, P] channel-major -> [T, P, O] token-major.
inline AccTensor to_tokens(const AccTensor& a) {
  const Shape& s = a.shape();
  AccTensor out({s[0], s[2], s[1]}, a.scale_exp());
  auto od = out.mutable_data();
  for (std::uint32_t t = 0; t < s[0]; ++t)
    for (std::uint32_t o = 0; o < s[1]; ++o)
      for (std::uint32_t p = 0; p < s[2]; ++p) od[(std::size_t{t} * s[2] + p) * s[1] + o] = a.data()[(std::size_t{t} * s[1] + o) * s[2] + p];
  return out;
}

inline SpikeTensor to_tokens(const SpikeTensor& a) {
  const Shape& s = a.shape();
  SpikeTensor out({s[0], s[2], s[1]});
  for (std::uint32_t t = 0; t < s[0]; ++t)
    for (std::uint32_t o = 0; o < s[1]; ++o)
      for (std::uint32_t p = 0; p < s[2]; ++p) {
        if (a.get_flat((std::size_t{t} * s[1] + o) * s[2] + p)) out.set_flat((std::size_t{t} * s[2] + p) * s[1] + o, true);
      }
  return out;
}

inline std::uint64_t packed_bytes(std::uint64_t bits) { return (bits + 7) / 8; }

struct ExecState {
  SpikeTensor act;
  std::vector<SpikeTensor> residual;
  SpikeTensor ssa_in, q, k, v;
  AccTensor attn_cur;
  SpikeTensor attn;
  AccTensor kv;  // [T, dh(j), dh(i)] of the current head
};

}  // namespace detail

/// Runs compiled plans on one image. Logits and trace use the reference
/// layouts so they can be compared entry by entry.
inline ExecuteResult execute(const std::vector<LayerPlan>& plans, const ModelConfig& cfg, const ByteImage& img,
                             const AccelConfig& accel, const Schedule& sched, const ExecuteOptions& opts = {}) {
  accel.validate();
  sched.validate();
  if (img.channels() != cfg.in_channels || img.height() != cfg.in_height || img.width() != cfg.in_width) {
    throw ShapeError("input image shape " + shape_str(img.shape()) + " does not match model input");
  }
  const std::uint32_t T = sched.time_steps;
  if (T != cfg.time_steps) throw ConfigError("schedule T does not match model T");
  const bool parallel = sched.is_parallel();

  BankSet banks = default_budget(opts.budget);
  std::uint64_t max_membrane = 0;
  for (const LayerPlan& p : plans) max_membrane = std::max(max_membrane, p.membrane_words);
  banks.membrane.resize(membrane_bytes_for(max_membrane));

  ExecuteResult res;
  RunReport& rep = res.report;
  rep.schedule = sched;
  rep.accel = accel;
  rep.membrane_bank_bytes = banks.membrane.capacity_bytes();
  detail::ExecState st;
  const auto planes = bitplane_decompose(img);

  for (const LayerPlan& p : plans) {
    LayerReport lr;
    lr.name = p.name;
    lr.kind = step_kind_name(p.kind);
    lr.weight_words = p.weight_words();
    const std::uint64_t w0 = banks.weight.reads(), m0 = banks.membrane.reads(), m1 = banks.membrane.writes();
    const bool fault = !opts.fault_layer.empty() && opts.fault_layer == p.name;

    if (p.on_pe_array()) {
      const PeLayerShape& s = p.shape;
      PeLayerOptions po;
      if (p.bias) po.bias = p.bias->data();
      if (p.lif) po.lif = *p.lif;
      po.operand_base = p.operand_base;
      const std::int32_t sign = fault ? -1 : 1;
      auto weight = [&](std::uint32_t, std::uint32_t oc, std::uint32_t ic, std::uint32_t k) -> std::int32_t {
        return sign * p.weights->data()[(std::size_t{oc} * s.in_ch + ic) * s.kernel_size() + k];
      };
      PeLayerResult r;
      switch (p.kind) {
        case StepKind::kEncode: {
          po.scale_exp = p.weights->scale_exp() - 8;
          r = run_pe_layer(
              s, p.jobs, sched, accel, banks, po,
              [&](std::uint32_t, std::uint32_t c, std::uint32_t y, std::uint32_t x, std::uint32_t b) {
                return planes[b].get_flat((std::size_t{c} * s.height + y) * s.width + x);
              },
              weight);
          break;
        }
        case StepKind::kConv3x3:
        case StepKind::kConv1x1: {
          po.scale_exp = p.weights->scale_exp();
          const std::size_t P = s.positions();
          r = run_pe_layer(
              s, p.jobs, sched, accel, banks, po,
              [&](std::uint32_t t, std::uint32_t c, std::uint32_t y, std::uint32_t x, std::uint32_t) {
                return st.act.get_flat((std::size_t{t} * s.in_ch + c) * P + std::size_t{y} * s.width + x);
              },
              weight);
          break;
        }
        case StepKind::kLinear: {
          po.scale_exp = p.weights->scale_exp();
          if (p.role == SsaRole::kQ) st.ssa_in = st.act;
          const SpikeTensor& in = (p.role == SsaRole::kQ || p.role == SsaRole::kK || p.role == SsaRole::kV) ? st.ssa_in
                                  : p.role == SsaRole::kProj                                                 ? st.attn
                                                                                                             : st.act;
          const std::uint32_t N = s.width, D = s.in_ch;
          r = run_pe_layer(
              s, p.jobs, sched, accel, banks, po,
              [&](std::uint32_t t, std::uint32_t c, std::uint32_t, std::uint32_t n, std::uint32_t) {
                return in.get_flat((std::size_t{t} * N + n) * D + c);
              },
              weight);
          break;
        }
        case StepKind::kSsaKv: {
          po.release = ReleaseTarget::kTemp;
          po.result_base = p.operand_base;
          po.operand_base = 0;
          const std::uint32_t N = s.in_ch, dh = s.out_ch, D = p.ssa->dim, d0 = p.head_index * dh;
          r = run_pe_layer(
              s, p.jobs, sched, accel, banks, po,
              [&](std::uint32_t t, std::uint32_t n, std::uint32_t, std::uint32_t i, std::uint32_t) {
                return st.k.get_flat((std::size_t{t} * N + n) * D + d0 + i);
              },
              [&](std::uint32_t t, std::uint32_t j, std::uint32_t n, std::uint32_t) -> std::int32_t {
                return st.v.get_flat((std::size_t{t} * N + n) * D + d0 + j) ? sign : 0;
              });
          st.kv = r.currents;
          break;
        }
        case StepKind::kSsaQm: {
          po.post_shift = p.ssa->scale_shift;
          const std::uint32_t N = s.width, dh = s.in_ch, D = p.ssa->dim, d0 = p.head_index * dh;
          r = run_pe_layer(
              s, p.jobs, sched, accel, banks, po,
              [&](std::uint32_t t, std::uint32_t i, std::uint32_t, std::uint32_t n, std::uint32_t) {
                return st.q.get_flat((std::size_t{t} * N + n) * D + d0 + i);
              },
              [&](std::uint32_t t, std::uint32_t j, std::uint32_t i, std::uint32_t) -> std::int32_t {
                return sign * st.kv.data()[(std::size_t{t} * dh + j) * dh + i];
              });
          if (p.head_index == 0) {
            st.attn_cur = AccTensor({T, N, D}, 0);
            st.attn = SpikeTensor({T, N, D});
          }
          for (std::uint32_t t = 0; t < T; ++t)
            for (std::uint32_t j = 0; j < dh; ++j)
              for (std::uint32_t n = 0; n < N; ++n) {
                const std::size_t src = (std::size_t{t} * dh + j) * N + n, dst = (std::size_t{t} * N + n) * D + d0 + j;
                st.attn_cur.mutable_data()[dst] = r.currents.data()[src];
                if (r.spikes->get_flat(src)) st.attn.set_flat(dst, true);
              }
          if (p.last_head) {
            res.trace.add(p.name, TraceKind::kCurrents, st.attn_cur);
            res.trace.add(p.lif_name, TraceKind::kActivation, st.attn);
            rep.sparsity.emplace_back(p.lif_name, sparsity(st.attn));
          }
          break;
        }
        default:
          break;
      }
      if (p.kind == StepKind::kLinear) {
        AccTensor cur = detail::to_tokens(r.currents);
        SpikeTensor spk = detail::to_tokens(*r.spikes);
        res.trace.add(p.name, TraceKind::kCurrents, cur);
        res.trace.add(p.lif_name, TraceKind::kActivation, spk);
        rep.sparsity.emplace_back(p.lif_name, sparsity(spk));
        switch (p.role) {
          case SsaRole::kQ: st.q = std::move(spk); break;
          case SsaRole::kK: st.k = std::move(spk); break;
          case SsaRole::kV: st.v = std::move(spk); break;
          default: st.act = std::move(spk); break;
        }
      } else if (p.kind == StepKind::kEncode || p.kind == StepKind::kConv3x3 || p.kind == StepKind::kConv1x1) {
        const Shape out{T, s.out_ch, s.kind == TileKind::kConv3x3 ? s.out_height() : s.height,
                        s.kind == TileKind::kConv3x3 ? s.out_width() : s.width};
        Shape spatial = out;
        if (p.kind == StepKind::kConv1x1) {
          // pointwise layers were planned as 1 x (H*W); restore the grid
          spatial[2] = st.act.shape()[2];
          spatial[3] = st.act.shape()[3];
        }
        res.trace.add(p.name, TraceKind::kCurrents, r.currents.reshaped(spatial));
        st.act = r.spikes->reshaped(spatial);
        res.trace.add(p.lif_name, TraceKind::kActivation, st.act);
        rep.sparsity.emplace_back(p.lif_name, sparsity(st.act));
      }
      lr.stats = r.stats;
    } else {
      switch (p.kind) {
        case StepKind::kMaxPool: {
          const std::uint64_t in_bits = st.act.size();
          st.act = maxpool2x2(st.act);
          banks.offchip_read_bytes += detail::packed_bytes(in_bits);
          banks.offchip_write_bytes += detail::packed_bytes(st.act.size());
          res.trace.add(p.name, TraceKind::kActivation, st.act);
          rep.sparsity.emplace_back(p.name, sparsity(st.act));
          break;
        }
        case StepKind::kFlatten:
          st.act = std::get<SpikeTensor>(flatten_tokens(Activation{st.act}));
          break;
        case StepKind::kResidualBegin:
          st.residual.push_back(st.act);
          break;
        case StepKind::kIand: {
          if (st.residual.empty()) throw ConfigError(p.name + ": IAND without residual input");
          const SpikeTensor x = std::move(st.residual.back());
          st.residual.pop_back();
          st.act = iand(x, st.act);
          banks.offchip_read_bytes += 2 * detail::packed_bytes(x.size());
          banks.offchip_write_bytes += detail::packed_bytes(st.act.size());
          res.trace.add(p.name, TraceKind::kActivation, st.act);
          rep.sparsity.emplace_back(p.name, sparsity(st.act));
          break;
        }
        case StepKind::kHead: {
          const ClassifierHead& h = *p.head;
          const Shape& s = st.act.shape();
          const std::uint32_t N = s[1], D = s[2];
          if (D != h.dim) throw ShapeError("head: input dim mismatch");
          banks.offchip_read_bytes += detail::packed_bytes(st.act.size());
          const std::uint64_t words = std::uint64_t{h.classes} * D;
          detail::Stager stage(banks.weight, banks.offchip_read_bytes, words, words);
          // Parallel: one reduction over all lanes. Serial: one pass per time
          // step, partial logits parked in the temp SRAM.
          const std::uint32_t passes = parallel ? 1 : T;
          std::vector<std::int64_t> acc(h.classes);
          for (std::uint32_t c = 0; c < h.classes; ++c) acc[c] = h.bias.data()[c];
          for (std::uint32_t pass = 0; pass < passes; ++pass) {
            const std::uint32_t t0 = parallel ? 0 : pass, t1 = parallel ? T : pass + 1;
            std::vector<std::int64_t> rate(D, 0);
            for (std::uint32_t t = t0; t < t1; ++t)
              for (std::uint32_t n = 0; n < N; ++n)
                for (std::uint32_t d = 0; d < D; ++d) rate[d] += st.act.get_flat((std::size_t{t} * N + n) * D + d);
            banks.weight.count_read(stage.use(0, 0), words);
            if (pass > 0) banks.temp.count_read(0, h.classes);
            for (std::uint32_t c = 0; c < h.classes; ++c)
              for (std::uint32_t d = 0; d < D; ++d) acc[c] += rate[d] * h.weights.data()[std::size_t{c} * D + d];
            if (pass + 1 < passes) banks.temp.count_write(0, h.classes);
          }
          res.logits = AccTensor({h.classes}, h.weights.scale_exp());
          for (std::uint32_t c = 0; c < h.classes; ++c) res.logits.mutable_data()[c] = checked_i32(acc[c], "classifier_head");
          banks.offchip_write_bytes += 4ull * h.classes;
          res.trace.add(p.name, TraceKind::kCurrents, res.logits);
          break;
        }
        default:
          break;
      }
      lr.stats = p.planned;
    }
    lr.weight_reads = banks.weight.reads() - w0;
    lr.membrane_reads = banks.membrane.reads() - m0;
    lr.membrane_writes = banks.membrane.writes() - m1;
    rep.total += lr.stats;
    rep.membrane_bytes += membrane_bytes_for(p.membrane_words);
    rep.layers.push_back(std::move(lr));
  }
  rep.traffic = banks.traffic();
  const EnergyModel model = opts.energy ? *opts.energy : default_energy_model(banks);
  rep.energy = energy_report(rep.traffic, rep.total.pe_active_ops, model);
  return res;
}

inline ExecuteResult simulate(const ModelConfig& cfg, const ByteImage& img, const AccelConfig& accel, const Schedule& sched,
                              const ExecuteOptions& opts = {}) {
  return execute(compile(cfg, accel, sched, opts.budget), cfg, img, accel, sched, opts);
}

// ---------------------------------------------------------------------------
// Trace comparison

struct TraceMismatch {
  std::string layer;
  std::uint32_t time_step = 0;
  std::size_t index = 0;  // flat index within the time step
  std::int64_t expected = 0;
  std::int64_t actual = 0;
  std::string reason;

  std::string str() const {
    if (!reason.empty()) return "layer " + layer + ": " + reason;
    return "layer " + layer + " t=" + std::to_string(time_step) + " index=" + std::to_string(index) +
           " expected=" + std::to_string(expected) + " actual=" + std::to_string(actual);
  }
};

/// First differing entry between two traces, if any.
inline std::optional<TraceMismatch> compare_traces(const LayerTrace& expected, const LayerTrace& actual) {
  const std::size_t n = std::min(expected.entries.size(), actual.entries.size());
  for (std::size_t e = 0; e < n; ++e) {
    const TraceEntry& a = expected.entries[e];
    const TraceEntry& b = actual.entries[e];
    if (a.name != b.name) return TraceMismatch{a.name, 0, 0, 0, 0, "trace entry is " + b.name};
    const Shape& sa = activation_shape(a.value);
    const Shape& sb = activation_shape(b.value);
    if (sa != sb) return TraceMismatch{a.name, 0, 0, 0, 0, "shape " + shape_str(sb) + " != " + shape_str(sa)};
    const std::size_t size = element_count(sa);
    const bool timed = sa.size() > 1;
    const std::size_t per_step = timed ? size / sa[0] : size;
    for (std::size_t i = 0; i < size; ++i) {
      const std::int64_t x = activation_value(a.value, i), y = activation_value(b.value, i);
      if (x != y) return TraceMismatch{a.name, timed ? static_cast<std::uint32_t>(i / per_step) : 0, i % per_step, x, y, ""};
    }
  }
  if (expected.entries.size() != actual.entries.size()) {
    const std::string missing = n < expected.entries.size() ? expected.entries[n].name : actual.entries[n].name;
    return TraceMismatch{missing, 0, 0, 0, 0, "trace lengths differ"};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Schedule comparison

struct ScheduleComparison {
  std::uint32_t time_steps = 0;
  RunReport parallel;
  RunReport serial;
  std::uint64_t weight_reads_parallel = 0;
  std::uint64_t weight_reads_serial = 0;
  double weight_read_reduction = 0;  // 1 - parallel / serial
  std::uint64_t membrane_bytes_parallel = 0;
  std::uint64_t membrane_bytes_serial = 0;
  std::uint64_t membrane_traffic_parallel = 0;  // words
  std::uint64_t membrane_traffic_serial = 0;
  double latency_ratio = 0;  // parallel cycles / serial cycles
  bool per_layer_ratio_exact = false;  // every layer: serial weight reads = T x parallel
  bool logits_equal = false;

  static constexpr double kReportedExternalReduction = 0.432;  // against a different published design
};

inline ScheduleComparison compare_schedules(const ModelConfig& cfg, const ByteImage& img, const AccelConfig& accel,
                                            const ExecuteOptions& opts = {}) {
  const std::uint32_t T = cfg.time_steps;
  const ExecuteResult par = simulate(cfg, img, accel, Schedule::parallel(T), opts);
  const ExecuteResult ser = simulate(cfg, img, accel, Schedule::serial(T), opts);
  ScheduleComparison c;
  c.time_steps = T;
  c.parallel = par.report;
  c.serial = ser.report;
  c.weight_reads_parallel = par.report.traffic.banks.at("weight").reads;
  c.weight_reads_serial = ser.report.traffic.banks.at("weight").reads;
  c.weight_read_reduction =
      c.weight_reads_serial ? 1.0 - static_cast<double>(c.weight_reads_parallel) / static_cast<double>(c.weight_reads_serial) : 0.0;
  c.membrane_bytes_parallel = par.report.membrane_bytes;
  c.membrane_bytes_serial = ser.report.membrane_bytes;
  const auto& mp = par.report.traffic.banks.at("membrane");
  const auto& ms = ser.report.traffic.banks.at("membrane");
  c.membrane_traffic_parallel = mp.reads + mp.writes;
  c.membrane_traffic_serial = ms.reads + ms.writes;
  c.latency_ratio = ser.report.total.cycles
                        ? static_cast<double>(par.report.total.cycles) / static_cast<double>(ser.report.total.cycles)
                        : 0.0;
  c.per_layer_ratio_exact = par.report.layers.size() == ser.report.layers.size();
  for (std::size_t i = 0; c.per_layer_ratio_exact && i < par.report.layers.size(); ++i) {
    c.per_layer_ratio_exact = ser.report.layers[i].weight_reads == T * par.report.layers[i].weight_reads &&
                              par.report.layers[i].weight_reads == par.report.layers[i].weight_words;
  }
  c.logits_equal = par.logits == ser.logits;
  return c;
}

}  // namespace siaf
