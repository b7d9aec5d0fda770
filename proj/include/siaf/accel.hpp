// SPDX-License-Identifier: Apache-2.0
//
// Cycle-level model of the compute fabric: 12 PE blocks, each holding one
// 8x9 PE array per time step, a 12-channel accumulator backed by the temp
// SRAM, and a 4-stage unrolled LIF unit.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siaf/error.hpp"
#include "siaf/lif.hpp"
#include "siaf/memory.hpp"
#include "siaf/tensor.hpp"

namespace siaf {

struct AccelConfig {
  std::uint32_t pe_rows = 8;
  std::uint32_t pe_cols = 9;
  std::uint32_t arrays_per_block = 4;
  std::uint32_t num_blocks = 12;
  double clock_hz = 500e6;
  std::uint32_t ops_per_pe_cycle = 2;  // a spike MAC counts as two operations
  std::uint32_t drain_cycles = 2;      // accumulator + LIF latency per released vector
  bool overlap_drain = true;
  std::uint32_t vector_lanes = 8;  // IAND / pooling / reductions

  std::uint64_t total_pes() const {
    return std::uint64_t{pe_rows} * pe_cols * arrays_per_block * num_blocks;
  }
  double peak_ops_per_second() const { return static_cast<double>(ops_per_pe_cycle * total_pes()) * clock_hz; }
  double peak_gsops() const { return peak_ops_per_second() / 1e9; }

  void validate() const {
    if (pe_rows != 8 || pe_cols != 9) throw ConfigError("tile dataflow models an 8x9 PE array");
    if (arrays_per_block != 4) throw ConfigError("unrolled LIF has exactly 4 stages (arrays_per_block = 4)");
    if (num_blocks == 0) throw ConfigError("num_blocks must be positive");
    if (!(clock_hz > 0)) throw ConfigError("clock_hz must be positive");
    if (ops_per_pe_cycle == 0 || vector_lanes == 0) throw ConfigError("ops_per_pe_cycle and vector_lanes must be positive");
  }
};

// ---------------------------------------------------------------------------
// Schedules

enum class ScheduleKind : std::uint8_t { kSerial, kParallel };

/// Mux selectors of the unrolled LIF, left to right = stage 1->2, 2->3, 3->4.
inline std::uint8_t selectors_for_time_steps(std::uint32_t t) {
  switch (t) {
    case 4: return 0b111;
    case 2: return 0b101;
    case 1: return 0b000;
    default: throw ConfigError("time steps must be 1, 2 or 4");
  }
}

/// Serial: one time step at a time, membranes spilled to SRAM between steps.
/// Parallel: all time steps at once on separate PE arrays, unrolled LIF.
struct Schedule {
  ScheduleKind kind = ScheduleKind::kParallel;
  std::uint32_t time_steps = 4;
  std::uint8_t selectors = 0b111;

  static Schedule parallel(std::uint32_t t) { return {ScheduleKind::kParallel, t, selectors_for_time_steps(t)}; }
  static Schedule serial(std::uint32_t t) {
    if (!valid_time_steps(t)) throw ConfigError("time steps must be 1, 2 or 4");
    return {ScheduleKind::kSerial, t, 0};
  }

  bool is_parallel() const { return kind == ScheduleKind::kParallel; }
  std::string name() const { return is_parallel() ? "parallel" : "serial"; }

  void validate() const {
    if (!valid_time_steps(time_steps)) throw ConfigError("time steps must be 1, 2 or 4");
    if (is_parallel() && selectors != selectors_for_time_steps(time_steps)) {
      throw ConfigError("selector pattern " + std::to_string(selectors) + " does not match T=" + std::to_string(time_steps));
    }
  }
};

// ---------------------------------------------------------------------------
// Unrolled LIF

struct UnrolledLifOutput {
  std::array<bool, 4> spikes{};
  std::array<std::int32_t, 4> potential{};
  std::array<std::int32_t, 4> carry{};
};

/// Four combinational LIF stages. Stage k takes the previous stage's
/// post-reset membrane when its mux is set, otherwise zero.
class UnrolledLifUnit {
 public:
  UnrolledLifUnit(LifParams params, std::uint8_t selectors) : params_(params), selectors_(selectors) {
    params_.validate();
    if (selectors != 0b111 && selectors != 0b101 && selectors != 0b000) {
      throw ConfigError("unsupported unrolled-LIF selector pattern " + std::to_string(selectors));
    }
  }

  static UnrolledLifUnit for_time_steps(std::uint32_t t, LifParams params) {
    return UnrolledLifUnit(params, selectors_for_time_steps(t));
  }

  std::uint8_t selectors() const { return selectors_; }
  std::uint32_t time_steps() const { return selectors_ == 0b111 ? 4 : selectors_ == 0b101 ? 2 : 1; }
  bool mux(std::uint32_t stage) const { return (selectors_ >> (2 - stage)) & 1u; }

  UnrolledLifOutput evaluate(const std::array<std::int32_t, 4>& currents) const {
    UnrolledLifOutput out;
    for (std::uint32_t k = 0; k < 4; ++k) {
      const std::int32_t chain_in = (k > 0 && mux(k - 1)) ? out.carry[k - 1] : 0;
      const LifStep s = lif_step(chain_in, currents[k], params_);
      out.spikes[k] = s.spike;
      out.potential[k] = s.potential;
      out.carry[k] = s.carry;
    }
    return out;
  }

 private:
  LifParams params_;
  std::uint8_t selectors_;
};

inline UnrolledLifOutput unrolled_lif(const std::array<std::int32_t, 4>& currents, const UnrolledLifUnit& unit) {
  return unit.evaluate(currents);
}

// ---------------------------------------------------------------------------
// Cycle statistics

struct CycleStats {
  std::uint64_t cycles = 0;         // elapsed cycles, drain included only when not overlapped
  std::uint64_t fill_cycles = 0;    // part of `cycles` spent filling the 3x3 pipeline
  std::uint64_t drain_cycles = 0;   // accumulator/LIF drain, exposed only without overlap
  std::uint64_t vector_cycles = 0;  // part of `cycles` spent on the vector unit
  std::uint64_t pe_active_ops = 0;  // spike operations with a nonzero input spike

  double utilization(const AccelConfig& cfg) const {
    if (cycles == 0) return 0.0;
    return static_cast<double>(pe_active_ops) /
           (static_cast<double>(cycles) * static_cast<double>(cfg.total_pes()) * cfg.ops_per_pe_cycle);
  }
  std::uint64_t cycles_with_overlap(const AccelConfig& cfg) const { return cfg.overlap_drain ? cycles : cycles - drain_cycles; }
  std::uint64_t cycles_without_overlap(const AccelConfig& cfg) const {
    return cfg.overlap_drain ? cycles + drain_cycles : cycles;
  }

  CycleStats& operator+=(const CycleStats& o) {
    cycles += o.cycles;
    fill_cycles += o.fill_cycles;
    drain_cycles += o.drain_cycles;
    vector_cycles += o.vector_cycles;
    pe_active_ops += o.pe_active_ops;
    return *this;
  }
  friend bool operator==(const CycleStats&, const CycleStats&) = default;
};

// ---------------------------------------------------------------------------
// Tiles

using PsumVector = std::array<std::int64_t, 8>;

struct TileOutput {
  std::vector<PsumVector> rows;           // emitted output vectors in order
  std::vector<std::uint64_t> emit_cycle;  // cycle index at which each row left the array
  CycleStats stats;
};

/// Input window for one image row: bit j holds column x0 - 1 + j (8 lanes
/// plus one halo column on each side).
using RowWindow = std::uint16_t;

/// 3x3 convolution of one input channel on one 8-wide column strip.
///
/// `windows` streams input rows -1 .. H (zero rows for the padding), one per
/// cycle. The array is three 8x3 sub-arrays (kernel rows). In sub-array ky,
/// PE (r, kx) multiplies weight (ky, kx) with window bit r + kx; the three
/// products of row r are summed and the partial sum moves diagonally to
/// sub-array ky + 1 on the next cycle. Output row y leaves at cycle y + 2.
inline TileOutput conv3x3_tile(std::span<const RowWindow> windows, std::span<const std::int32_t> weights,
                               std::uint32_t valid_lanes, const AccelConfig& cfg) {
  if (weights.size() != 9) throw ShapeError("conv3x3_tile: expected 9 weights, got " + std::to_string(weights.size()));
  if (windows.size() < 3) throw ShapeError("conv3x3_tile: need at least 3 input rows (padding included)");
  if (valid_lanes > 8) throw ShapeError("conv3x3_tile: at most 8 lanes");
  const std::size_t out_rows = windows.size() - 2;
  TileOutput out;
  out.rows.reserve(out_rows);
  out.emit_cycle.reserve(out_rows);
  PsumVector stage0{}, stage1{};
  for (std::size_t c = 0; c < windows.size(); ++c) {
    const RowWindow win = windows[c];
    if (win >> 10) throw ShapeError("conv3x3_tile: window wider than 10 columns");
    std::array<PsumVector, 3> part{};
    for (std::uint32_t r = 0; r < 8; ++r) {
      for (std::uint32_t kx = 0; kx < 3; ++kx) {
        if (!((win >> (r + kx)) & 1u)) continue;
        for (std::uint32_t ky = 0; ky < 3; ++ky) {
          part[ky][r] += weights[ky * 3 + kx];
          const long y = static_cast<long>(c) - static_cast<long>(ky);
          if (r < valid_lanes && y >= 0 && y < static_cast<long>(out_rows)) out.stats.pe_active_ops += cfg.ops_per_pe_cycle;
        }
      }
    }
    PsumVector emitted{};
    for (std::uint32_t r = 0; r < 8; ++r) emitted[r] = stage1[r] + part[2][r];
    for (std::uint32_t r = 0; r < 8; ++r) stage1[r] = stage0[r] + part[1][r];
    stage0 = part[0];
    if (c >= 2) {
      out.rows.push_back(emitted);
      out.emit_cycle.push_back(c);
    }
  }
  out.stats.cycles = windows.size();
  out.stats.fill_cycles = 2;
  return out;
}

/// One cycle of pointwise input: bit r of column c is input channel c at
/// position base + r.
using ColumnBits = std::array<std::uint8_t, 9>;

/// 1x1 convolution / matmul slice. Up to 9 input channels on the columns,
/// 8 positions on the rows; inputs broadcast horizontally, weights
/// vertically, partial sums accumulate horizontally. One cycle per 8
/// positions.
inline TileOutput pointwise_tile(std::span<const ColumnBits> inputs, std::span<const std::int32_t> weights,
                                 std::uint32_t valid_positions, const AccelConfig& cfg) {
  if (weights.size() > 9) throw ShapeError("pointwise_tile: channel group of " + std::to_string(weights.size()) + " exceeds 9 columns");
  TileOutput out;
  out.rows.reserve(inputs.size());
  for (std::size_t c = 0; c < inputs.size(); ++c) {
    PsumVector sums{};
    for (std::size_t col = 0; col < 9; ++col) {
      const std::uint8_t bits = inputs[c][col];
      if (!bits) continue;
      if (col >= weights.size()) throw ShapeError("pointwise_tile: spike on an unmapped column");
      for (std::uint32_t r = 0; r < 8; ++r) {
        if (!((bits >> r) & 1u)) continue;
        sums[r] += weights[col];
        if (c * 8 + r < valid_positions) out.stats.pe_active_ops += cfg.ops_per_pe_cycle;
      }
    }
    out.rows.push_back(sums);
    out.emit_cycle.push_back(c);
  }
  out.stats.cycles = inputs.size();
  return out;
}

// ---------------------------------------------------------------------------
// Group accumulation

/// Partial sums from one PE array, tagged with the time-step lane they belong to.
struct LaneVector {
  std::uint32_t lane = 0;
  PsumVector sums{};
};

struct GroupFlags {
  bool first = true;
  bool last = true;
};

/// Reduces the block outputs of one channel group into the temp SRAM at
/// `addr` (8 int32 words). `shift` weights bitplane contributions. On the
/// last group the completed currents are returned and the words released.
inline std::optional<std::array<std::int32_t, 8>> accumulate_group(std::span<const LaneVector> block_outputs, std::uint32_t lane,
                                                                 SramBank& temp, std::uint64_t addr, GroupFlags flags,
                                                                 std::uint32_t shift = 0) {
  std::array<std::int64_t, 8> total{};
  for (const LaneVector& v : block_outputs) {
    if (v.lane != lane) {
      throw Error("accumulate_group: partial sum tagged lane " + std::to_string(v.lane) + " mixed into lane " + std::to_string(lane));
    }
    for (std::size_t i = 0; i < 8; ++i) total[i] += v.sums[i];
  }
  for (auto& t : total) t = std::int64_t{checked_i32(t, "group sum")} * (std::int64_t{1} << shift);

  std::array<std::uint64_t, 8> words{};
  if (!flags.first) {
    if (!temp.is_written(addr, 8)) {
      throw Error("accumulate_group: continuing group at temp address " + std::to_string(addr) + " without first-group initialization");
    }
    temp.read(addr, words);
    for (std::size_t i = 0; i < 8; ++i) total[i] += static_cast<std::int32_t>(static_cast<std::uint32_t>(words[i]));
  }
  std::array<std::int32_t, 8> result{};
  for (std::size_t i = 0; i < 8; ++i) result[i] = checked_i32(total[i], "temp partial sum");
  if (flags.last) {
    temp.release(addr, 8);
    return result;
  }
  for (std::size_t i = 0; i < 8; ++i) words[i] = static_cast<std::uint32_t>(result[i]);
  temp.write(addr, words);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Layer planning

enum class TileKind : std::uint8_t { kConv3x3, kPointwise, kMatMul };

inline const char* tile_kind_name(TileKind k) {
  switch (k) {
    case TileKind::kConv3x3: return "conv3x3";
    case TileKind::kPointwise: return "pointwise";
    case TileKind::kMatMul: return "matmul";
  }
  return "?";
}

/// Where a layer's second operand lives.
enum class OperandSource : std::uint8_t { kWeightSram, kSpikeSram, kTempSram };

/// Geometry of one layer mapped onto the PE array. Pointwise and matmul
/// layers use height = 1 and width = number of positions (tokens).
struct PeLayerShape {
  std::string name;
  TileKind kind = TileKind::kConv3x3;
  std::uint32_t in_ch = 0;
  std::uint32_t out_ch = 0;
  std::uint32_t height = 1;
  std::uint32_t width = 0;
  std::uint32_t stride = 1;
  bool encoding = false;  // 8 bitplanes of an image; currents shared by all time steps
  OperandSource operands = OperandSource::kWeightSram;
  bool per_lane_operands = false;  // each time step has its own second operand (matmul)

  std::uint32_t out_height() const { return kind == TileKind::kConv3x3 ? (height - 1) / stride + 1 : height; }
  std::uint32_t out_width() const { return kind == TileKind::kConv3x3 ? (width - 1) / stride + 1 : width; }
  std::uint32_t out_positions() const { return out_height() * out_width(); }
  std::uint32_t positions() const { return height * width; }
  std::uint32_t kernel_size() const { return kind == TileKind::kConv3x3 ? 9 : 1; }
  std::uint64_t weight_words() const { return std::uint64_t{out_ch} * in_ch * kernel_size(); }
  std::uint32_t strips() const { return (width + 7) / 8; }
  std::uint32_t chunks() const { return (positions() + 63) / 64; }
};

struct TileJob {
  TileKind kind = TileKind::kConv3x3;
  std::uint32_t out_channel = 0;
  std::uint32_t group_begin = 0;
  std::uint32_t group_end = 0;  // input channels [begin, end)
  std::uint32_t tile = 0;       // conv: column strip; pointwise: 64-position chunk
  std::uint32_t lane_begin = 0;
  std::uint32_t lane_count = 1;
  std::uint32_t bitplane = 0;
  bool first_group = true;
  bool last_group = true;
  std::uint64_t cycles = 0;
};

inline std::uint32_t channel_group_size(TileKind kind, const AccelConfig& cfg) {
  return kind == TileKind::kConv3x3 ? cfg.num_blocks : cfg.num_blocks * cfg.pe_cols;
}

/// Tile jobs for one layer. Weights stay resident across the spatial tiles of
/// one (output channel, group); the serial schedule repeats everything per
/// time step.
inline std::vector<TileJob> plan_layer(const PeLayerShape& s, const AccelConfig& cfg, const Schedule& sched) {
  cfg.validate();
  sched.validate();
  if (s.in_ch == 0 || s.out_ch == 0 || s.width == 0 || s.height == 0) throw ShapeError(s.name + ": empty layer");
  if (s.kind != TileKind::kConv3x3 && (s.stride != 1 || s.height != 1)) throw ShapeError(s.name + ": pointwise layers are 1-D");
  if (s.encoding && s.kind != TileKind::kConv3x3) throw ShapeError(s.name + ": encoding layer must be a 3x3 conv");
  const std::uint32_t T = sched.time_steps;
  const std::uint32_t gsize = channel_group_size(s.kind, cfg);
  const std::uint32_t groups = (s.in_ch + gsize - 1) / gsize;
  const std::uint32_t planes = s.encoding ? 8 : 1;
  const std::uint32_t tiles = s.kind == TileKind::kConv3x3 ? s.strips() : s.chunks();

  std::vector<TileJob> jobs;
  jobs.reserve(std::size_t{T} * s.out_ch * groups * planes * tiles);
  auto emit = [&](std::uint32_t lane_begin, std::uint32_t lane_count) {
    for (std::uint32_t oc = 0; oc < s.out_ch; ++oc)
      for (std::uint32_t g = 0; g < groups; ++g)
        for (std::uint32_t b = 0; b < planes; ++b)
          for (std::uint32_t tile = 0; tile < tiles; ++tile) {
            TileJob j;
            j.kind = s.kind;
            j.out_channel = oc;
            j.group_begin = g * gsize;
            j.group_end = std::min(s.in_ch, (g + 1) * gsize);
            j.tile = tile;
            j.lane_begin = lane_begin;
            j.lane_count = lane_count;
            j.bitplane = b;
            j.first_group = g == 0 && b == 0;
            j.last_group = g + 1 == groups && b + 1 == planes;
            if (s.kind == TileKind::kConv3x3) {
              j.cycles = s.height + 2;
            } else {
              const std::uint32_t len = std::min<std::uint32_t>(64, s.positions() - tile * 64);
              j.cycles = (len + 7) / 8;
            }
            jobs.push_back(j);
          }
  };
  if (sched.is_parallel()) {
    emit(0, s.encoding ? 1 : T);
  } else {
    for (std::uint32_t t = 0; t < T; ++t) emit(t, 1);
  }
  return jobs;
}

/// Cycle totals implied by a job list, without touching data.
inline CycleStats planned_cycles(const std::vector<TileJob>& jobs, const AccelConfig& cfg) {
  CycleStats st;
  for (const auto& j : jobs) {
    st.cycles += j.cycles;
    if (j.kind == TileKind::kConv3x3) st.fill_cycles += 2;
    if (j.last_group) st.drain_cycles += cfg.drain_cycles;
  }
  if (!cfg.overlap_drain) st.cycles += st.drain_cycles;
  return st;
}

// ---------------------------------------------------------------------------
// Layer execution

enum class ReleaseTarget : std::uint8_t {
  kSpikes,   // LIF spikes to the spike temp SRAM, then off-chip
  kTemp,     // raw currents stay on chip in the temp SRAM (matmul intermediates)
  kOffchip,  // raw currents leave the chip (classifier logits)
};

struct PeLayerOptions {
  std::span<const std::int32_t> bias;  // per output channel; empty = zero
  std::optional<LifParams> lif;
  std::uint32_t post_shift = 0;  // arithmetic shift applied to released currents
  std::int32_t scale_exp = 0;
  ReleaseTarget release = ReleaseTarget::kSpikes;
  std::uint64_t operand_base = 0;  // temp/spike SRAM base address of per-lane operands
  std::uint64_t result_base = 0;   // temp SRAM base address for ReleaseTarget::kTemp
};

struct PeLayerResult {
  AccTensor currents;                 // [T, out_ch, out_positions]
  std::optional<SpikeTensor> spikes;  // [T, out_ch, out_positions] when a LIF is fused
  CycleStats stats;
};

namespace detail {

/// Tracks which slice of a layer-wide buffer is staged on chip. A buffer that
/// fits is loaded once; otherwise each slice is reloaded whenever it changes.
class Stager {
 public:
  Stager(SramBank& bank, std::uint64_t& offchip_bytes, std::uint64_t total_words, std::uint64_t slice_words)
      : bank_(bank), offchip_(offchip_bytes), resident_(total_words <= bank.capacity_words()), slice_words_(slice_words) {
    if (resident_ && total_words > 0) load(0, total_words);
  }
  bool resident() const { return resident_; }
  /// Makes slice `key` available; returns its base address.
  std::uint64_t use(std::uint64_t key, std::uint64_t global_base) {
    if (resident_) return global_base;
    if (!has_current_ || current_ != key) {
      load(0, slice_words_);
      current_ = key;
      has_current_ = true;
    }
    return 0;
  }

 private:
  void load(std::uint64_t addr, std::uint64_t words) {
    bank_.count_write(addr, words);
    offchip_ += words * bank_.word_bits() / 8;
  }
  SramBank& bank_;
  std::uint64_t& offchip_;
  bool resident_;
  std::uint64_t slice_words_;
  std::uint64_t current_ = 0;
  bool has_current_ = false;
};

inline std::int32_t sign_extend32(std::uint64_t w) { return static_cast<std::int32_t>(static_cast<std::uint32_t>(w)); }

}  // namespace detail

/// Executes the jobs of one layer.
///
/// `input(t, c, y, x, bitplane)` returns an input spike (pointwise layers use
/// y = 0, x = position); `weight(t, oc, ic, k)` returns the second operand
/// (k indexes the 3x3 kernel row-major, 0 for pointwise).
template <class Input, class Weight>
PeLayerResult run_pe_layer(const PeLayerShape& s, const std::vector<TileJob>& jobs, const Schedule& sched, const AccelConfig& cfg,
                           BankSet& banks, const PeLayerOptions& opt, Input&& input, Weight&& weight) {
  cfg.validate();
  sched.validate();
  const std::uint32_t T = sched.time_steps;
  const bool parallel = sched.is_parallel();
  const bool conv = s.kind == TileKind::kConv3x3;
  const std::uint32_t K = s.kernel_size();
  const std::uint32_t P_out = s.out_positions();
  const std::uint32_t strips = s.strips();
  if (!opt.bias.empty() && opt.bias.size() != s.out_ch) throw ShapeError(s.name + ": bias size mismatch");
  if (opt.lif && opt.release != ReleaseTarget::kSpikes) throw ConfigError(s.name + ": fused LIF must release spikes");

  PeLayerResult res;
  res.currents = AccTensor({T, s.out_ch, P_out}, opt.scale_exp);
  if (opt.lif) res.spikes = SpikeTensor({T, s.out_ch, P_out});
  auto cur_out = res.currents.mutable_data();

  std::optional<UnrolledLifUnit> unit;
  if (opt.lif && parallel) unit.emplace(*opt.lif, sched.selectors);

  // Staging of the layer-wide weight and input buffers.
  const std::uint32_t in_lanes = s.encoding ? 8 : T;
  const std::uint64_t rows_per_ch = conv ? std::uint64_t{s.height} * strips : (s.positions() + 7) / 8;
  const std::uint32_t gsize = channel_group_size(s.kind, cfg);
  std::optional<detail::Stager> weight_stage;
  if (s.operands == OperandSource::kWeightSram) {
    weight_stage.emplace(banks.weight, banks.offchip_read_bytes, s.weight_words(), std::uint64_t{s.in_ch} * K);
  }
  detail::Stager input_stage(banks.spike_in, banks.offchip_read_bytes, std::uint64_t{in_lanes} * s.in_ch * rows_per_ch,
                             std::uint64_t{in_lanes} * gsize * rows_per_ch);

  // Temp SRAM slice for one output channel (one lane when serial).
  const std::uint32_t lane_slots = parallel ? T : 1;
  const std::uint64_t temp_words_per_lane = conv ? std::uint64_t{s.height} * strips * 8 : std::uint64_t{s.chunks()} * 64;
  auto temp_addr = [&](std::uint32_t lane, std::uint32_t tile, std::uint32_t row) -> std::uint64_t {
    const std::uint64_t slot = parallel ? lane : 0;
    const std::uint64_t off = conv ? (std::uint64_t{row} * strips + tile) * 8 : (std::uint64_t{tile} * 8 + row) * 8;
    return slot * temp_words_per_lane + off;
  };
  if (lane_slots * temp_words_per_lane > banks.temp.capacity_words()) {
    throw CapacityError(s.name + ": partial-sum footprint of " + std::to_string(lane_slots * temp_words_per_lane) +
                        " words exceeds temp SRAM");
  }

  std::optional<std::pair<std::uint32_t, std::uint32_t>> loaded;  // (oc, group_begin) held in the arrays
  std::uint32_t loaded_lane = ~0u;

  std::vector<std::int32_t> wbuf;
  for (const TileJob& job : jobs) {
    if (job.kind != s.kind) throw ConfigError(s.name + ": job kind does not match layer");
    if (parallel && !s.encoding && job.lane_count != T) throw ConfigError(s.name + ": job lane count does not match T");
    const std::uint32_t nch = job.group_end - job.group_begin;
    if (nch == 0 || nch > gsize) throw ShapeError(s.name + ": bad channel group");
    const std::uint32_t oc = job.out_channel;

    // Second-operand fetch: once per (output channel, group) for shared weights.
    const bool refetch = !loaded || loaded->first != oc || loaded->second != job.group_begin ||
                         (!parallel && loaded_lane != job.lane_begin);
    if (refetch) {
      const std::uint64_t words = std::uint64_t{nch} * K;
      if (s.operands == OperandSource::kWeightSram) {
        const std::uint64_t base = weight_stage->use(oc, std::uint64_t{oc} * s.in_ch * K);
        banks.weight.count_read(base + std::uint64_t{job.group_begin} * K, words);
      } else {
        SramBank& bank = s.operands == OperandSource::kTempSram ? banks.temp : banks.spike_in;
        const std::uint32_t lanes = s.per_lane_operands ? job.lane_count : 1;
        for (std::uint32_t l = 0; l < lanes; ++l) {
          const std::uint64_t lane_off = s.per_lane_operands ? std::uint64_t{job.lane_begin + l} * s.weight_words() : 0;
          bank.count_read(opt.operand_base + lane_off + std::uint64_t{oc} * s.in_ch * K + std::uint64_t{job.group_begin} * K, words);
        }
      }
      loaded = {oc, job.group_begin};
      loaded_lane = job.lane_begin;
    }
    const std::uint64_t in_base =
        input_stage.use((std::uint64_t{oc} << 32) | job.group_begin, std::uint64_t{in_lanes} * job.group_begin * rows_per_ch);

    // Released currents of this job, [lane][row][8].
    const std::uint32_t rows = conv ? s.height : job.cycles;
    std::vector<std::array<std::int32_t, 8>> released(std::size_t{job.lane_count} * rows);
    std::uint64_t job_active = 0;

    for (std::uint32_t l = 0; l < job.lane_count; ++l) {
      const std::uint32_t lane = job.lane_begin + l;
      const std::uint32_t data_lane = s.encoding ? job.bitplane : lane;
      std::vector<TileOutput> outs;
      if (conv) {
        const std::uint32_t x0 = job.tile * 8;
        const std::uint32_t valid = std::min<std::uint32_t>(8, s.width - x0);
        outs.reserve(nch);
        for (std::uint32_t c = job.group_begin; c < job.group_end; ++c) {
          std::vector<RowWindow> windows(s.height + 2, 0);
          for (std::uint32_t y = 0; y < s.height; ++y) {
            RowWindow w = 0;
            for (std::uint32_t j = 0; j < 10; ++j) {
              const long x = static_cast<long>(x0) - 1 + static_cast<long>(j);
              if (x < 0 || x >= static_cast<long>(s.width)) continue;
              if (input(lane, c, y, static_cast<std::uint32_t>(x), job.bitplane)) w |= static_cast<RowWindow>(1u << j);
            }
            windows[y + 1] = w;
            banks.spike_in.count_read(in_base + (std::uint64_t{data_lane} * nch + (c - job.group_begin)) * rows_per_ch +
                                          std::uint64_t{y} * strips + job.tile,
                                      1);
          }
          wbuf.resize(9);
          for (std::uint32_t k = 0; k < 9; ++k) wbuf[k] = weight(lane, oc, c, k);
          outs.push_back(conv3x3_tile(windows, wbuf, valid, cfg));
        }
      } else {
        const std::uint32_t pos0 = job.tile * 64;
        const std::uint32_t len = std::min<std::uint32_t>(64, s.positions() - pos0);
        for (std::uint32_t c0 = job.group_begin; c0 < job.group_end; c0 += cfg.pe_cols) {
          const std::uint32_t c1 = std::min(job.group_end, c0 + cfg.pe_cols);
          std::vector<ColumnBits> cols(job.cycles);
          for (std::uint32_t cyc = 0; cyc < job.cycles; ++cyc) {
            for (std::uint32_t c = c0; c < c1; ++c) {
              std::uint8_t bits = 0;
              for (std::uint32_t r = 0; r < 8; ++r) {
                const std::uint32_t p = pos0 + cyc * 8 + r;
                if (p < s.positions() && input(lane, c, 0, p, 0)) bits |= static_cast<std::uint8_t>(1u << r);
              }
              cols[cyc][c - c0] = bits;
              banks.spike_in.count_read(in_base + (std::uint64_t{data_lane} * nch + (c - job.group_begin)) * rows_per_ch +
                                            (pos0 / 8 + cyc),
                                        1);
            }
          }
          wbuf.resize(c1 - c0);
          for (std::uint32_t c = c0; c < c1; ++c) wbuf[c - c0] = weight(lane, oc, c, 0);
          outs.push_back(pointwise_tile(cols, wbuf, len, cfg));
        }
      }
      for (const auto& o : outs) job_active += o.stats.pe_active_ops;

      // 12-block reduction into the temp SRAM, one output vector at a time.
      std::vector<LaneVector> group(outs.size());
      for (std::uint32_t row = 0; row < rows; ++row) {
        for (std::size_t b = 0; b < outs.size(); ++b) group[b] = LaneVector{lane, outs[b].rows[row]};
        auto done = accumulate_group(group, lane, banks.temp, temp_addr(lane, job.tile, row),
                                     GroupFlags{job.first_group, job.last_group}, s.encoding ? job.bitplane : 0);
        if (done) released[std::size_t{l} * rows + row] = *done;
      }
    }

    res.stats.cycles += job.cycles;
    res.stats.pe_active_ops += job_active;
    if (conv) res.stats.fill_cycles += 2;
    if (!job.last_group) continue;

    // Release: bias, shift, then LIF over the time-step lanes.
    res.stats.drain_cycles += cfg.drain_cycles;
    if (!cfg.overlap_drain) res.stats.cycles += cfg.drain_cycles;
    const std::int64_t bias = opt.bias.empty() ? 0 : opt.bias[oc];
    for (std::uint32_t row = 0; row < rows; ++row) {
      for (std::uint32_t r = 0; r < 8; ++r) {
        std::uint32_t pos;
        if (conv) {
          const std::uint32_t x = job.tile * 8 + r;
          if (x >= s.width || row % s.stride || x % s.stride) continue;
          pos = (row / s.stride) * s.out_width() + x / s.stride;
        } else {
          pos = job.tile * 64 + row * 8 + r;
          if (pos >= s.positions()) continue;
        }
        std::array<std::int32_t, 4> lane_cur{};
        const std::uint32_t lanes_out = (parallel && s.encoding) ? T : job.lane_count;
        for (std::uint32_t l = 0; l < lanes_out; ++l) {
          const std::uint32_t src = s.encoding && parallel ? 0 : l;
          const std::int64_t v = std::int64_t{released[std::size_t{src} * rows + row][r]} + bias;
          lane_cur[l] = checked_i32(v >> opt.post_shift, "released current");
          const std::uint32_t t = job.lane_begin + l;
          cur_out[(std::size_t{t} * s.out_ch + oc) * P_out + pos] = lane_cur[l];
        }
        if (!opt.lif) continue;
        if (parallel) {
          const UnrolledLifOutput o = unit->evaluate(lane_cur);
          for (std::uint32_t t = 0; t < T; ++t) {
            if (o.spikes[t]) res.spikes->set_flat((std::size_t{t} * s.out_ch + oc) * P_out + pos, true);
          }
        } else {
          const std::uint32_t t = job.lane_begin;
          const std::uint64_t maddr = std::uint64_t{oc} * P_out + pos;
          std::int32_t carry = 0;
          if (t > 0) {
            std::array<std::uint64_t, 1> w{};
            banks.membrane.read(maddr, w);
            carry = detail::sign_extend32(w[0]);
          }
          const LifStep st = lif_step(carry, lane_cur[0], *opt.lif);
          if (st.spike) res.spikes->set_flat((std::size_t{t} * s.out_ch + oc) * P_out + pos, true);
          if (t + 1 < T) {
            const std::array<std::uint64_t, 1> w{static_cast<std::uint32_t>(st.carry)};
            banks.membrane.write(maddr, w);
          }
        }
      }
    }

    // Output traffic for the released vectors.
    const std::uint32_t lanes_out = (parallel && s.encoding) ? T : job.lane_count;
    const std::uint64_t spike_words_per_lane = conv ? std::uint64_t{s.out_height()} * strips : std::uint64_t{s.chunks()} * 8;
    for (std::uint32_t l = 0; l < lanes_out; ++l) {
      const std::uint64_t slot = parallel ? l : 0;
      for (std::uint32_t row = 0; row < rows; ++row) {
        if (conv && row % s.stride) continue;
        const std::uint64_t pos0 = conv ? std::uint64_t{row / s.stride} * s.out_width() : std::uint64_t{job.tile} * 64 + row * 8;
        const std::uint64_t n = conv ? std::min<std::uint64_t>(8, s.width - job.tile * 8) : std::min<std::uint64_t>(8, P_out - pos0);
        switch (opt.release) {
          case ReleaseTarget::kSpikes:
            banks.spike_temp.count_write(
                slot * spike_words_per_lane + (conv ? std::uint64_t{row / s.stride} * strips + job.tile : std::uint64_t{job.tile} * 8 + row), 1);
            banks.offchip_write_bytes += 1;
            break;
          case ReleaseTarget::kTemp:
            if (conv) throw ConfigError(s.name + ": temp release is for matmul layers");
            banks.temp.count_write(opt.result_base + (std::uint64_t{job.lane_begin + l} * s.out_ch + oc) * P_out + pos0, n);
            break;
          case ReleaseTarget::kOffchip:
            banks.offchip_write_bytes += 4 * n;
            break;
        }
      }
    }
  }
  return res;
}

}  // namespace siaf
