// SPDX-License-Identifier: Apache-2.0
//
// JSON run reports. Object keys are sorted, so equal inputs give
// byte-identical documents.
//
// Top-level sections of a run report:
//   model         time_steps, input [c, h, w], tokens, dim, blocks, classes, parameters
//   schedule      kind, time_steps, selectors
//   cycles        totals, frames_per_second, utilization, per-layer breakdown
//   traffic       per-bank reads/writes/bytes, off-chip bytes, budget
//   energy        pJ split into memory/offchip/logic, per-bank pJ
//   sparsity      [{layer, zero_fraction}] in execution order
//   verification  performed, match, first mismatch, logits
#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "siaf/model.hpp"
#include "siaf/scheduler.hpp"

namespace siaf {

using Json = nlohmann::json;

inline constexpr const char* kReportSchema = "siaf-report/1";
inline constexpr double kPublishedFramesPerSecond = 46.72;

inline std::uint64_t parameter_count(const ModelConfig& cfg) {
  std::uint64_t n = 0;
  auto layer = [&](auto& self, const LayerSpec& spec) -> void {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvBn3x3> || std::is_same_v<T, ConvBn1x1> || std::is_same_v<T, Linear>) {
            n += l.weights.size() + l.bias.size();
          } else if constexpr (std::is_same_v<T, IandResidual>) {
            for (const auto& inner : l.inner) self(self, inner);
          } else if constexpr (std::is_same_v<T, Ssa>) {
            n += 4 * (std::uint64_t{l.dim} * l.dim + l.dim);
          }
        },
        spec.op);
  };
  for (const auto& l : cfg.tokenizer) layer(layer, l);
  for (const auto& b : cfg.blocks) {
    layer(layer, LayerSpec{b.attention});
    layer(layer, LayerSpec{b.mlp});
  }
  return n + cfg.head.weights.size() + cfg.head.bias.size();
}

inline Json model_json(const ModelConfig& cfg) {
  const auto [tokens, dim] = token_shape(cfg);
  return Json{{"time_steps", cfg.time_steps},
              {"input", {cfg.in_channels, cfg.in_height, cfg.in_width}},
              {"tokens", tokens},
              {"dim", dim},
              {"blocks", cfg.blocks.size()},
              {"classes", cfg.head.classes},
              {"parameters", parameter_count(cfg)}};
}

inline Json schedule_json(const Schedule& s) {
  std::string sel;
  for (int k = 2; k >= 0; --k) sel += ((s.selectors >> k) & 1) ? '1' : '0';
  Json j{{"kind", s.name()}, {"time_steps", s.time_steps}};
  j["selectors"] = s.is_parallel() ? Json(sel) : Json(nullptr);
  return j;
}

inline Json stats_json(const CycleStats& s) {
  return Json{{"cycles", s.cycles},
              {"fill_cycles", s.fill_cycles},
              {"drain_cycles", s.drain_cycles},
              {"vector_cycles", s.vector_cycles},
              {"pe_active_ops", s.pe_active_ops}};
}

inline Json accel_json(const AccelConfig& a) {
  return Json{{"pe_rows", a.pe_rows},
              {"pe_cols", a.pe_cols},
              {"arrays_per_block", a.arrays_per_block},
              {"num_blocks", a.num_blocks},
              {"total_pes", a.total_pes()},
              {"clock_hz", a.clock_hz},
              {"ops_per_pe_cycle", a.ops_per_pe_cycle},
              {"peak_gsops", a.peak_gsops()},
              {"overlap_drain", a.overlap_drain},
              {"vector_lanes", a.vector_lanes}};
}

inline Json cycles_json(const RunReport& r) {
  Json j = stats_json(r.total);
  j["cycles_with_drain_overlap"] = r.total.cycles_with_overlap(r.accel);
  j["cycles_without_drain_overlap"] = r.total.cycles_without_overlap(r.accel);
  j["frames_per_second"] = r.frames_per_second();
  j["latency_seconds"] = r.latency_seconds();
  j["utilization"] = r.total.utilization(r.accel);
  j["accelerator"] = accel_json(r.accel);
  Json layers = Json::array();
  for (const LayerReport& l : r.layers) {
    Json e = stats_json(l.stats);
    e["name"] = l.name;
    e["kind"] = l.kind;
    e["weight_reads"] = l.weight_reads;
    e["weight_words"] = l.weight_words;
    e["membrane_reads"] = l.membrane_reads;
    e["membrane_writes"] = l.membrane_writes;
    layers.push_back(std::move(e));
  }
  j["layers"] = std::move(layers);
  return j;
}

inline Json traffic_json(const RunReport& r) {
  Json banks = Json::object();
  std::uint64_t budget = 0;
  for (const auto& [name, b] : r.traffic.banks) {
    banks[name] = Json{{"reads", b.reads},
                       {"writes", b.writes},
                       {"read_bytes", b.read_bytes},
                       {"write_bytes", b.write_bytes},
                       {"capacity_bytes", b.capacity_bytes},
                       {"word_bits", b.word_bits}};
    if (name != "membrane") budget += b.capacity_bytes;
  }
  return Json{{"banks", std::move(banks)},
              {"offchip_read_bytes", r.traffic.offchip_read_bytes},
              {"offchip_write_bytes", r.traffic.offchip_write_bytes},
              {"sram_budget_bytes", budget},
              {"membrane_bytes", r.membrane_bytes},
              {"membrane_bank_bytes", r.membrane_bank_bytes}};
}

inline Json energy_json(const EnergyReport& e) {
  return Json{{"memory_pj", e.memory_pj},
              {"offchip_pj", e.offchip_pj},
              {"logic_pj", e.logic_pj},
              {"total_pj", e.total_pj},
              {"memory_fraction", e.memory_fraction},
              {"per_bank_pj", e.per_bank_pj},
              {"note", "per-access coefficients are model inputs; not comparable to measured chip power"}};
}

inline Json sparsity_json(const RunReport& r) {
  Json j = Json::array();
  for (const auto& [name, s] : r.sparsity) j.push_back(Json{{"layer", name}, {"zero_fraction", s}});
  return j;
}

struct Verification {
  bool performed = false;
  bool match = false;
  std::optional<TraceMismatch> mismatch;
};

inline Json verification_json(const Verification& v, const AccTensor& logits) {
  Json j{{"performed", v.performed}, {"match", v.performed ? Json(v.match) : Json(nullptr)}};
  if (v.mismatch) {
    j["first_mismatch"] = Json{{"layer", v.mismatch->layer},
                               {"time_step", v.mismatch->time_step},
                               {"index", v.mismatch->index},
                               {"expected", v.mismatch->expected},
                               {"actual", v.mismatch->actual},
                               {"reason", v.mismatch->reason}};
  } else {
    j["first_mismatch"] = nullptr;
  }
  j["logits"] = std::vector<std::int32_t>(logits.data().begin(), logits.data().end());
  j["logits_scale_exp"] = logits.scale_exp();
  return j;
}

inline Json run_report_json(const ModelConfig& cfg, const ExecuteResult& r, const Verification& v = {}) {
  return Json{{"schema", kReportSchema},
              {"model", model_json(cfg)},
              {"schedule", schedule_json(r.report.schedule)},
              {"cycles", cycles_json(r.report)},
              {"traffic", traffic_json(r.report)},
              {"energy", energy_json(r.report.energy)},
              {"sparsity", sparsity_json(r.report)},
              {"verification", verification_json(v, r.logits)}};
}

inline Json comparison_json(const ModelConfig& cfg, const ScheduleComparison& c) {
  auto side = [](const RunReport& r) {
    Json j = stats_json(r.total);
    j["pe_cycles"] = r.total.cycles - r.total.vector_cycles;
    j["frames_per_second"] = r.frames_per_second();
    return j;
  };
  return Json{{"schema", kReportSchema},
              {"model", model_json(cfg)},
              {"time_steps", c.time_steps},
              {"parallel", side(c.parallel)},
              {"serial", side(c.serial)},
              {"weight_reads", {{"parallel", c.weight_reads_parallel}, {"serial", c.weight_reads_serial}}},
              {"weight_read_reduction", c.weight_read_reduction},
              {"per_layer_ratio_exact", c.per_layer_ratio_exact},
              {"membrane_bytes", {{"parallel", c.membrane_bytes_parallel}, {"serial", c.membrane_bytes_serial}}},
              {"membrane_traffic_words", {{"parallel", c.membrane_traffic_parallel}, {"serial", c.membrane_traffic_serial}}},
              {"latency_ratio", c.latency_ratio},
              {"logits_equal", c.logits_equal},
              {"reported_external_reduction",
               {{"value", ScheduleComparison::kReportedExternalReduction},
                {"note", "measured against a different published design whose access pattern is unpublished; not reproduced"}}}};
}

inline Json plan_stats_json(const ModelConfig& cfg, const std::vector<LayerPlan>& plans, const AccelConfig& accel,
                            const Schedule& sched) {
  const PlanSummary s = summarize(plans, accel);
  const double delta = s.frames_per_second - kPublishedFramesPerSecond;
  return Json{{"schema", kReportSchema},
              {"model", model_json(cfg)},
              {"schedule", schedule_json(sched)},
              {"accelerator", accel_json(accel)},
              {"sram_budget_bytes", default_budget().budget_bytes()},
              {"plan",
               {{"cycles", s.cycles},
                {"pe_cycles", s.pe_cycles},
                {"vector_cycles", s.vector_cycles},
                {"fill_cycles", s.fill_cycles},
                {"drain_cycles", s.drain_cycles},
                {"weight_words", s.weight_words},
                {"membrane_bytes", s.membrane_bytes},
                {"pe_layers", s.pe_layers},
                {"layers", plans.size()},
                {"frames_per_second", s.frames_per_second}}},
              {"published_comparison",
               {{"published_frames_per_second", kPublishedFramesPerSecond},
                {"simulated_frames_per_second", s.frames_per_second},
                {"delta_frames_per_second", delta},
                {"informational", true},
                {"explanation",
                 "published model dimensions and input pipeline are not fully specified; this config uses random "
                 "weights, generated shapes, no inter-layer overlap and a vector unit for pooling, residual and head"}}}};
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace siaf
