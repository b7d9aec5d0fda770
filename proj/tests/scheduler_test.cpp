// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "siaf/generate.hpp"
#include "siaf/reference.hpp"
#include "siaf/scheduler.hpp"

namespace siaf {
namespace {

Schedule schedule_for(bool parallel, std::uint32_t T) { return parallel ? Schedule::parallel(T) : Schedule::serial(T); }

TEST(Execute, MatchesReferenceOnTinyAndSmall) {
  const AccelConfig accel;
  for (SizeClass size : {SizeClass::kTiny, SizeClass::kSmall}) {
    for (std::uint32_t T : {1u, 2u, 4u}) {
      const ModelConfig cfg = generate_model(size, 100 + T, T);
      const ByteImage img = generate_image(cfg, 7);
      const ForwardResult gold = model_forward(img, cfg);
      for (bool parallel : {true, false}) {
        const ExecuteResult r = simulate(cfg, img, accel, schedule_for(parallel, T));
        const auto diff = compare_traces(gold.trace, r.trace);
        ASSERT_FALSE(diff) << size_spec(size).name << " T=" << T << " " << (parallel ? "parallel" : "serial") << ": "
                           << diff->str();
        ASSERT_EQ(r.logits, gold.logits);
      }
    }
  }
}

TEST(Execute, TraceHasEveryReferenceEntry) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 1, 4);
  const ByteImage img = generate_image(cfg, 1);
  const ForwardResult gold = model_forward(img, cfg);
  const ExecuteResult r = simulate(cfg, img, AccelConfig{}, Schedule::parallel(4));
  ASSERT_EQ(r.trace.entries.size(), gold.trace.entries.size());
  for (std::size_t i = 0; i < gold.trace.entries.size(); ++i) EXPECT_EQ(r.trace.entries[i].name, gold.trace.entries[i].name);
}

TEST(Execute, SpikingActivityIsNotDegenerate) {
  const ModelConfig cfg = generate_model(SizeClass::kSmall, 3, 4);
  const ExecuteResult r = simulate(cfg, generate_image(cfg, 3), AccelConfig{}, Schedule::parallel(4));
  std::size_t live = 0;
  for (const auto& [name, s] : r.report.sparsity) live += (s > 0.0 && s < 1.0);
  EXPECT_GT(live, r.report.sparsity.size() / 2);
}

ModelConfig zero_bias(ModelConfig cfg) {
  auto clear = [](AccTensor& b) { b = AccTensor(b.shape(), b.scale_exp()); };
  for (auto& l : cfg.tokenizer) {
    if (auto* c = std::get_if<ConvBn3x3>(&l.op)) clear(c->bias);
  }
  for (auto& b : cfg.blocks) {
    auto& s = std::get<Ssa>(b.attention.inner[0].op);
    for (AccTensor* t : {&s.b_q, &s.b_k, &s.b_v, &s.b_proj}) clear(*t);
    for (auto& l : b.mlp.inner) {
      if (auto* lin = std::get_if<Linear>(&l.op)) clear(lin->bias);
    }
  }
  return cfg;
}

TEST(Execute, ZeroImageGivesHeadBias) {
  for (std::uint32_t T : {1u, 2u, 4u}) {
    const ModelConfig cfg = zero_bias(generate_model(SizeClass::kTiny, 9, T));
    const ByteImage img(cfg.in_channels, cfg.in_height, cfg.in_width);
    for (bool parallel : {true, false}) {
      const ExecuteResult r = simulate(cfg, img, AccelConfig{}, schedule_for(parallel, T));
      EXPECT_EQ(r.logits.shape(), cfg.head.bias.shape());
      EXPECT_TRUE(std::equal(r.logits.data().begin(), r.logits.data().end(), cfg.head.bias.data().begin()));
      EXPECT_EQ(r.report.total.pe_active_ops, 0u);
    }
  }
}

TEST(Execute, FaultInjectionIsDetectedAtTheLayer) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 4, 4);
  const ByteImage img = generate_image(cfg, 4);
  const ForwardResult gold = model_forward(img, cfg);
  for (const std::string layer : {"tok.conv2", "blk0.mlp.fc1", "blk0.attn.ssa.q_cur"}) {
    ExecuteOptions opts;
    opts.fault_layer = layer;
    const ExecuteResult r = simulate(cfg, img, AccelConfig{}, Schedule::parallel(4), opts);
    const auto diff = compare_traces(gold.trace, r.trace);
    ASSERT_TRUE(diff);
    EXPECT_EQ(diff->layer, layer);
  }
}

TEST(Execute, ScheduleTimeStepsMustMatchModel) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 4, 4);
  EXPECT_THROW(compile(cfg, AccelConfig{}, Schedule::parallel(2)), ConfigError);
}

TEST(Execute, ReportTotalsReconcile) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 5, 4);
  for (bool parallel : {true, false}) {
    const AccelConfig accel;
    const auto plans = compile(cfg, accel, schedule_for(parallel, 4));
    const ExecuteResult r = execute(plans, cfg, generate_image(cfg, 5), accel, schedule_for(parallel, 4));
    CycleStats sum;
    for (const auto& l : r.report.layers) sum += l.stats;
    EXPECT_EQ(sum, r.report.total);
    EXPECT_DOUBLE_EQ(r.report.frames_per_second(), accel.clock_hz / static_cast<double>(r.report.total.cycles));
    // executed cycles equal the plan
    EXPECT_EQ(r.report.total.cycles, summarize(plans, accel).cycles);
    const double u = r.report.total.utilization(accel);
    EXPECT_GT(u, 0.0);
    EXPECT_LE(u, 1.0);
    EXPECT_EQ(r.report.traffic.total_reads(), [&] {
      std::uint64_t n = 0;
      for (const auto& [_, b] : r.report.traffic.banks) n += b.reads;
      return n;
    }());
  }
}

TEST(Execute, DrainOverlapKnob) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 5, 4);
  const ByteImage img = generate_image(cfg, 5);
  AccelConfig on, off;
  off.overlap_drain = false;
  const auto a = simulate(cfg, img, on, Schedule::parallel(4));
  const auto b = simulate(cfg, img, off, Schedule::parallel(4));
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(b.report.total.cycles, a.report.total.cycles + a.report.total.drain_cycles);
  EXPECT_EQ(a.report.total.cycles_without_overlap(on), b.report.total.cycles);
}

TEST(CompareSchedules, WeightReadsAreOneToT) {
  for (std::uint32_t T : {1u, 2u, 4u}) {
    const ModelConfig cfg = generate_model(SizeClass::kTiny, 11, T);
    const ScheduleComparison c = compare_schedules(cfg, generate_image(cfg, 11), AccelConfig{});
    EXPECT_TRUE(c.per_layer_ratio_exact);
    EXPECT_EQ(c.weight_reads_serial, T * c.weight_reads_parallel);
    EXPECT_DOUBLE_EQ(c.weight_read_reduction, 1.0 - 1.0 / T);
    EXPECT_TRUE(c.logits_equal);
    EXPECT_EQ(c.membrane_bytes_parallel, 0u);
    EXPECT_EQ(c.membrane_traffic_parallel, 0u);
    if (T > 1) {
      EXPECT_GT(c.membrane_traffic_serial, 0u);
    } else {
      EXPECT_EQ(c.membrane_traffic_serial, 0u);
      EXPECT_EQ(c.membrane_bytes_serial, 0u);
      EXPECT_DOUBLE_EQ(c.latency_ratio, 1.0);
      EXPECT_EQ(c.parallel.traffic.total_reads(), c.serial.traffic.total_reads());
    }
  }
}

TEST(CompareSchedules, MembraneBytesAreFourPerNeuron) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 12, 4);
  const ScheduleComparison c = compare_schedules(cfg, generate_image(cfg, 12), AccelConfig{});
  // independent tally from the model shapes
  std::uint64_t neurons = 0;
  std::uint32_t ch = cfg.in_channels, h = cfg.in_height, w = cfg.in_width;
  for (const auto& l : cfg.tokenizer) {
    if (const auto* cv = std::get_if<ConvBn3x3>(&l.op)) {
      ch = cv->out_ch;
      neurons += std::uint64_t{ch} * h * w;
    } else if (std::holds_alternative<MaxPool2x2>(l.op)) {
      h /= 2;
      w /= 2;
    }
  }
  const std::uint64_t N = std::uint64_t{h} * w;
  for (const auto& b : cfg.blocks) {
    const auto& s = std::get<Ssa>(b.attention.inner[0].op);
    neurons += N * s.dim * 5;  // q, k, v, attn, proj
    for (const auto& l : b.mlp.inner) {
      if (const auto* lin = std::get_if<Linear>(&l.op)) neurons += N * lin->out_dim;
    }
  }
  EXPECT_EQ(c.membrane_bytes_serial, 4 * neurons);
}

TEST(CompareSchedules, SmallModelLatencyRatio) {
  const ModelConfig cfg = generate_model(SizeClass::kSmall, 13, 4);
  const ScheduleComparison c = compare_schedules(cfg, generate_image(cfg, 13), AccelConfig{});
  EXPECT_GT(c.latency_ratio, 0.25);
  EXPECT_LE(c.latency_ratio, 0.5);
  for (std::size_t i = 0; i < c.parallel.layers.size(); ++i) {
    EXPECT_LE(c.parallel.layers[i].stats.cycles, c.serial.layers[i].stats.cycles) << c.parallel.layers[i].name;
  }
}

TEST(Compile, CoverageCheckerRejectsBrokenPlans) {
  const AccelConfig accel;
  const PeLayerShape s{"x", TileKind::kConv3x3, 30, 2, 8, 20};
  const Schedule sched = Schedule::parallel(4);
  auto jobs = plan_layer(s, accel, sched);
  EXPECT_NO_THROW(check_job_coverage(s, jobs, sched, accel));
  auto dropped = jobs;
  dropped.pop_back();
  EXPECT_THROW(check_job_coverage(s, dropped, sched, accel), ConfigError);
  auto doubled = jobs;
  doubled.push_back(jobs.back());
  EXPECT_THROW(check_job_coverage(s, doubled, sched, accel), ConfigError);
}

TEST(Compile, CoverageOnRandomShapes) {
  std::mt19937_64 rng(21);
  const AccelConfig accel;
  for (int trial = 0; trial < 50; ++trial) {
    PeLayerShape s;
    s.name = "r";
    s.kind = trial % 3 == 0 ? TileKind::kPointwise : TileKind::kConv3x3;
    s.in_ch = 1 + rng() % 400;
    s.out_ch = 1 + rng() % 8;
    s.height = s.kind == TileKind::kConv3x3 ? 1 + rng() % 33 : 1;
    s.width = 1 + rng() % 300;
    s.encoding = s.kind == TileKind::kConv3x3 && trial % 5 == 0;
    for (std::uint32_t T : {1u, 2u, 4u})
      for (bool parallel : {true, false}) {
        const Schedule sched = schedule_for(parallel, T);
        EXPECT_NO_THROW(check_job_coverage(s, plan_layer(s, accel, sched), sched, accel));
      }
  }
}

TEST(Compile, LargestSizeClassPlanOnly) {
  const ModelConfig cfg = generate_model(SizeClass::kPaper384, 1, 4);
  const AccelConfig accel;
  const auto plans = compile(cfg, accel, Schedule::parallel(4));
  const PlanSummary s = summarize(plans, accel);
  EXPECT_GT(s.cycles, 0u);
  EXPECT_EQ(s.membrane_bytes, 0u);
  const auto serial = summarize(compile(cfg, accel, Schedule::serial(4)), accel);
  EXPECT_EQ(serial.weight_words, s.weight_words);
  EXPECT_GT(serial.membrane_bytes, 0u);
  EXPECT_GT(serial.cycles, s.cycles);
}

}  // namespace
}  // namespace siaf
