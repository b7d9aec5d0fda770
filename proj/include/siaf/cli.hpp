// SPDX-License-Identifier: Apache-2.0
//
// Command-line harness: run, verify, gen, compare, stats.
//
// Exit codes: 0 success, 1 verification mismatch, 2 usage/file/parse error,
// 3 simulation error. Errors print one line first:
//   siaf: error kind=<kind> exit=<code> at=<location>: <message>
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "siaf/config_io.hpp"
#include "siaf/generate.hpp"
#include "siaf/reference.hpp"
#include "siaf/report.hpp"
#include "siaf/scheduler.hpp"

namespace siaf::cli {

enum ExitCode : int { kOk = 0, kMismatch = 1, kInputError = 2, kSimulationError = 3 };

enum class LogLevel : int { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

/// SIAF_LOG=error|warn|info|debug (default warn).
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("SIAF_LOG");
  if (!v) return LogLevel::kWarn;
  const std::string s(v);
  if (s == "error") return LogLevel::kError;
  if (s == "info") return LogLevel::kInfo;
  if (s == "debug") return LogLevel::kDebug;
  return LogLevel::kWarn;
}

struct RunSpec {
  std::string command;
  std::string config;
  std::string weights;
  std::string input;
  std::string size = "tiny";
  std::optional<std::uint32_t> time_steps;
  std::string schedule = "parallel";
  std::string report;
  std::uint64_t seed = 1;
  std::uint32_t sweep = 1;
  std::uint32_t jobs = 1;
  bool no_drain_overlap = false;
  std::string fault_layer;
};

/// Error carrying the exit code and location for the first output line.
class CliError : public Error {
 public:
  CliError(int code, std::string kind, std::string at, const std::string& what)
      : Error(what), code_(code), kind_(std::move(kind)), at_(std::move(at)) {}
  int code() const noexcept { return code_; }
  const std::string& kind() const noexcept { return kind_; }
  const std::string& at() const noexcept { return at_; }

 private:
  int code_;
  std::string kind_;
  std::string at_;
};

class Harness {
 public:
  Harness(std::ostream& out, std::ostream& err) : out_(out), err_(err), level_(log_level_from_env()) {}

  int main(std::vector<std::string> args);

  int cmd_run(const RunSpec& spec);
  int cmd_verify(const RunSpec& spec);
  int cmd_gen(const RunSpec& spec);
  int cmd_compare(const RunSpec& spec);
  int cmd_stats(const RunSpec& spec);

 private:
  struct Loaded {
    ModelConfig model;
    std::optional<EnergyModel> energy;
    ByteImage image;
  };

  void log(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) <= static_cast<int>(level_)) err_ << "siaf: " << msg << "\n";
  }

  static std::uint32_t default_time_steps(const RunSpec& s) { return s.time_steps.value_or(4); }

  /// Model, energy coefficients and input image for one seed.
  Loaded load(const RunSpec& spec, std::uint64_t seed, bool need_image = true) const {
    try {
      Loaded l;
      if (!spec.config.empty()) {
        if (spec.weights.empty()) throw CliError(kInputError, "usage", "--weights", "--config needs --weights");
        LoadedConfig c = load_model(spec.config, spec.weights);
        l.model = std::move(c.model);
        l.energy = std::move(c.energy);
        if (spec.time_steps) {
          l.model.time_steps = *spec.time_steps;
          validate(l.model);
        }
      } else {
        l.model = generate_model(parse_size_class(spec.size), seed, default_time_steps(spec));
      }
      if (need_image) {
        l.image = spec.input.empty() ? generate_image(l.model, seed) : load_image(spec.input);
        if (l.image.shape() != Shape{l.model.in_channels, l.model.in_height, l.model.in_width}) {
          throw CliError(kInputError, "shape", spec.input.empty() ? "-" : spec.input,
                         "input image " + shape_str(l.image.shape()) + " does not match model input");
        }
      }
      return l;
    } catch (const CliError&) {
      throw;
    } catch (const ParseError& e) {
      throw CliError(kInputError, "parse", e.source() + ":" + std::to_string(e.offset()), e.message());
    } catch (const Error& e) {
      throw CliError(kInputError, "config", spec.config.empty() ? "-" : spec.config, e.what());
    }
  }

  Schedule schedule(const std::string& name, std::uint32_t T) const {
    if (name == "parallel") return Schedule::parallel(T);
    if (name == "serial") return Schedule::serial(T);
    throw CliError(kInputError, "usage", "--schedule", "schedule must be serial or parallel, got '" + name + "'");
  }

  AccelConfig accel(const RunSpec& spec) const {
    AccelConfig a;
    a.overlap_drain = !spec.no_drain_overlap;
    return a;
  }

  static ExecuteOptions exec_options(const RunSpec& spec, const Loaded& l) {
    ExecuteOptions o;
    o.energy = l.energy;
    o.fault_layer = spec.fault_layer;
    return o;
  }

  /// Runs `f` under simulation error mapping.
  template <class F>
  static auto simulating(F&& f) {
    try {
      return f();
    } catch (const CliError&) {
      throw;
    } catch (const OverflowError& e) {
      throw CliError(kSimulationError, "overflow", "-", e.what());
    } catch (const CapacityError& e) {
      throw CliError(kSimulationError, "capacity", "-", e.what());
    } catch (const Error& e) {
      throw CliError(kSimulationError, "simulation", "-", e.what());
    }
  }

  void emit(const RunSpec& spec, const Json& j) {
    if (spec.report.empty()) return;
    std::ofstream f(spec.report, std::ios::binary);
    if (!f) throw CliError(kInputError, "io", spec.report, "cannot open report for writing");
    f << dump(j);
    if (!f) throw CliError(kInputError, "io", spec.report, "report write failed");
    log(LogLevel::kInfo, "wrote " + spec.report);
  }

  struct VerifyOutcome {
    std::uint64_t seed = 0;
    std::string schedule;
    std::optional<TraceMismatch> mismatch;
    bool logits_equal = true;
    std::optional<CliError> error;
  };

  VerifyOutcome verify_one(const RunSpec& spec, std::uint64_t seed, const std::string& sched_name) const {
    VerifyOutcome v;
    v.seed = seed;
    v.schedule = sched_name;
    try {
      const Loaded l = load(spec, seed);
      const Schedule sched = schedule(sched_name, l.model.time_steps);
      simulating([&] {
        const ForwardResult gold = model_forward(l.image, l.model);
        const ExecuteResult r = simulate(l.model, l.image, accel(spec), sched, exec_options(spec, l));
        v.mismatch = compare_traces(gold.trace, r.trace);
        v.logits_equal = gold.logits == r.logits;
        return 0;
      });
    } catch (const CliError& e) {
      v.error = e;
    }
    return v;
  }

  std::ostream& out_;
  std::ostream& err_;
  LogLevel level_;
};

inline int Harness::cmd_run(const RunSpec& spec) {
  const Loaded l = load(spec, spec.seed);
  const Schedule sched = schedule(spec.schedule, l.model.time_steps);
  const ExecuteResult r = simulating([&] { return simulate(l.model, l.image, accel(spec), sched, exec_options(spec, l)); });
  emit(spec, run_report_json(l.model, r));
  out_ << "schedule=" << sched.name() << " T=" << sched.time_steps << " cycles=" << r.report.total.cycles
       << " fps=" << std::fixed << std::setprecision(2) << r.report.frames_per_second()
       << " weight_reads=" << r.report.traffic.banks.at("weight").reads << " energy_pj=" << r.report.energy.total_pj
       << "\n";
  out_ << "logits=";
  for (std::size_t i = 0; i < r.logits.size(); ++i) out_ << (i ? "," : "") << r.logits.data()[i];
  out_ << "\n";
  return kOk;
}

inline int Harness::cmd_verify(const RunSpec& spec) {
  std::vector<std::string> schedules;
  if (spec.schedule == "both") {
    schedules = {"parallel", "serial"};
  } else {
    schedule(spec.schedule, 1);
    schedules = {spec.schedule};
  }
  struct Job {
    std::uint64_t seed;
    std::string schedule;
  };
  std::vector<Job> jobs;
  for (std::uint32_t i = 0; i < std::max(spec.sweep, 1u); ++i) {
    for (const auto& s : schedules) jobs.push_back({spec.seed + i, s});
  }
  std::vector<VerifyOutcome> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) results[k] = verify_one(spec, jobs[k].seed, jobs[k].schedule);
  };
  std::vector<std::thread> pool;
  const std::uint32_t n_threads = std::clamp<std::uint32_t>(spec.jobs, 1, static_cast<std::uint32_t>(jobs.size()));
  for (std::uint32_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Results are reported in job order, independent of thread timing.
  Json runs = Json::array();
  bool all_ok = true;
  for (const VerifyOutcome& v : results) {
    if (v.error) throw *v.error;
    const bool ok = !v.mismatch && v.logits_equal;
    all_ok = all_ok && ok;
    Json j{{"seed", v.seed}, {"schedule", v.schedule}, {"match", ok}};
    if (v.mismatch) {
      j["first_mismatch"] = Json{{"layer", v.mismatch->layer},
                                 {"time_step", v.mismatch->time_step},
                                 {"index", v.mismatch->index},
                                 {"expected", v.mismatch->expected},
                                 {"actual", v.mismatch->actual}};
      out_ << "MISMATCH seed=" << v.seed << " schedule=" << v.schedule << " " << v.mismatch->str() << "\n";
    } else if (!v.logits_equal) {
      out_ << "MISMATCH seed=" << v.seed << " schedule=" << v.schedule << " logits differ\n";
    }
    log(LogLevel::kInfo, "seed " + std::to_string(v.seed) + " " + v.schedule + (ok ? " ok" : " mismatch"));
    runs.push_back(std::move(j));
  }
  emit(spec, Json{{"schema", kReportSchema}, {"verification", {{"runs", runs}, {"match", all_ok}}}});
  out_ << (all_ok ? "OK" : "FAIL") << " runs=" << results.size() << "\n";
  return all_ok ? kOk : kMismatch;
}

inline int Harness::cmd_gen(const RunSpec& spec) {
  if (spec.config.empty() || spec.weights.empty()) {
    throw CliError(kInputError, "usage", "--config", "gen needs --config and --weights output paths");
  }
  ModelConfig cfg;
  try {
    cfg = generate_model(parse_size_class(spec.size), spec.seed, default_time_steps(spec));
    save_model(cfg, spec.config, spec.weights);
    if (!spec.input.empty()) save_image(generate_image(cfg, spec.seed), spec.input);
  } catch (const ParseError& e) {
    throw CliError(kInputError, "io", e.source(), e.message());
  } catch (const ConfigError& e) {
    throw CliError(kInputError, "usage", "--size", e.what());
  }
  out_ << "wrote " << spec.config << " " << spec.weights << (spec.input.empty() ? "" : " " + spec.input) << "\n";
  return kOk;
}

inline int Harness::cmd_compare(const RunSpec& spec) {
  const Loaded l = load(spec, spec.seed);
  const ScheduleComparison c = simulating([&] { return compare_schedules(l.model, l.image, accel(spec), exec_options(spec, l)); });
  emit(spec, comparison_json(l.model, c));
  auto row = [&](const std::string& what, const auto& p, const auto& s) {
    out_ << std::left << std::setw(24) << what << std::right << std::setw(16) << p << std::setw(16) << s << "\n";
  };
  out_ << std::left << std::setw(24) << "T=" + std::to_string(c.time_steps) << std::right << std::setw(16) << "parallel"
       << std::setw(16) << "serial" << "\n";
  row("cycles", c.parallel.total.cycles, c.serial.total.cycles);
  row("  pe cycles", c.parallel.total.cycles - c.parallel.total.vector_cycles,
      c.serial.total.cycles - c.serial.total.vector_cycles);
  row("  fill cycles", c.parallel.total.fill_cycles, c.serial.total.fill_cycles);
  row("  vector cycles", c.parallel.total.vector_cycles, c.serial.total.vector_cycles);
  row("weight sram reads", c.weight_reads_parallel, c.weight_reads_serial);
  row("membrane bytes", c.membrane_bytes_parallel, c.membrane_bytes_serial);
  row("membrane traffic words", c.membrane_traffic_parallel, c.membrane_traffic_serial);
  out_ << std::fixed << std::setprecision(4);
  out_ << "weight_read_reduction=" << c.weight_read_reduction << " latency_ratio=" << c.latency_ratio
       << " per_layer_exact=" << (c.per_layer_ratio_exact ? "yes" : "no") << " logits_equal=" << (c.logits_equal ? "yes" : "no")
       << "\n";
  out_ << "reported_external_reduction=" << ScheduleComparison::kReportedExternalReduction
       << " (different baseline design, not reproduced)\n";
  return kOk;
}

inline int Harness::cmd_stats(const RunSpec& spec) {
  const Loaded l = load(spec, spec.seed, false);
  const Schedule sched = schedule(spec.schedule, l.model.time_steps);
  const AccelConfig a = accel(spec);
  const auto plans = simulating([&] { return compile(l.model, a, sched); });
  const Json j = plan_stats_json(l.model, plans, a, sched);
  emit(spec, j);
  const PlanSummary s = summarize(plans, a);
  out_ << "pes=" << a.total_pes() << " peak_gsops=" << a.peak_gsops() << " sram_budget_bytes=" << default_budget().budget_bytes()
       << "\n";
  out_ << "layers=" << plans.size() << " cycles=" << s.cycles << " pe_cycles=" << s.pe_cycles << " vector_cycles=" << s.vector_cycles
       << " weight_words=" << s.weight_words << "\n";
  out_ << std::fixed << std::setprecision(2) << "fps=" << s.frames_per_second << " published_fps=" << kPublishedFramesPerSecond
       << " (informational)\n";
  return kOk;
}

inline int Harness::main(std::vector<std::string> args) {
  CLI::App app{"Spiking transformer reference model and accelerator simulator", "siaf"};
  app.require_subcommand(1);
  RunSpec spec;

  auto model_flags = [&](CLI::App* c) {
    c->add_option("--config", spec.config, "model config file");
    c->add_option("--weights", spec.weights, "weight tensor file");
    c->add_option("--size", spec.size, "generated model size: tiny, small or paper-384 (when no --config)");
    c->add_option("--timesteps", spec.time_steps, "time steps (1, 2 or 4)")->check(CLI::IsMember({1u, 2u, 4u}));
    c->add_option("--seed", spec.seed, "seed for generated models and inputs");
  };
  auto sim_flags = [&](CLI::App* c) {
    model_flags(c);
    c->add_option("--input", spec.input, "raw input image (default: generated from --seed)");
    c->add_option("--report", spec.report, "write the JSON report here");
    c->add_flag("--no-drain-overlap", spec.no_drain_overlap, "expose accumulator drain cycles");
  };

  CLI::App* run = app.add_subcommand("run", "simulate one inference");
  sim_flags(run);
  run->add_option("--schedule", spec.schedule, "serial or parallel");

  CLI::App* verify = app.add_subcommand("verify", "compare the simulator against the reference model");
  sim_flags(verify);
  verify->add_option("--schedule", spec.schedule, "serial, parallel or both");
  verify->add_option("--sweep", spec.sweep, "number of consecutive seeds");
  verify->add_option("--jobs", spec.jobs, "worker threads for --sweep");
  verify->add_option("--fault-layer", spec.fault_layer, "negate one layer's weights in the simulator");

  CLI::App* gen = app.add_subcommand("gen", "write a random model (config + weights)");
  gen->add_option("--size", spec.size, "tiny, small or paper-384");
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--timesteps", spec.time_steps, "time steps (1, 2 or 4)")->check(CLI::IsMember({1u, 2u, 4u}));
  gen->add_option("--config", spec.config, "output config path")->required();
  gen->add_option("--weights", spec.weights, "output weight path")->required();
  gen->add_option("--input", spec.input, "also write a generated input image here");

  CLI::App* compare = app.add_subcommand("compare", "parallel vs serial schedule");
  sim_flags(compare);

  CLI::App* stats = app.add_subcommand("stats", "compile only: PE count, cycles, throughput");
  model_flags(stats);
  stats->add_option("--schedule", spec.schedule, "serial or parallel");
  stats->add_option("--report", spec.report, "write the JSON report here");
  stats->add_flag("--no-drain-overlap", spec.no_drain_overlap, "expose accumulator drain cycles");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out_ << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err_ << "siaf: error kind=usage exit=" << kInputError << " at=argv: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (run->parsed()) return cmd_run(spec);
    if (verify->parsed()) return cmd_verify(spec);
    if (gen->parsed()) return cmd_gen(spec);
    if (compare->parsed()) return cmd_compare(spec);
    if (stats->parsed()) return cmd_stats(spec);
  } catch (const CliError& e) {
    err_ << "siaf: error kind=" << e.kind() << " exit=" << e.code() << " at=" << e.at() << ": " << e.what() << "\n";
    return e.code();
  }
  return kInputError;
}

}  // namespace siaf::cli
