// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "siaf/cli.hpp"

namespace siaf {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out;
  std::string err;

  std::string first_err_line() const { return err.substr(0, err.find('\n')); }
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  cli::Harness h(out, err);
  Result r;
  r.code = h.main(std::move(args));
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json slurp_json(const fs::path& p) { return Json::parse(slurp(p)); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("siaf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void gen(const std::string& size = "tiny", std::uint64_t seed = 3, const std::string& T = "4") {
    const Result r = run({"gen", "--size", size, "--seed", std::to_string(seed), "--timesteps", T, "--config", path("m.cfg"),
                          "--weights", path("m.siaf"), "--input", path("img.raw")});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::vector<std::string> model_args() const {
    return {"--config", path("m.cfg"), "--weights", path("m.siaf"), "--input", path("img.raw")};
  }

  std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) const {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  }

  fs::path dir_;
};

TEST_F(Cli, GeneratedModelRuns) {
  gen();
  const Result r = run(with({"run", "--report", path("r.json")}, model_args()));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = slurp_json(path("r.json"));
  EXPECT_GT(j["cycles"]["cycles"].get<std::uint64_t>(), 0u);
  for (const char* s : {"model", "schedule", "cycles", "traffic", "energy", "sparsity", "verification"}) EXPECT_TRUE(j.contains(s)) << s;
}

TEST_F(Cli, SameSeedGivesByteIdenticalReports) {
  for (const char* cmd : {"run", "compare"}) {
    for (int i = 0; i < 2; ++i) {
      const Result r = run({cmd, "--size", "small", "--seed", "9", "--report", path("r" + std::to_string(i) + ".json")});
      ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(slurp(path("r0.json")), slurp(path("r1.json"))) << cmd;
  }
  run({"run", "--size", "small", "--seed", "10", "--report", path("r2.json")});
  EXPECT_NE(slurp(path("r0.json")).size(), 0u);
  EXPECT_NE(slurp(path("r2.json")), slurp(path("r1.json")));
}

TEST_F(Cli, CorruptMagicNamesOffset) {
  gen();
  {
    std::fstream f(path("m.siaf"), std::ios::in | std::ios::out | std::ios::binary);
    f.write("XIAF", 4);
  }
  const Result r = run(with({"run"}, model_args()));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.first_err_line(), "siaf: error kind=parse exit=2 at=" + path("m.siaf") + ":0: bad magic bytes (expected \"SIAF\")");
}

TEST_F(Cli, TruncatedWeightsNameOffset) {
  gen();
  const std::string bytes = slurp(path("m.siaf"));
  std::ofstream(path("m.siaf"), std::ios::binary) << bytes.substr(0, 100);
  const Result r = run(with({"run"}, model_args()));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.first_err_line().find("kind=parse exit=2 at=" + path("m.siaf") + ":"), std::string::npos) << r.err;
  EXPECT_NE(r.first_err_line().find("truncated"), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigErrorsNameLine) {
  gen();
  std::string cfg = slurp(path("m.cfg"));
  cfg.replace(cfg.find("maxpool"), 7, "minpool");
  std::ofstream(path("m.cfg"), std::ios::binary) << cfg;
  const Result r = run(with({"run"}, model_args()));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.first_err_line().find("at=" + path("m.cfg") + ":7:"), std::string::npos) << r.err;
}

TEST_F(Cli, FileAndUsageErrorsExitTwo) {
  EXPECT_EQ(run({"run", "--config", path("nope.cfg"), "--weights", path("nope.siaf")}).code, 2);
  EXPECT_EQ(run({"run", "--config", path("nope.cfg")}).code, 2);
  EXPECT_EQ(run({"run", "--bogus"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"run", "--timesteps", "3"}).code, 2);
  EXPECT_EQ(run({"run", "--schedule", "sideways"}).code, 2);
  EXPECT_EQ(run({"run", "--size", "huge"}).code, 2);
  const Result r = run({"run", "--input", path("nope.raw")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.first_err_line().rfind("siaf: error kind=", 0), 0u);
}

TEST_F(Cli, ImageShapeMismatchExitsTwo) {
  gen();
  save_image(generate_image(3, 4, 4, 1), path("small.raw"));
  const Result r = run({"run", "--config", path("m.cfg"), "--weights", path("m.siaf"), "--input", path("small.raw")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.first_err_line().find("kind=shape"), std::string::npos);
}

TEST_F(Cli, OverflowExitsThree) {
  ModelConfig cfg = generate_model(SizeClass::kTiny, 3, 4);
  auto& conv = std::get<ConvBn3x3>(cfg.tokenizer[0].op);
  conv.bias = AccTensor(conv.bias.shape(), std::vector<std::int32_t>(conv.bias.size(), std::numeric_limits<std::int32_t>::max() - 1),
                        conv.bias.scale_exp());
  save_model(cfg, path("m.cfg"), path("m.siaf"));
  save_image(ByteImage(3, 8, 8, std::vector<std::uint8_t>(192, 255)), path("img.raw"));
  const Result r = run(with({"run"}, model_args()));
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.first_err_line().find("kind=overflow exit=3"), std::string::npos) << r.err;
}

TEST_F(Cli, VerifySweepPasses) {
  const Result r = run({"verify", "--size", "tiny", "--sweep", "6", "--schedule", "both", "--jobs", "3", "--report", path("v.json")});
  EXPECT_EQ(r.code, 0) << r.out;
  const Json j = slurp_json(path("v.json"));
  EXPECT_EQ(j["verification"]["runs"].size(), 12u);
  EXPECT_TRUE(j["verification"]["match"].get<bool>());
}

TEST_F(Cli, VerifyTimeStepOne) {
  gen("tiny", 4, "1");
  EXPECT_EQ(run(with({"verify", "--schedule", "both"}, model_args())).code, 0);
}

TEST_F(Cli, VerifyDetectsFaultAndNamesLayer) {
  const Result r = run({"verify", "--size", "tiny", "--fault-layer", "tok.conv1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("MISMATCH seed=1 schedule=parallel layer tok.conv1 t="), std::string::npos) << r.out;
}

TEST_F(Cli, CompareReductionAndRatio) {
  ASSERT_EQ(run({"compare", "--size", "tiny", "--report", path("c4.json")}).code, 0);
  const Json c4 = slurp_json(path("c4.json"));
  EXPECT_DOUBLE_EQ(c4["weight_read_reduction"].get<double>(), 0.75);
  EXPECT_EQ(c4["membrane_bytes"]["parallel"].get<std::uint64_t>(), 0u);
  EXPECT_GT(c4["membrane_bytes"]["serial"].get<std::uint64_t>(), 0u);
  ASSERT_EQ(run({"compare", "--size", "tiny", "--timesteps", "1", "--report", path("c1.json")}).code, 0);
  const Json c1 = slurp_json(path("c1.json"));
  EXPECT_DOUBLE_EQ(c1["latency_ratio"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(c1["weight_read_reduction"].get<double>(), 0.0);
  ASSERT_EQ(run({"compare", "--size", "small", "--report", path("cs.json")}).code, 0);
  const double ratio = slurp_json(path("cs.json"))["latency_ratio"].get<double>();
  EXPECT_GT(ratio, 0.25);
  EXPECT_LE(ratio, 0.5);
}

TEST_F(Cli, StatsMatchFormulas) {
  const Result r = run({"stats", "--size", "paper-384", "--report", path("s.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = slurp_json(path("s.json"));
  EXPECT_EQ(j["accelerator"]["total_pes"].get<std::uint64_t>(), 8u * 9u * 4u * 12u);
  EXPECT_DOUBLE_EQ(j["accelerator"]["peak_gsops"].get<double>(), 8 * 9 * 4 * 12 * 2 * 500e6 / 1e9);
  EXPECT_EQ(j["sram_budget_bytes"].get<std::uint64_t>(), 142592u);
  const ModelConfig cfg = generate_model(SizeClass::kPaper384, 1, 4);
  const AccelConfig a;
  const PlanSummary s = summarize(compile(cfg, a, Schedule::parallel(4)), a);
  EXPECT_EQ(j["plan"]["cycles"].get<std::uint64_t>(), s.cycles);
  EXPECT_DOUBLE_EQ(j["plan"]["frames_per_second"].get<double>(), 500e6 / static_cast<double>(s.cycles));
  EXPECT_DOUBLE_EQ(j["published_comparison"]["published_frames_per_second"].get<double>(), 46.72);
}

TEST_F(Cli, EnergyCoefficientsFromConfig) {
  gen();
  ASSERT_EQ(run(with({"run", "--report", path("a.json")}, model_args())).code, 0);
  std::ofstream(path("m.cfg"), std::ios::app) << "energy spike_op=0 offchip_word=0\n";
  ASSERT_EQ(run(with({"run", "--report", path("b.json")}, model_args())).code, 0);
  const Json a = slurp_json(path("a.json")), b = slurp_json(path("b.json"));
  EXPECT_GT(a["energy"]["logic_pj"].get<double>(), 0.0);
  EXPECT_EQ(b["energy"]["logic_pj"].get<double>(), 0.0);
  EXPECT_EQ(b["energy"]["offchip_pj"].get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(a["energy"]["memory_pj"].get<double>(), b["energy"]["memory_pj"].get<double>());
}

TEST_F(Cli, GenIsLoadableAndSeedSensitive) {
  gen("tiny", 1);
  const std::string w1 = slurp(path("m.siaf")), c1 = slurp(path("m.cfg"));
  gen("tiny", 2);
  EXPECT_EQ(slurp(path("m.cfg")), c1);
  EXPECT_NE(slurp(path("m.siaf")), w1);
  EXPECT_EQ(run(with({"run"}, model_args())).code, 0);
  EXPECT_EQ(run({"gen", "--size", "tiny"}).code, 2);
}

}  // namespace
}  // namespace siaf
