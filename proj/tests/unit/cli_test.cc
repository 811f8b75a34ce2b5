// Copyright 2026 The capreg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "capreg/cli.h"
#include "capreg/util/hash.h"
#include "json.hpp"

namespace capreg {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "capreg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(testing::TempDir()) /
           ("capreg_cli_" + std::string(testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  fs::path write_config(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }
  fs::path tiny() {
    return write_config("tiny.ini",
                        "[train]\nmode = dim-c\nbatch_size = 8\nsteps = 4\nseed = 1\n"
                        "[atlas]\nn_heads = 2\nunits_per_head = 8\nhidden_units = 16\n"
                        "[data]\nepisodes = 10\nepisode_length = 20\n[probe]\nsteps = 40\n");
  }
  fs::path dir_;
};

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"pretrain"}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"gradcheck", "--points", "3"}).code, cli::kConfigError);
}

TEST_F(CliTest, MissingModeNamesTheField) {
  const Result r = run_cli({"pretrain", "--config", write_config("bad.ini", "[train]\nsteps = 3\n").string(),
                            "--out-dir", (dir_ / "run").string()});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("train.mode"), std::string::npos) << r.err;
}

TEST_F(CliTest, MalformedValueReportsLine) {
  const Result r = run_cli({"pretrain", "--config",
                            write_config("bad.ini", "[train]\nmode = dim-c\nsteps = lots\n").string()});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({"pretrain", "--config", (dir_ / "absent.ini").string()}).code, cli::kConfigError);
}

TEST_F(CliTest, PretrainWritesThreeVerifiedArtifacts) {
  const fs::path run = dir_ / "run";
  const Result r = run_cli({"pretrain", "--config", tiny().string(), "--out-dir", run.string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_NE(r.out.find("mode=dim-c steps=4"), std::string::npos) << r.out;
  const auto m = nlohmann::json::parse(slurp(run / "manifest.json"));
  EXPECT_EQ(m["format"], "capreg-run-manifest");
  EXPECT_EQ(m["seed"], 1);
  ASSERT_EQ(m["artifacts"].size(), 3u);
  std::set<std::string> roles;
  for (const auto& a : m["artifacts"]) {
    roles.insert(a["role"].get<std::string>());
    const fs::path p = run / a["path"].get<std::string>();
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(sha256_file(p), a["sha256"].get<std::string>());
  }
  EXPECT_EQ(roles, (std::set<std::string>{"checkpoint", "loss_trace", "config"}));
  EXPECT_EQ(run_cli({"report", "--manifest", (run / "manifest.json").string()}).code, cli::kOk);

  // Tampering with an artifact breaks verification.
  std::ofstream(run / "trace.csv", std::ios::app) << "junk\n";
  EXPECT_EQ(run_cli({"report", "--manifest", (run / "manifest.json").string()}).code,
            cli::kCompatError);
}

TEST_F(CliTest, SameSeedGivesByteIdenticalTrace) {
  const fs::path cfg = tiny();
  ASSERT_EQ(run_cli({"pretrain", "--config", cfg.string(), "--out-dir", (dir_ / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"pretrain", "--config", cfg.string(), "--out-dir", (dir_ / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "trace.csv"), slurp(dir_ / "b" / "trace.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "checkpoint.bin"), slurp(dir_ / "b" / "checkpoint.bin"));
  ASSERT_EQ(run_cli({"pretrain", "--config", cfg.string(), "--seed", "2", "--out-dir",
                     (dir_ / "c").string()}).code, 0);
  EXPECT_NE(slurp(dir_ / "a" / "trace.csv"), slurp(dir_ / "c" / "trace.csv"));
}

TEST_F(CliTest, ProbeHeadlineMatchesReport) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(run_cli({"pretrain", "--config", tiny().string(), "--out-dir", run.string()}).code, 0);
  const Result r = run_cli({"probe", "--checkpoint", (run / "checkpoint.bin").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto j = nlohmann::json::parse(slurp(run / "report.json"));
  char expect[128];
  std::snprintf(expect, sizeof(expect), "mean_f1=%.17g mean_acc=%.17g\n",
                j["mean_f1"].get<double>(), j["mean_acc"].get<double>());
  EXPECT_EQ(r.out, expect);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1);
  const Result again = run_cli({"probe", "--checkpoint", (run / "checkpoint.bin").string(),
                                "--out-dir", (dir_ / "again").string()});
  EXPECT_EQ(again.out, r.out);
  EXPECT_EQ(slurp(dir_ / "again" / "report.json"), slurp(run / "report.json"));
}

TEST_F(CliTest, CorruptedOrMissingCheckpointExitsFour) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(run_cli({"pretrain", "--config", tiny().string(), "--out-dir", run.string()}).code, 0);
  std::string bytes = slurp(run / "checkpoint.bin");
  bytes[bytes.size() / 3] ^= 0x11;
  std::ofstream(run / "checkpoint.bin", std::ios::binary) << bytes;
  const Result r = run_cli({"probe", "--checkpoint", (run / "checkpoint.bin").string()});
  EXPECT_EQ(r.code, cli::kCompatError);
  EXPECT_EQ(run_cli({"probe", "--checkpoint", (dir_ / "nothing.bin").string()}).code,
            cli::kCompatError);
}

TEST_F(CliTest, ProbeRejectsDatasetFromAnotherWorld) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(run_cli({"pretrain", "--config", tiny().string(), "--out-dir", run.string()}).code, 0);
  const fs::path paper = write_config("paper.ini",
                                      "[train]\nmode = dim-c\n[encoder]\nprofile = paper\n"
                                      "[world]\npreset = paper\n[data]\nepisodes = 6\nepisode_length = 2\n");
  ASSERT_EQ(run_cli({"dataset-gen", "--config", paper.string(), "--out-dir", (dir_ / "ds").string()}).code, 0);
  EXPECT_EQ(run_cli({"probe", "--checkpoint", (run / "checkpoint.bin").string(), "--dataset",
                     (dir_ / "ds").string()}).code,
            cli::kCompatError);
}

TEST_F(CliTest, DivergentTrainingExitsThree) {
  const fs::path cfg = write_config("hot.ini",
                                    "[train]\nmode = dim-c\nbatch_size = 8\nsteps = 30\nlr = 1e30\n"
                                    "[atlas]\nn_heads = 2\nunits_per_head = 8\nhidden_units = 16\n"
                                    "[data]\nepisodes = 10\nepisode_length = 20\n");
  const Result r = run_cli({"pretrain", "--config", cfg.string(), "--out-dir", (dir_ / "r").string()});
  EXPECT_EQ(r.code, cli::kNumericError) << r.err;
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST_F(CliTest, SweepSingleRowAndHeadsDivisibility) {
  const fs::path cfg = tiny();
  const Result r = run_cli({"sweep", "--config", cfg.string(), "--axis", "epsilon", "--values",
                            "0.1", "--seeds", "0", "--workers", "1", "--out-dir",
                            (dir_ / "sw").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  std::istringstream csv(slurp(dir_ / "sw" / "sweep.csv"));
  std::string header, row, extra;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "axis,value,seed,status,mean_f1,mean_acc,error");
  EXPECT_EQ(row.rfind("epsilon,0.1,0,ok,", 0), 0u) << row;
  EXPECT_FALSE(std::getline(csv, extra) && !extra.empty());
  EXPECT_TRUE(fs::exists(dir_ / "sw" / "sweep_means.csv"));

  // 16 units cannot be split over 3 heads.
  EXPECT_EQ(run_cli({"sweep", "--config", cfg.string(), "--axis", "heads", "--values", "3",
                     "--total-units", "16", "--out-dir", (dir_ / "sw2").string()}).code,
            cli::kConfigError);
  EXPECT_EQ(run_cli({"sweep", "--config", cfg.string(), "--axis", "depth", "--values", "1"}).code,
            cli::kConfigError);
}

TEST_F(CliTest, GradcheckScopes) {
  const Result one = run_cli({"gradcheck", "--scope", "matmul", "--points", "20"});
  EXPECT_EQ(one.code, cli::kOk) << one.err;
  EXPECT_NE(one.out.find("matmul"), std::string::npos);
  EXPECT_EQ(run_cli({"gradcheck", "--scope", "no_such_kernel"}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"gradcheck", "--scope", "matmul", "--precision", "f32"}).code,
            cli::kConfigError);
  const Result bad = run_cli({"gradcheck", "--scope", "matmul", "--inject-fault"});
  EXPECT_EQ(bad.code, cli::kFailed);
  EXPECT_EQ(run_cli({"gradcheck", "--scope", "softmax", "--seed", "4"}).out,
            run_cli({"gradcheck", "--scope", "softmax", "--seed", "4"}).out);
}

TEST_F(CliTest, DatasetGenRoundTripsThroughPretrain) {
  const fs::path cfg = tiny();
  ASSERT_EQ(run_cli({"dataset-gen", "--config", cfg.string(), "--out-dir", (dir_ / "ds").string()}).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "ds" / "dataset.json"));
  ASSERT_EQ(run_cli({"pretrain", "--config", cfg.string(), "--dataset", (dir_ / "ds").string(),
                     "--out-dir", (dir_ / "a").string()}).code, 0);
  ASSERT_EQ(run_cli({"pretrain", "--config", cfg.string(), "--out-dir", (dir_ / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "trace.csv"), slurp(dir_ / "b" / "trace.csv"));
}

TEST_F(CliTest, ReportSummarisesProbeReports) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(run_cli({"pretrain", "--config", tiny().string(), "--out-dir", run.string()}).code, 0);
  ASSERT_EQ(run_cli({"probe", "--checkpoint", (run / "checkpoint.bin").string()}).code, 0);
  const Result r = run_cli({"report", (run / "report.json").string(), "--out-dir", (dir_ / "sum").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_NE(r.out.find("reports=1"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "sum" / "summary.csv"));
}

TEST_F(CliTest, ProcessExitStatus) {
  const std::string cmd = std::string(CAPREG_CLI_PATH) + " pretrain --config " +
                          (dir_ / "missing.ini").string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), cli::kConfigError);
  const int help = std::system((std::string(CAPREG_CLI_PATH) + " --help > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(help), 0);
}

}  // namespace
}  // namespace capreg
