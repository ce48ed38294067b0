//
// Copyright 2026 The Consistent Counts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Runs the built command-line tool end to end.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "consistent_counts/io.h"
#include "json.hpp"

namespace consistent_counts {
namespace {

namespace fs = std::filesystem;
using ::testing::HasSubstr;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cc_cli_" + std::string(::testing::UnitTest::GetInstance()
                                        ->current_test_info()
                                        ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string P(const std::string& name) const { return (dir_ / name).string(); }

  int Run(const std::string& args, const std::string& env = "") const {
    const std::string cmd = env + " " + CC_CLI_PATH + " " + args + " >" +
                            P("stdout.txt") + " 2>" + P("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static int Lines(const std::string& text) {
    return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
  }

  void MakeInstance(const std::string& extra) const {
    ASSERT_EQ(Run("simulate --experiment instance " + extra + " --out-schema " +
                  P("s.json") + " --out-counts " + P("c.csv")),
              0);
  }

  fs::path dir_;
};

TEST_F(CliTest, EstimateSeaBlueMatchesProjection) {
  MakeInstance("--variables 3 --levels 3 --seed 5");
  const std::string in = " --schema " + P("s.json") + " --counts " + P("c.csv");
  ASSERT_EQ(Run("estimate" + in + " --out " + P("a.csv")), 0);
  ASSERT_EQ(Run("estimate" + in + " --method projection --out " + P("b.csv")), 0);
  std::istringstream a(ReadFile(P("a.csv"))), b(ReadFile(P("b.csv")));
  std::string la, lb;
  std::getline(a, la);
  std::getline(b, lb);
  EXPECT_EQ(la, "table,cell_coords,estimate,variance");
  int rows = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    std::vector<std::string> fa, fb;
    std::string x;
    for (std::istringstream s(la); std::getline(s, x, ',');) fa.push_back(x);
    for (std::istringstream s(lb); std::getline(s, x, ',');) fb.push_back(x);
    ASSERT_EQ(fa.size(), 4u) << la;
    ASSERT_EQ(fb.size(), 4u) << lb;
    EXPECT_EQ(fa[0] + fa[1], fb[0] + fb[1]);
    EXPECT_NEAR(std::stod(fa[2]), std::stod(fb[2]), 1e-8);
    EXPECT_NEAR(std::stod(fa[3]), std::stod(fb[3]), 1e-8);
    ++rows;
  }
  EXPECT_EQ(rows, 64);
}

TEST_F(CliTest, Pl94ShapeGivesAllCounts) {
  MakeInstance("--shape pl94");
  ASSERT_EQ(Run("estimate --schema " + P("s.json") + " --counts " + P("c.csv") +
                " --no-variances --out " + P("e.csv")),
            0);
  EXPECT_EQ(Lines(ReadFile(P("e.csv"))), 1 + 5184);
}

TEST_F(CliTest, SingleTableIsAFixedPoint) {
  WriteFile(P("s.json"), R"({"variables": [{"name": "A", "levels": 3}]})");
  WriteFile(P("c.csv"),
            "table,cell_coords,value,variance\nA,1,1.5,2\nA,2,-3,2\nA,3,7,2\n");
  ASSERT_EQ(Run("estimate --schema " + P("s.json") + " --counts " + P("c.csv") +
                " --desired A --out " + P("e.csv")),
            0);
  const std::string e = ReadFile(P("e.csv"));
  EXPECT_THAT(e, HasSubstr("A,1,1.5,2\n"));
  EXPECT_THAT(e, HasSubstr("A,2,-3,2\n"));
  EXPECT_THAT(e, HasSubstr(",,5.5,6\n"));
}

TEST_F(CliTest, IntervalsDeterministicAcrossJobs) {
  MakeInstance("--variables 2 --levels 3");
  const std::string in = "ci --schema " + P("s.json") + " --counts " +
                         P("c.csv") + " --method mc-df --replicates 39";
  ASSERT_EQ(Run(in + " --seed 9 --jobs 1 --out " + P("a.csv")), 0);
  ASSERT_EQ(Run(in + " --seed 9 --jobs 3 --out " + P("b.csv")), 0);
  EXPECT_EQ(ReadFile(P("a.csv")), ReadFile(P("b.csv")));
  ASSERT_EQ(Run(in + " --seed 10 --out " + P("c2.csv")), 0);
  EXPECT_NE(ReadFile(P("a.csv")), ReadFile(P("c2.csv")));
  const auto m = nlohmann::json::parse(ReadFile(P("a.csv.manifest.json")));
  EXPECT_EQ(m["seed"], 9);
  EXPECT_EQ(m["outputs"][P("a.csv")], Sha256Hex(ReadFile(P("a.csv"))));
}

TEST_F(CliTest, ClippedIntervalsAreIntegers) {
  MakeInstance("--variables 2 --levels 3");
  ASSERT_EQ(Run("ci --clip --schema " + P("s.json") + " --counts " + P("c.csv") +
                " --out " + P("i.csv")),
            0);
  std::istringstream in(ReadFile(P("i.csv")));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::string x;
    for (std::istringstream s(line); std::getline(s, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 9u);
    const double lo = std::stod(f[3]), hi = std::stod(f[4]);
    EXPECT_EQ(lo, std::floor(lo));
    EXPECT_EQ(hi, std::floor(hi));
    EXPECT_GE(lo, 0);
  }
}

TEST_F(CliTest, CovarianceDiagonalMatchesVariances) {
  MakeInstance("--variables 2 --levels 2");
  const std::string in = " --schema " + P("s.json") + " --counts " + P("c.csv");
  ASSERT_EQ(Run("covariance" + in + " --out " + P("cov.csv")), 0);
  ASSERT_EQ(Run("covariance --method exact" + in + " --out " + P("v.csv")), 0);
  // 9 desired cells: 81 covariance entries.
  EXPECT_EQ(Lines(ReadFile(P("cov.csv"))), 1 + 81);
  EXPECT_EQ(Lines(ReadFile(P("v.csv"))), 1 + 9);
}

TEST_F(CliTest, SimulateReportIsDeterministic) {
  const std::string args =
      "simulate --experiment mse --variables 2 --levels 3 --replicates 4";
  ASSERT_EQ(Run(args + " --out-json " + P("a.json") + " --out-csv " + P("a.csv")),
            0);
  ASSERT_EQ(Run(args + " --jobs 2 --out-json " + P("b.json")), 0);
  EXPECT_EQ(ReadFile(P("a.json")), ReadFile(P("b.json")));
  const auto j = nlohmann::json::parse(ReadFile(P("a.json")));
  EXPECT_NEAR(j["mse"]["seablue"].get<double>(),
              j["mse"]["projection"].get<double>(), 1e-9);
  EXPECT_LT(j["mse"]["seablue"].get<double>(), j["mse"]["raw"].get<double>());
}

TEST_F(CliTest, ExitCodesAndFailureManifest) {
  EXPECT_EQ(Run("estimate --schema " + P("none.json") + " --counts " +
                P("none.csv") + " --out " + P("e.csv")),
            4);
  const auto m = nlohmann::json::parse(ReadFile(P("e.csv.manifest.json")));
  EXPECT_EQ(m["status"], "error");
  EXPECT_EQ(m["exit_code"], 4);
  EXPECT_FALSE(fs::exists(P("e.csv")));

  WriteFile(P("s.json"), R"({"variables": [{"name": "A", "levels": 2}]})");
  WriteFile(P("c.csv"), "table,cell_coords,value,variance\nA,1,1,1\nA,9,1,1\n");
  EXPECT_EQ(Run("estimate --schema " + P("s.json") + " --counts " + P("c.csv") +
                " --out " + P("e.csv")),
            3);
  EXPECT_THAT(ReadFile(P("stderr.txt")), HasSubstr("line 3"));

  EXPECT_EQ(Run("nonsense"), 2);
  WriteFile(P("c.csv"), "table,cell_coords,value,variance\nA,1,1,1\nA,2,1,1\n");
  EXPECT_EQ(Run("ci --method mc-df --replicates 5 --schema " + P("s.json") +
                " --counts " + P("c.csv") + " --out " + P("x.csv")),
            2);
}

TEST_F(CliTest, UnequalVariancesRejectedByExact) {
  WriteFile(P("s.json"), R"({"variables": [{"name": "A", "levels": 2}]})");
  WriteFile(P("c.csv"), "table,cell_coords,value,variance\nA,1,1,1\nA,2,3,2\n");
  EXPECT_EQ(Run("ci --schema " + P("s.json") + " --counts " + P("c.csv") +
                " --out " + P("x.csv")),
            6);
  // estimate still works and leaves the variance column empty.
  EXPECT_EQ(Run("estimate --schema " + P("s.json") + " --counts " + P("c.csv") +
                " --out " + P("e.csv")),
            0);
  EXPECT_THAT(ReadFile(P("e.csv")), HasSubstr("A,1,1,\n"));
}

TEST_F(CliTest, MemoryCapTriggersSizeGuard) {
  MakeInstance("--variables 3 --levels 3");
  EXPECT_EQ(Run("estimate --method projection --schema " + P("s.json") +
                    " --counts " + P("c.csv") + " --out " + P("e.csv"),
                "CONSISTENT_COUNTS_MEM_CAP=1000"),
            5);
  // The closed-form path is unaffected.
  EXPECT_EQ(Run("estimate --schema " + P("s.json") + " --counts " + P("c.csv") +
                    " --out " + P("e.csv"),
                "CONSISTENT_COUNTS_MEM_CAP=1000"),
            0);
}

TEST_F(CliTest, BenchWritesRows) {
  ASSERT_EQ(Run("bench --sizes 2,3 --no-pl94 --out-csv " + P("b.csv")), 0);
  EXPECT_EQ(Lines(ReadFile(P("b.csv"))), 1 + 4);
}

}  // namespace
}  // namespace consistent_counts
