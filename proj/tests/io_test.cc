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

#include "consistent_counts/io.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "consistent_counts/downpass.h"
#include "consistent_counts/error.h"
#include "consistent_counts/simharness.h"

namespace consistent_counts {
namespace {

using ::testing::HasSubstr;

constexpr char kSchema[] =
    R"({"variables": [{"name": "A", "levels": 2}, {"name": "B", "levels": 3}]})";

// Throws if the call does not fail with `code`; returns the message.
template <typename Fn>
std::string ErrorOf(Fn fn, ErrorCode code) {
  try {
    fn();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "no error";
  return "";
}

TEST(SchemaIoTest, RoundTrip) {
  const Schema s = ParseSchemaJson(kSchema);
  ASSERT_EQ(s.size(), 2);
  EXPECT_EQ(s.variable(0).name, "A");
  EXPECT_EQ(s.variable(1).levels, 3);
  const Schema t = ParseSchemaJson(SchemaToJson(s));
  EXPECT_EQ(t.size(), 2);
  EXPECT_EQ(t.variable(1).name, "B");
  EXPECT_EQ(t.variable(1).levels, 3);
}

TEST(SchemaIoTest, Errors) {
  ErrorOf([] { ParseSchemaJson("{"); }, ErrorCode::kParse);
  ErrorOf([] { ParseSchemaJson(R"({"variables": [{"name": "A"}]})"); },
          ErrorCode::kParse);
}

TEST(CountsIoTest, ParsesAndRoundTrips) {
  const Schema s = ParseSchemaJson(kSchema);
  const std::string csv =
      "table,cell_coords,value,variance\n"
      ",,10.5,2\n"
      "A,1,4,1\n"
      "A,2,6.25,1\n";
  const NoisyTableSet noisy = ParseCountsCsv(s, csv);
  ASSERT_EQ(noisy.tables().size(), 2u);
  const Table& a = noisy.table(s.ParseMargin("A"));
  EXPECT_EQ(a.values(), (std::vector<double>{4, 6.25}));
  EXPECT_TRUE(a.variance().is_scalar());
  EXPECT_EQ(noisy.table(MarginId()).values()[0], 10.5);

  const NoisyTableSet again = ParseCountsCsv(s, CountsToCsv(noisy));
  for (const auto& [m, t] : noisy.tables()) {
    EXPECT_EQ(again.table(m).values(), t.values());
    EXPECT_EQ(again.table(m).variance(), t.variance());
  }
}

TEST(CountsIoTest, TwoWayCoordinateOrder) {
  const Schema s = ParseSchemaJson(kSchema);
  std::string csv = "table,cell_coords,value,variance\n";
  // Listed out of order on purpose; value encodes 10*a + b.
  for (int b = 3; b >= 1; --b) {
    for (int a = 1; a <= 2; ++a) {
      csv += "A+B," + std::to_string(a) + ":" + std::to_string(b) + "," +
             std::to_string(10 * a + b) + ",1\n";
    }
  }
  const Table& t = ParseCountsCsv(s, csv).table(s.ParseMargin("A+B"));
  EXPECT_EQ(t.values(), (std::vector<double>{11, 12, 13, 21, 22, 23}));
}

TEST(CountsIoTest, ErrorsCarryLineNumbers) {
  const Schema s = ParseSchemaJson(kSchema);
  const std::string head = "table,cell_coords,value,variance\n";
  EXPECT_THAT(ErrorOf([&] { ParseCountsCsv(s, head + "A,1,4,1\nA,3,1,1\n"); },
                      ErrorCode::kParse),
              HasSubstr("line 3"));
  EXPECT_THAT(ErrorOf([&] { ParseCountsCsv(s, head + "A,1,x,1\n"); },
                      ErrorCode::kParse),
              HasSubstr("line 2"));
  EXPECT_THAT(ErrorOf([&] { ParseCountsCsv(s, head + "A,1,4,-1\n"); },
                      ErrorCode::kParse),
              HasSubstr("line 2"));
  EXPECT_THAT(
      ErrorOf([&] { ParseCountsCsv(s, head + "A,1,4,1\nA,2,1,1\nA,1,5,1\n"); },
              ErrorCode::kParse),
      HasSubstr("duplicate"));
  // A table with a missing cell.
  ErrorOf([&] { ParseCountsCsv(s, head + "A,1,4,1\n"); }, ErrorCode::kParse);
  ErrorOf([&] { ParseCountsCsv(s, head + "C,1,4,1\n"); }, ErrorCode::kParse);
  ErrorOf([&] { ParseCountsCsv(s, "a,b,c\n"); }, ErrorCode::kParse);
}

TEST(CountsIoTest, InvariantCellsGetAFloor) {
  const Schema s = ParseSchemaJson(kSchema);
  const std::string csv =
      "table,cell_coords,value,variance\n"
      ",,10,0\n"
      "A,1,4,4\n"
      "A,2,6,4\n";
  const NoisyTableSet d = ParseCountsCsv(s, csv);
  EXPECT_DOUBLE_EQ(d.table(MarginId()).variance().at(0),
                   kInvariantFloorFactor * 4);
  CountsReadOptions o;
  o.epsilon_invariant = 1e-6;
  EXPECT_DOUBLE_EQ(ParseCountsCsv(s, csv, o).table(MarginId()).variance().at(0),
                   1e-6);
  o.epsilon_invariant = -1;
  ErrorOf([&] { ParseCountsCsv(s, csv, o); }, ErrorCode::kParameter);
}

// The invariant total pins the estimate to its observed value.
TEST(CountsIoTest, InvariantTotalIsHonoured) {
  const Schema s = ParseSchemaJson(kSchema);
  const std::string csv =
      "table,cell_coords,value,variance\n"
      ",,10,0\n"
      "A,1,4,1\n"
      "A,2,7,1\n";
  const NoisyTableSet d = ParseCountsCsv(s, csv);
  const FinalEstimates est = SeaBlue(d, CloseDownward(d.margins()));
  EXPECT_NEAR(est.at(MarginId()).values()[0], 10, 1e-6);
  const auto& a = est.at(s.ParseMargin("A")).values();
  EXPECT_NEAR(a[0] + a[1], 10, 1e-6);
  EXPECT_NEAR(a[0] - a[1], -3, 1e-6);
}

TEST(FormatTest, Basics) {
  const int c[] = {0, 2};
  EXPECT_EQ(FormatCoords(c), "1:3");
  EXPECT_EQ(FormatCoords({}), "");
  EXPECT_EQ(FormatDouble(0.1), "0.1");
  EXPECT_EQ(FormatDouble(2), "2");
  EXPECT_EQ(std::stod(FormatDouble(1.0 / 3)), 1.0 / 3);
}

TEST(Sha256Test, KnownVectors) {
  EXPECT_EQ(Sha256Hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(Sha256Hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(FileIoTest, WriteReadAndMissing) {
  const auto dir = std::filesystem::temp_directory_path() / "cc_io_test";
  std::filesystem::create_directories(dir);
  const std::string p = (dir / "x.txt").string();
  WriteFile(p, "hello\n");
  EXPECT_EQ(ReadFile(p), "hello\n");
  WriteFile(p, "again");
  EXPECT_EQ(ReadFile(p), "again");
  ErrorOf([&] { ReadFile((dir / "missing").string()); }, ErrorCode::kIo);
  ErrorOf([&] { WriteFile((dir / "no" / "such" / "f").string(), "x"); },
          ErrorCode::kIo);
  std::filesystem::remove_all(dir);
}

TEST(OutputCsvTest, IntervalsAndCovarianceShapes) {
  const Schema s = ParseSchemaJson(kSchema);
  IntervalTable t;
  t.method = IntervalMethod::kMcDf;
  t.alpha = 0.1;
  Interval i;
  i.estimate = 1.5;
  i.lower = 0;
  i.upper = -1;
  i.clipped = true;
  i.empty = true;
  t.cells[s.ParseMargin("A")] = {i, i};
  const std::string csv = IntervalsToCsv(s, t);
  EXPECT_THAT(csv, HasSubstr(
      "table,cell_coords,estimate,lower,upper,alpha,method,clipped,empty\n"));
  EXPECT_THAT(csv, HasSubstr("A,2,1.5,0,-1,0.1,mc-df,1,1\n"));

  std::map<MarginId, Eigen::Index> offsets = {{MarginId(), 0},
                                              {s.ParseMargin("A"), 1}};
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(3, 3);
  cov(0, 2) = cov(2, 0) = 0.5;
  const std::string c = CovarianceToCsv(s, offsets, cov);
  EXPECT_THAT(c, HasSubstr(",,A,2,0.5\n"));
  EXPECT_THAT(c, HasSubstr("A,2,,,0.5\n"));
}

TEST(EstimatesCsvTest, OneRowPerDesiredCell) {
  ScenarioConfig c;
  c.variables = 3;
  c.levels = 3;
  const Instance inst = GenerateInstance(c, 0);
  const FinalEstimates est = SeaBlue(inst.noisy, inst.desired);
  const std::string csv = EstimatesToCsv(est, nullptr);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 64);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "table,cell_coords,estimate,variance");
}

TEST(ManifestTest, JsonFieldsAndStableHash) {
  RunManifest m;
  m.command = "estimate";
  m.config = {{"b", 1}, {"a", "x"}};
  m.seed = 7;
  m.input_digests["in.csv"] = Sha256Hex("abc");
  const nlohmann::json j = m.ToJson();
  EXPECT_EQ(j["command"], "estimate");
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["tool_version"], std::string(kToolVersion));
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["config_hash"], m.ConfigHash());
  RunManifest n = m;
  n.config = {{"a", "x"}, {"b", 1}};
  EXPECT_EQ(n.ConfigHash(), m.ConfigHash());
  n.config["b"] = 2;
  EXPECT_NE(n.ConfigHash(), m.ConfigHash());
}

}  // namespace
}  // namespace consistent_counts
