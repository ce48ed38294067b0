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

#include "consistent_counts/bench.h"

#include <cstdlib>
#include <vector>

#include "gmock/gmock.h"
#include "gtest/gtest.h"

namespace consistent_counts {
namespace {

using ::testing::HasSubstr;

TEST(RssTest, ReadsProcStatus) {
  EXPECT_GT(CurrentRssBytes(), 0);
  EXPECT_GE(PeakRssBytes(), CurrentRssBytes());
}

TEST(RssTest, PeakSeesAnAllocation) {
  if (!ResetPeakRss()) GTEST_SKIP() << "no peak reset on this kernel";
  const std::int64_t before = PeakRssBytes();
  std::vector<char> block(64 << 20, 1);
  for (std::size_t i = 0; i < block.size(); i += 4096) block[i] = 2;
  EXPECT_GE(PeakRssBytes() - before, 60 << 20);
  EXPECT_EQ(block[4096], 2);
}

TEST(BenchCaseTest, Shapes) {
  const BenchCase k3 = KByKCase(3);
  EXPECT_EQ(k3.label, "3x3");
  EXPECT_EQ(k3.observed.size(), 8u);
  const BenchCase pl = Pl94Case();
  EXPECT_EQ(pl.label, "pl94");
  EXPECT_EQ(pl.observed.size(), 9u);
}

TEST(BenchTest, PointsForBothMethods) {
  BenchOptions o;
  o.cases = {KByKCase(3)};
  o.repeats = 2;
  for (bool isolate : {true, false}) {
    o.isolate = isolate;
    const auto points = RunBench(o);
    ASSERT_EQ(points.size(), 2u);
    for (const BenchPoint& p : points) {
      EXPECT_TRUE(p.ran) << p.skip_reason;
      EXPECT_EQ(p.counts, 64);
      EXPECT_EQ(p.input_cells, 64);
      EXPECT_EQ(p.input_bytes, 64 * 8);
      EXPECT_EQ(p.repeats, 2);
      EXPECT_GT(p.wall_seconds, 0);
      EXPECT_GE(p.peak_bytes, 0);
    }
  }
}

TEST(BenchTest, GuardSkipsOversizedProjection) {
  BenchOptions o;
  o.cases = {KByKCase(4)};
  o.methods = {"projection"};
  o.limits.max_bytes = 1000;
  const auto points = RunBench(o);
  ASSERT_EQ(points.size(), 1u);
  EXPECT_FALSE(points[0].ran);
  EXPECT_FALSE(points[0].skip_reason.empty());
  const std::string csv = BenchToCsv(points);
  EXPECT_THAT(csv, HasSubstr("4x4,projection,625"));
  EXPECT_EQ(BenchToJson(points)[0]["ran"], false);
}

}  // namespace
}  // namespace consistent_counts
