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

// Time and memory measurement of the two estimators over a ladder of
// problem sizes.

#ifndef CONSISTENT_COUNTS_BENCH_H_
#define CONSISTENT_COUNTS_BENCH_H_

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "consistent_counts/histogram.h"
#include "consistent_counts/projection_limits.h"
#include "json.hpp"

namespace consistent_counts {

// Process resident-set figures from /proc/self/status, in bytes; 0 when
// unavailable.
std::int64_t CurrentRssBytes();
std::int64_t PeakRssBytes();
// Resets the peak to the current resident size. False when the kernel
// interface is missing.
bool ResetPeakRss();

struct BenchCase {
  std::string label;
  Schema schema;
  std::set<MarginId> observed;
};

// k variables with k levels each, every margin observed.
BenchCase KByKCase(int k);
BenchCase Pl94Case();

struct BenchPoint {
  std::string label;
  std::string method;
  std::int64_t counts = 0;        // desired output cells
  std::int64_t input_cells = 0;   // observed noisy cells
  std::int64_t input_bytes = 0;   // raw storage of the observed values
  bool ran = false;
  std::string skip_reason;
  int repeats = 0;
  double wall_seconds = 0;        // mean over repeats
  std::int64_t peak_bytes = 0;    // peak resident growth during the runs
};

struct BenchOptions {
  std::vector<BenchCase> cases;
  std::set<std::string> methods = {"seablue", "projection"};
  int repeats = 1;
  std::uint64_t seed = 1;
  ProjectionLimits limits = ProjectionLimits::FromEnvironment();
  // Measure each point in a forked child so peaks do not interfere.
  bool isolate = true;
};

BenchPoint MeasurePoint(const BenchCase& c, const std::string& method,
                        const BenchOptions& options);
std::vector<BenchPoint> RunBench(const BenchOptions& options);

std::string BenchToCsv(const std::vector<BenchPoint>& points);
nlohmann::json BenchToJson(const std::vector<BenchPoint>& points);

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_BENCH_H_
