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

// Synthetic k-by-k studies: zero-inflated Poisson truths, independent noise
// on every observed margin, and drivers for MSE, interval coverage, width
// and unequal-variance robustness.

#ifndef CONSISTENT_COUNTS_SIMHARNESS_H_
#define CONSISTENT_COUNTS_SIMHARNESS_H_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "consistent_counts/histogram.h"
#include "consistent_counts/projection_limits.h"
#include "consistent_counts/uncertainty.h"
#include "json.hpp"

namespace consistent_counts {

// Which tables get per-count variances drawn from the violation values
// instead of the default variance.
enum class Violation {
  kNone,
  kOneMarginal,      // the first variable's one-way table
  kAllMarginals,     // every one-way table
  kAllTwoWay,
  kAllThreeWay,
  kDetailed,         // the full cross
  kAllCountsOneVar,  // every table containing the first variable
};

std::string_view ViolationName(Violation v);
std::optional<Violation> ParseViolation(std::string_view s);
std::vector<Violation> AllViolations();

struct ScenarioConfig {
  int variables = 4;
  int levels = 4;
  double zip_lambda = 5.0;
  double zip_zero_prob = 0.5;
  double variance = 2.0;
  Violation violation = Violation::kNone;
  std::vector<double> violation_values = {1.0, 2.0, 3.0};
  NoiseDistribution noise = NoiseDistribution::kGaussian;
  // Instances per study (MSE replicates or coverage trials).
  int replicates = 100;
  // Monte Carlo replicates per instance for mc-t and mc-df.
  int rounds = 20;
  double alpha = 0.05;
  // Efficient down pass even for tables with unequal variances.
  bool force_efficient = true;
  std::uint64_t seed = 1;
  int jobs = 1;

  // Throws a parameter error on invalid values.
  void Validate() const;
  Schema MakeSchema() const;
};

nlohmann::json ScenarioToJson(const ScenarioConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
ScenarioConfig ScenarioFromJson(const nlohmann::json& j);

struct Instance {
  Schema schema;
  DesiredSet desired;  // downward closure of the observed margins
  std::map<MarginId, DenseTable> truth;
  NoisyTableSet noisy;
  std::int64_t violated_counts = 0;
};

// Instance `index` of the scenario; depends only on (config, index).
// Every margin of the k-way cross is observed.
Instance GenerateInstance(const ScenarioConfig& config, std::uint64_t index);

// Same truth and noise model over an arbitrary schema and observed set;
// variables/levels in `config` are ignored.
Instance GenerateInstance(const ScenarioConfig& config, const Schema& schema,
                          const std::set<MarginId>& observed,
                          std::uint64_t index);

// Four variables sized 2, 2, 8 and 63 with nine observed tables: each
// variable alone, the three-way cross of the first three, the 2x2 cross,
// each size-2 variable against the size-8 one, and the full cross.
Schema Pl94Schema();
std::set<MarginId> Pl94Observed();

struct ExperimentReport {
  std::string experiment;
  ScenarioConfig config;
  int trials = 0;
  std::int64_t cells_per_trial = 0;
  std::int64_t violated_counts = 0;
  // Mean squared error against the truth, per method.
  std::map<std::string, double> mse;
  std::optional<double> sea_to_projection_mse;
  std::map<std::string, double> coverage;
  std::map<std::string, double> clipped_coverage;
  // Mean full widths over cells of observed tables.
  std::map<std::string, double> raw_width;
  std::map<std::string, double> clipped_width;
  std::map<std::string, double> width_ratio;
  // Method -> reason it did not run.
  std::map<std::string, std::string> skipped;
};

nlohmann::json ReportToJson(const ExperimentReport& report);
// Long format: section,method,value.
std::string ReportToCsv(const ExperimentReport& report);

// methods from {"seablue", "projection", "raw"}.
ExperimentReport MseExperiment(
    const ScenarioConfig& config, const std::set<std::string>& methods,
    const ProjectionLimits& limits = ProjectionLimits::FromEnvironment());

// methods from {"initial", "exact", "mc-t", "mc-df"}.
ExperimentReport CoverageExperiment(const ScenarioConfig& config,
                                    const std::set<std::string>& methods);

// The named violation applied to `config`, both estimators, three MSEs.
ExperimentReport RobustnessExperiment(
    const ScenarioConfig& config, Violation violation,
    const ProjectionLimits& limits = ProjectionLimits::FromEnvironment());

// Mean ratios of Monte Carlo to exact half-widths over `trials` cell
// draws, using `m` replicates per interval: keys "mc-t/z", "mc-df/z",
// "mc-df/mc-t" (the last two only when m is large enough).
ExperimentReport WidthRatioExperiment(const ScenarioConfig& config, int m,
                                      std::int64_t trials);

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_SIMHARNESS_H_
