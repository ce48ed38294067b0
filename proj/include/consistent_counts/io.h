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

// File formats.
//
// Schema: {"variables": [{"name": "A", "levels": 2}, ...]}
// Counts: CSV `table,cell_coords,value,variance`; table is a `+`-joined
//   variable list (empty for the total), cell_coords a `:`-joined list of
//   1-based levels. Every cell of a listed table must appear exactly once.
//   A variance of 0 marks an invariant and is replaced by a small floor.
// Estimates: CSV `table,cell_coords,estimate,variance` (variance may be
//   empty when not computed).

#ifndef CONSISTENT_COUNTS_IO_H_
#define CONSISTENT_COUNTS_IO_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "consistent_counts/downpass.h"
#include "consistent_counts/histogram.h"
#include "consistent_counts/uncertainty.h"
#include "json.hpp"

namespace consistent_counts {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Relative floor for invariant cells when no explicit value is given:
// this factor times the median positive variance in the file.
inline constexpr double kInvariantFloorFactor = 1e-10;

Schema ParseSchemaJson(std::string_view text);
std::string SchemaToJson(const Schema& schema);

struct CountsReadOptions {
  // Variance used for invariant (zero-variance) cells.
  std::optional<double> epsilon_invariant;
};

NoisyTableSet ParseCountsCsv(const Schema& schema, std::string_view text,
                             const CountsReadOptions& options = {});
std::string CountsToCsv(const NoisyTableSet& noisy);

// "A:1:2" style helpers; coordinates in files are 1-based.
std::string FormatCoords(std::span<const int> zero_based);
std::string FormatDouble(double x);

std::string EstimatesToCsv(
    const FinalEstimates& estimates,
    const std::map<MarginId, std::vector<double>>* variances);

// `table,cell_coords,estimate,lower,upper,alpha,method,clipped,empty`
std::string IntervalsToCsv(const Schema& schema, const IntervalTable& table);

// Long form `row_table,row_coords,col_table,col_coords,covariance` over
// the stacked desired cells.
std::string CovarianceToCsv(const Schema& schema,
                            const std::map<MarginId, Eigen::Index>& offsets,
                            const Eigen::MatrixXd& covariance);

std::string ReadFile(const std::string& path);
// Writes through a temporary file and renames it into place.
void WriteFile(const std::string& path, std::string_view contents);

std::string Sha256Hex(std::string_view bytes);

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::map<std::string, std::string> output_digests;
  std::string tool_version = std::string(kToolVersion);
  double wall_seconds = 0;
  std::int64_t peak_rss_bytes = 0;
  std::string status = "ok";
  std::string error;
  int exit_code = 0;

  // sha256 of the canonical config dump.
  std::string ConfigHash() const;
  nlohmann::json ToJson() const;
};

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_IO_H_
