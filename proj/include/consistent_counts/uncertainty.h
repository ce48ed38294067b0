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

// Confidence intervals for final estimates: exact normal intervals from
// propagated variances, and two Monte Carlo constructions driven by
// pure-noise replicates of the input.

#ifndef CONSISTENT_COUNTS_UNCERTAINTY_H_
#define CONSISTENT_COUNTS_UNCERTAINTY_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "consistent_counts/downpass.h"
#include "consistent_counts/histogram.h"

namespace consistent_counts {

enum class NoiseDistribution {
  kGaussian,
  kDiscreteGaussian,
  // Continuous uniform with the declared variance; used to exercise the
  // distribution-free intervals.
  kUniform,
};

std::string_view NoiseDistributionName(NoiseDistribution d);
std::optional<NoiseDistribution> ParseNoiseDistribution(std::string_view s);

// splitmix64 of (seed, stream): independent, reproducible sub-seeds.
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream);

// Draw from the discrete Gaussian with P(t) proportional to
// exp(-t^2 / (2 sigma2)), by rejection from a discrete Laplace proposal.
std::int64_t SampleDiscreteGaussian(std::mt19937_64& rng, double sigma2);

double SampleNoise(std::mt19937_64& rng, NoiseDistribution d, double variance);

class NoiseModel {
 public:
  struct TableNoise {
    NoiseDistribution distribution = NoiseDistribution::kGaussian;
    Variance variance;
  };

  NoiseModel() = default;
  NoiseModel(Schema schema, std::map<MarginId, TableNoise> tables);

  // Same variances as `noisy`, one distribution for every table.
  static NoiseModel FromNoisy(const NoisyTableSet& noisy,
                              NoiseDistribution distribution);

  const Schema& schema() const { return schema_; }
  const std::map<MarginId, TableNoise>& tables() const { return tables_; }
  bool AllGaussian() const;

  // Observed tables filled with pure noise, carrying the model variances.
  NoisyTableSet Draw(std::mt19937_64& rng) const;
  // Replicate `index` of stream `seed`.
  NoisyTableSet Draw(std::uint64_t seed, std::uint64_t index) const;

 private:
  Schema schema_;
  std::map<MarginId, TableNoise> tables_;
};

enum class IntervalMethod { kExactZ, kMcT, kMcDf };
std::string_view IntervalMethodName(IntervalMethod m);
std::optional<IntervalMethod> ParseIntervalMethod(std::string_view s);

struct Interval {
  double estimate = 0;
  double lower = 0;
  double upper = 0;
  bool clipped = false;
  // Clipping left no integer inside; bounds are kept as computed.
  bool empty = false;

  double width() const { return empty ? 0.0 : upper - lower; }
  bool Contains(double x) const { return !empty && lower <= x && x <= upper; }
};

struct IntervalTable {
  IntervalMethod method = IntervalMethod::kExactZ;
  double alpha = 0.05;
  std::map<MarginId, std::vector<Interval>> cells;
};

// estimate +/- z_{1 - alpha/2} sqrt(variance).
Interval ZInterval(double estimate, double variance, double alpha);

// Nonnegative integer refinement: [max(0, ceil(lower)), floor(upper)].
Interval ClipInterval(const Interval& in);
IntervalTable ClipIntervals(const IntervalTable& in);

double NormalQuantile(double p);
double StudentTQuantile(double p, double dof);

// Throws an assumption error naming the first table with unequal
// within-table variances.
void CheckEqualVariances(const NoisyTableSet& noisy, double tolerance = 1e-9);

// Variance of one final estimate cell. With S the cell's margin and R an
// observed table containing S, the pipeline is run on an input that holds
// the noise variance at every cell of R summing into the target cell and
// zero elsewhere; the output at the target cell is its variance. For S
// observed this is the pipeline applied to a column of the covariance.
double ExactCellVariance(const NoisyTableSet& noisy, const DesiredSet& desired,
                         MarginId margin, std::span<const int> cell,
                         const SeaBlueOptions& options = {});

// Per-cell variances for every desired table. With equal within-table
// variances the problem is symmetric under relabeling levels, so one cell
// per table is computed and broadcast.
std::map<MarginId, std::vector<double>> ExactVariances(
    const NoisyTableSet& noisy, const DesiredSet& desired,
    const SeaBlueOptions& options = {});

IntervalTable ExactZIntervals(
    const FinalEstimates& estimates,
    const std::map<MarginId, std::vector<double>>& variances, double alpha);

using Pipeline = std::function<FinalEstimates(const NoisyTableSet&)>;

// SEA BLUE over `desired`.
Pipeline SeaBluePipeline(DesiredSet desired, SeaBlueOptions options = {});

// Pipeline outputs on pure-noise replicates, one row per replicate, cells
// stacked in desired-margin order. The same rows serve every cell.
struct ReplicateSet {
  std::map<MarginId, std::size_t> offsets;
  std::size_t cells = 0;
  std::vector<std::vector<double>> rows;
};

ReplicateSet DrawReplicates(const NoiseModel& noise, const Pipeline& pipeline,
                            int replicates, std::uint64_t seed, int jobs = 1);

// Order statistic used by the distribution-free interval; throws a
// parameter error when m < (1 - alpha) / alpha.
int DistributionFreeIndex(int replicates, double alpha);

IntervalTable McTFromReplicates(const FinalEstimates& estimates,
                                const ReplicateSet& replicates, double alpha);
IntervalTable McDfFromReplicates(const FinalEstimates& estimates,
                                 const ReplicateSet& replicates, double alpha);

// Half-widths only, for one stacked cell.
double McTHalfWidth(std::span<const double> outputs, double alpha);
double McDfHalfWidth(std::span<const double> outputs, double alpha);

IntervalTable McTIntervals(const FinalEstimates& estimates,
                           const NoiseModel& noise, const Pipeline& pipeline,
                           int replicates, double alpha, std::uint64_t seed,
                           int jobs = 1);
IntervalTable McDfIntervals(const FinalEstimates& estimates,
                            const NoiseModel& noise, const Pipeline& pipeline,
                            int replicates, double alpha, std::uint64_t seed,
                            int jobs = 1);

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_UNCERTAINTY_H_
