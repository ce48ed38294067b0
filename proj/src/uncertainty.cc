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

#include "consistent_counts/uncertainty.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "consistent_counts/error.h"
#include "parallel.h"
#include "strides.h"

namespace consistent_counts {

std::string_view NoiseDistributionName(NoiseDistribution d) {
  switch (d) {
    case NoiseDistribution::kGaussian:
      return "gaussian";
    case NoiseDistribution::kDiscreteGaussian:
      return "discrete-gaussian";
    case NoiseDistribution::kUniform:
      return "uniform";
  }
  return "unknown";
}

std::optional<NoiseDistribution> ParseNoiseDistribution(std::string_view s) {
  if (s == "gaussian") return NoiseDistribution::kGaussian;
  if (s == "discrete-gaussian") return NoiseDistribution::kDiscreteGaussian;
  if (s == "uniform") return NoiseDistribution::kUniform;
  return std::nullopt;
}

std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(seed) ^ stream);
}

std::int64_t SampleDiscreteGaussian(std::mt19937_64& rng, double sigma2) {
  if (!(sigma2 > 0)) return 0;
  const double sigma = std::sqrt(sigma2);
  const double t = std::floor(sigma) + 1;
  std::geometric_distribution<std::int64_t> geometric(1 - std::exp(-1 / t));
  std::bernoulli_distribution sign(0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (true) {
    // Discrete Laplace with scale t; the negative zero is resampled so zero
    // is not counted twice.
    const std::int64_t magnitude = geometric(rng);
    const bool negative = sign(rng);
    if (negative && magnitude == 0) continue;
    const double gap = static_cast<double>(magnitude) - sigma2 / t;
    if (unit(rng) < std::exp(-gap * gap / (2 * sigma2))) {
      return negative ? -magnitude : magnitude;
    }
  }
}

double SampleNoise(std::mt19937_64& rng, NoiseDistribution d,
                   double variance) {
  if (!(variance > 0)) return 0;
  switch (d) {
    case NoiseDistribution::kGaussian:
      return std::normal_distribution<double>(0, std::sqrt(variance))(rng);
    case NoiseDistribution::kDiscreteGaussian:
      return static_cast<double>(SampleDiscreteGaussian(rng, variance));
    case NoiseDistribution::kUniform: {
      const double a = std::sqrt(3 * variance);
      return std::uniform_real_distribution<double>(-a, a)(rng);
    }
  }
  return 0;
}

NoiseModel::NoiseModel(Schema schema, std::map<MarginId, TableNoise> tables)
    : schema_(std::move(schema)), tables_(std::move(tables)) {
  for (const auto& [m, t] : tables_) schema_.Validate(m);
}

NoiseModel NoiseModel::FromNoisy(const NoisyTableSet& noisy,
                                 NoiseDistribution distribution) {
  std::map<MarginId, TableNoise> tables;
  for (const auto& [m, t] : noisy.tables()) {
    tables.emplace(m, TableNoise{distribution, t.variance()});
  }
  return NoiseModel(noisy.schema(), std::move(tables));
}

bool NoiseModel::AllGaussian() const {
  return std::all_of(tables_.begin(), tables_.end(), [](const auto& kv) {
    return kv.second.distribution == NoiseDistribution::kGaussian;
  });
}

NoisyTableSet NoiseModel::Draw(std::mt19937_64& rng) const {
  std::vector<Table> tables;
  tables.reserve(tables_.size());
  for (const auto& [m, noise] : tables_) {
    const std::int64_t cells = schema_.CellCount(m);
    std::vector<double> values(cells);
    for (std::int64_t i = 0; i < cells; ++i) {
      values[i] = SampleNoise(rng, noise.distribution, noise.variance.at(i));
    }
    tables.emplace_back(DenseTable(m, schema_.Dims(m), std::move(values)),
                        noise.variance);
  }
  return NoisyTableSet(schema_, std::move(tables));
}

NoisyTableSet NoiseModel::Draw(std::uint64_t seed, std::uint64_t index) const {
  std::mt19937_64 rng(DeriveSeed(seed, index));
  return Draw(rng);
}

std::string_view IntervalMethodName(IntervalMethod m) {
  switch (m) {
    case IntervalMethod::kExactZ:
      return "exact";
    case IntervalMethod::kMcT:
      return "mc-t";
    case IntervalMethod::kMcDf:
      return "mc-df";
  }
  return "unknown";
}

std::optional<IntervalMethod> ParseIntervalMethod(std::string_view s) {
  if (s == "exact" || s == "exact-z") return IntervalMethod::kExactZ;
  if (s == "mc-t") return IntervalMethod::kMcT;
  if (s == "mc-df") return IntervalMethod::kMcDf;
  return std::nullopt;
}

namespace {

void CheckAlpha(double alpha) {
  if (!(alpha > 0 && alpha < 1)) {
    throw Error(ErrorCode::kParameter, "alpha must lie in (0, 1)");
  }
}

Interval Symmetric(double estimate, double half) {
  return Interval{.estimate = estimate,
                  .lower = estimate - half,
                  .upper = estimate + half};
}

std::map<MarginId, std::size_t> StackOffsets(const FinalEstimates& e,
                                             std::size_t* total) {
  std::map<MarginId, std::size_t> offsets;
  std::size_t n = 0;
  for (const auto& [m, t] : e.tables()) {
    offsets.emplace(m, n);
    n += t.size();
  }
  if (total != nullptr) *total = n;
  return offsets;
}

template <typename HalfWidth>
IntervalTable FromReplicates(const FinalEstimates& estimates,
                             const ReplicateSet& replicates, double alpha,
                             IntervalMethod method, HalfWidth half_width) {
  IntervalTable out{.method = method, .alpha = alpha, .cells = {}};
  std::vector<double> column(replicates.rows.size());
  for (const auto& [m, table] : estimates.tables()) {
    auto it = replicates.offsets.find(m);
    if (it == replicates.offsets.end()) {
      throw Error(ErrorCode::kMarginMismatch,
                  "replicates do not cover margin '" +
                      estimates.schema().MarginName(m) + "'");
    }
    std::vector<Interval> cells(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
      for (std::size_t j = 0; j < column.size(); ++j) {
        column[j] = replicates.rows[j][it->second + i];
      }
      cells[i] = Symmetric(table[i], half_width(column));
    }
    out.cells.emplace(m, std::move(cells));
  }
  return out;
}

}  // namespace

double NormalQuantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double StudentTQuantile(double p, double dof) {
  return boost::math::quantile(boost::math::students_t_distribution<double>(dof),
                               p);
}

Interval ZInterval(double estimate, double variance, double alpha) {
  CheckAlpha(alpha);
  if (variance < 0) {
    throw Error(ErrorCode::kParameter, "variance must be nonnegative");
  }
  return Symmetric(estimate,
                   NormalQuantile(1 - alpha / 2) * std::sqrt(variance));
}

Interval ClipInterval(const Interval& in) {
  Interval out = in;
  out.clipped = true;
  out.lower = std::max(0.0, std::ceil(in.lower));
  out.upper = std::floor(in.upper);
  if (out.lower > out.upper) {
    if (out.lower <= in.upper) {
      out.upper = out.lower;
    } else {
      out.empty = true;
    }
  }
  return out;
}

IntervalTable ClipIntervals(const IntervalTable& in) {
  IntervalTable out{.method = in.method, .alpha = in.alpha, .cells = {}};
  for (const auto& [m, cells] : in.cells) {
    std::vector<Interval> clipped(cells.size());
    std::transform(cells.begin(), cells.end(), clipped.begin(), ClipInterval);
    out.cells.emplace(m, std::move(clipped));
  }
  return out;
}

void CheckEqualVariances(const NoisyTableSet& noisy, double tolerance) {
  for (const auto& [m, t] : noisy.tables()) {
    if (!t.variance().IsUniform(tolerance)) {
      throw Error(ErrorCode::kAssumption,
                  "table '" + noisy.schema().MarginName(m) +
                      "' has unequal within-table variances; exact "
                      "variances need one variance per table");
    }
  }
}

double ExactCellVariance(const NoisyTableSet& noisy, const DesiredSet& desired,
                         MarginId margin, std::span<const int> cell,
                         const SeaBlueOptions& options) {
  CheckEqualVariances(noisy);
  const Schema& schema = noisy.schema();
  schema.Validate(margin);
  if (!desired.contains(margin)) {
    throw Error(ErrorCode::kMarginMismatch,
                "margin '" + schema.MarginName(margin) + "' is not desired");
  }
  const std::vector<int> dims = schema.Dims(margin);
  if (cell.size() != dims.size()) {
    throw Error(ErrorCode::kIndex, "cell has the wrong number of coordinates");
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (cell[i] < 0 || cell[i] >= dims[i]) {
      throw Error(ErrorCode::kIndex, "cell coordinate out of range");
    }
  }
  const std::size_t target =
      DenseTable::Zeros(margin, dims).Offset(cell);

  // Smallest observed table containing the margin.
  std::optional<MarginId> source;
  for (const auto& [m, t] : noisy.tables()) {
    if (!margin.IsSubsetOf(m)) continue;
    if (!source || schema.CellCount(m) < schema.CellCount(*source)) source = m;
  }
  if (!source) {
    throw Error(ErrorCode::kUnreachableMargin,
                "margin '" + schema.MarginName(margin) +
                    "' is not contained in any observed table");
  }

  std::vector<Table> input;
  for (const auto& [m, t] : noisy.tables()) {
    std::vector<double> values(t.size(), 0.0);
    if (m == *source) {
      const std::vector<int> source_dims = schema.Dims(m);
      const auto strides =
          internal::ProjectedStrides(m, source_dims, margin);
      const double sigma2 = t.variance().at(0);
      internal::ForEachCell(source_dims, strides,
                            [&](std::size_t o, std::int64_t i) {
                              if (static_cast<std::size_t>(i) == target) {
                                values[o] = sigma2;
                              }
                            });
    }
    input.emplace_back(DenseTable(m, t.dims(), std::move(values)),
                       t.variance());
  }
  const FinalEstimates out =
      SeaBlue(NoisyTableSet(schema, std::move(input)), desired, options);
  return out.at(margin)[target];
}

std::map<MarginId, std::vector<double>> ExactVariances(
    const NoisyTableSet& noisy, const DesiredSet& desired,
    const SeaBlueOptions& options) {
  CheckEqualVariances(noisy);
  std::map<MarginId, std::vector<double>> out;
  for (MarginId m : desired.margins()) {
    const std::vector<int> first(m.size(), 0);
    const double v = ExactCellVariance(noisy, desired, m, first, options);
    out.emplace(m, std::vector<double>(noisy.schema().CellCount(m),
                                       std::max(0.0, v)));
  }
  return out;
}

IntervalTable ExactZIntervals(
    const FinalEstimates& estimates,
    const std::map<MarginId, std::vector<double>>& variances, double alpha) {
  CheckAlpha(alpha);
  IntervalTable out{.method = IntervalMethod::kExactZ, .alpha = alpha,
                    .cells = {}};
  const double z = NormalQuantile(1 - alpha / 2);
  for (const auto& [m, table] : estimates.tables()) {
    auto it = variances.find(m);
    if (it == variances.end() || it->second.size() != table.size()) {
      throw Error(ErrorCode::kMarginMismatch,
                  "no variances for margin '" +
                      estimates.schema().MarginName(m) + "'");
    }
    std::vector<Interval> cells(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
      cells[i] = Symmetric(table[i], z * std::sqrt(std::max(0.0, it->second[i])));
    }
    out.cells.emplace(m, std::move(cells));
  }
  return out;
}

Pipeline SeaBluePipeline(DesiredSet desired, SeaBlueOptions options) {
  return [desired = std::move(desired),
          options = std::move(options)](const NoisyTableSet& noisy) {
    return SeaBlue(noisy, desired, options);
  };
}

ReplicateSet DrawReplicates(const NoiseModel& noise, const Pipeline& pipeline,
                            int replicates, std::uint64_t seed, int jobs) {
  if (replicates < 1) {
    throw Error(ErrorCode::kParameter, "need at least one replicate");
  }
  ReplicateSet out;
  out.rows.resize(replicates);
  std::vector<std::map<MarginId, std::size_t>> layouts(replicates);
  std::vector<std::size_t> sizes(replicates);

  auto run = [&](int j) {
    const FinalEstimates e = pipeline(noise.Draw(seed, j));
    layouts[j] = StackOffsets(e, &sizes[j]);
    std::vector<double>& row = out.rows[j];
    row.reserve(sizes[j]);
    for (const auto& [m, t] : e.tables()) {
      row.insert(row.end(), t.values().begin(), t.values().end());
    }
  };

  internal::ParallelFor(replicates, jobs, run);
  out.offsets = layouts[0];
  out.cells = sizes[0];
  return out;
}

int DistributionFreeIndex(int replicates, double alpha) {
  CheckAlpha(alpha);
  const double bound = (1 - alpha) / alpha;
  if (replicates < bound - 1e-9) {
    std::ostringstream msg;
    msg << "distribution-free intervals need m >= (1-alpha)/alpha = "
        << std::ceil(bound - 1e-9) << " replicates, got " << replicates;
    throw Error(ErrorCode::kParameter, msg.str());
  }
  const int k = static_cast<int>(std::ceil((1 - alpha) * (replicates + 1) - 1e-9));
  return std::clamp(k, 1, replicates);
}

double McTHalfWidth(std::span<const double> outputs, double alpha) {
  if (outputs.size() < 2) {
    throw Error(ErrorCode::kParameter, "mc-t needs at least 2 replicates");
  }
  double sum = 0;
  for (double x : outputs) sum += x * x;
  const double m = static_cast<double>(outputs.size());
  return StudentTQuantile(1 - alpha / 2, m) * std::sqrt(sum / m);
}

double McDfHalfWidth(std::span<const double> outputs, double alpha) {
  const int k = DistributionFreeIndex(static_cast<int>(outputs.size()), alpha);
  std::vector<double> abs(outputs.size());
  std::transform(outputs.begin(), outputs.end(), abs.begin(),
                 [](double x) { return std::abs(x); });
  std::nth_element(abs.begin(), abs.begin() + (k - 1), abs.end());
  return abs[k - 1];
}

IntervalTable McTFromReplicates(const FinalEstimates& estimates,
                                const ReplicateSet& replicates, double alpha) {
  CheckAlpha(alpha);
  return FromReplicates(estimates, replicates, alpha, IntervalMethod::kMcT,
                        [alpha](std::span<const double> c) {
                          return McTHalfWidth(c, alpha);
                        });
}

IntervalTable McDfFromReplicates(const FinalEstimates& estimates,
                                 const ReplicateSet& replicates, double alpha) {
  DistributionFreeIndex(static_cast<int>(replicates.rows.size()), alpha);
  return FromReplicates(estimates, replicates, alpha, IntervalMethod::kMcDf,
                        [alpha](std::span<const double> c) {
                          return McDfHalfWidth(c, alpha);
                        });
}

IntervalTable McTIntervals(const FinalEstimates& estimates,
                           const NoiseModel& noise, const Pipeline& pipeline,
                           int replicates, double alpha, std::uint64_t seed,
                           int jobs) {
  CheckAlpha(alpha);
  if (!noise.AllGaussian()) {
    throw Error(ErrorCode::kAssumption,
                "mc-t intervals assume Gaussian noise in every table");
  }
  if (replicates < 2) {
    throw Error(ErrorCode::kParameter, "mc-t needs at least 2 replicates");
  }
  return McTFromReplicates(
      estimates, DrawReplicates(noise, pipeline, replicates, seed, jobs),
      alpha);
}

IntervalTable McDfIntervals(const FinalEstimates& estimates,
                            const NoiseModel& noise, const Pipeline& pipeline,
                            int replicates, double alpha, std::uint64_t seed,
                            int jobs) {
  DistributionFreeIndex(replicates, alpha);
  return McDfFromReplicates(
      estimates, DrawReplicates(noise, pipeline, replicates, seed, jobs),
      alpha);
}

}  // namespace consistent_counts
