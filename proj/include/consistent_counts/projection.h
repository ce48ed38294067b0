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

// Dense generalized least-squares projection onto the self-consistent
// subspace. Slow and memory hungry by construction; used as the reference
// solver, for unequal-variance inputs and as the benchmark baseline.

#ifndef CONSISTENT_COUNTS_PROJECTION_H_
#define CONSISTENT_COUNTS_PROJECTION_H_

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "consistent_counts/downpass.h"
#include "consistent_counts/histogram.h"
#include "consistent_counts/projection_limits.h"

namespace consistent_counts {

// Consistency constraints over the stacked cells of every desired margin.
// Columns follow DesiredSet order, row-major within each table. One row
// per (R, S, v) with R = S minus one variable and v a cell of R:
//   x_R[v] - sum of x_S over cells mapping to v = 0.
struct ConstraintSystem {
  Schema schema;
  DesiredSet desired;
  std::map<MarginId, Eigen::Index> offsets;
  Eigen::Index columns = 0;
  Eigen::MatrixXd a;

  Eigen::Index Column(MarginId margin, std::span<const int> coords) const;
};

// Bytes needed for the constraint matrix alone.
std::int64_t ConstraintBytes(const Schema& schema, const DesiredSet& desired);

ConstraintSystem BuildConstraints(
    const Schema& schema, const DesiredSet& desired,
    const ProjectionLimits& limits = ProjectionLimits::FromEnvironment());

struct DimensionReport {
  std::int64_t n = 0;     // desired cells
  std::int64_t rank = 0;  // rank of the constraint matrix
  std::int64_t p = 0;     // min(rank, n - rank)
};

DimensionReport ReportDimensions(const ConstraintSystem& system);

// Dimension of the consistent subspace predicted from the margin structure:
// the sum over desired margins of prod(levels - 1).
std::int64_t ConsistentDimension(const Schema& schema,
                                 const DesiredSet& desired);

// Estimated peak allocation of a projection over `desired`.
std::int64_t ProjectionBytes(const Schema& schema, const DesiredSet& desired,
                             bool full_covariance);

class WeightedSolver;

// Holds an orthonormal basis N of the consistent subspace, so repeated
// projections with new data only pay for a small solve.
class BlueProjector {
 public:
  explicit BlueProjector(
      const ConstraintSystem& system,
      const ProjectionLimits& limits = ProjectionLimits::FromEnvironment());

  const Schema& schema() const { return schema_; }
  const DesiredSet& desired() const { return desired_; }
  const std::map<MarginId, Eigen::Index>& offsets() const { return offsets_; }
  Eigen::Index columns() const { return basis_.rows(); }
  Eigen::Index rank() const { return rank_; }
  const Eigen::MatrixXd& basis() const { return basis_; }

  // Diagonal covariance. Infinite variance marks an unobserved cell, which
  // then carries zero weight.
  WeightedSolver Diagonal(const Eigen::VectorXd& variances) const;

  // Full covariance among the observed cells (mask true), in column order.
  WeightedSolver Full(const std::vector<bool>& observed,
                      const Eigen::MatrixXd& covariance) const;

 private:
  Schema schema_;
  DesiredSet desired_;
  std::map<MarginId, Eigen::Index> offsets_;
  Eigen::Index rank_ = 0;
  Eigen::MatrixXd basis_;
};

class WeightedSolver {
 public:
  // Projection of the observation vector. Unobserved entries are ignored.
  Eigen::VectorXd Estimate(const Eigen::VectorXd& observations) const;
  Eigen::MatrixXd Covariance() const;
  Eigen::VectorXd CovarianceDiagonal() const;

 private:
  friend class BlueProjector;
  struct Whitening;

  WeightedSolver(const BlueProjector* projector,
                 std::shared_ptr<const Whitening> whitening);

  Eigen::MatrixXd CovarianceFactor() const;

  const BlueProjector* projector_;
  std::shared_ptr<const Whitening> whitening_;
};

// One-shot form: estimate and, optionally, covariance.
struct BlueResult {
  Eigen::VectorXd estimate;
  Eigen::MatrixXd covariance;  // empty unless requested
};
BlueResult BlueProjection(const ConstraintSystem& system,
                          const Eigen::VectorXd& observations,
                          const Eigen::VectorXd& variances,
                          bool with_covariance);

// Observed values and per-cell variances laid out in the projector's
// column order. Desired cells without an observed table get +inf variance.
struct ObservationVector {
  Eigen::VectorXd values;
  Eigen::VectorXd variances;
};
ObservationVector Stack(const std::map<MarginId, Eigen::Index>& offsets,
                        Eigen::Index columns, const NoisyTableSet& noisy);

std::map<MarginId, DenseTable> Unstack(
    const Schema& schema, const std::map<MarginId, Eigen::Index>& offsets,
    const Eigen::VectorXd& stacked, const DesiredSet& keep);

Eigen::VectorXd StackTables(const std::map<MarginId, Eigen::Index>& offsets,
                            Eigen::Index columns,
                            const std::map<MarginId, DenseTable>& tables);

struct ProjectionOutput {
  FinalEstimates estimates;
  std::map<MarginId, std::vector<double>> variances;  // when requested
  DimensionReport dimensions;
};

// BLUE over the closure of desired and observed margins, reported on the
// desired margins.
ProjectionOutput ProjectionEstimate(
    const NoisyTableSet& noisy, const DesiredSet& desired,
    bool with_variances = false,
    const ProjectionLimits& limits = ProjectionLimits::FromEnvironment());

// Component of `y` (a table over `margin`) lying in the zero-margin
// subspace, projected in the inner product weighted by 1 / variances.
std::vector<double> ProjectOntoZeroMarginSubspace(
    const Schema& schema, MarginId margin, std::span<const double> y,
    std::span<const double> variances,
    const ProjectionLimits& limits = ProjectionLimits::FromEnvironment());

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_PROJECTION_H_
