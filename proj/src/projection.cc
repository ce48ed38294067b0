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

#include "consistent_counts/projection.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/Cholesky>

#include "consistent_counts/error.h"
#include "strides.h"

namespace consistent_counts {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index ConstraintSystem::Column(MarginId margin,
                               std::span<const int> coords) const {
  auto it = offsets.find(margin);
  if (it == offsets.end()) {
    throw Error(ErrorCode::kMarginMismatch,
                "margin '" + schema.MarginName(margin) + "' is not desired");
  }
  const std::vector<int> dims = schema.Dims(margin);
  if (coords.size() != dims.size()) {
    throw Error(ErrorCode::kIndex, "cell index has wrong length");
  }
  const auto strides = internal::RowMajorStrides(dims);
  Index col = it->second;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (coords[i] < 0 || coords[i] >= dims[i]) {
      throw Error(ErrorCode::kIndex, "cell coordinate out of range");
    }
    col += coords[i] * strides[i];
  }
  return col;
}

namespace {

std::int64_t ConstraintRows(const Schema& schema, const DesiredSet& desired) {
  std::int64_t rows = 0;
  for (MarginId s : desired.margins()) {
    for (int v : s.members()) rows += schema.CellCount(s.Without(v));
  }
  return rows;
}

// Saturating multiply for size estimates.
std::int64_t Mul(std::int64_t a, std::int64_t b) {
  if (a != 0 && b > std::numeric_limits<std::int64_t>::max() / a) {
    return std::numeric_limits<std::int64_t>::max();
  }
  return a * b;
}

std::int64_t Add(std::int64_t a, std::int64_t b) {
  return a > std::numeric_limits<std::int64_t>::max() - b
             ? std::numeric_limits<std::int64_t>::max()
             : a + b;
}

}  // namespace

std::int64_t ConstraintBytes(const Schema& schema, const DesiredSet& desired) {
  return Mul(Mul(ConstraintRows(schema, desired), desired.CellCount(schema)),
             sizeof(double));
}

std::int64_t ConsistentDimension(const Schema& schema,
                                 const DesiredSet& desired) {
  std::int64_t d = 0;
  for (MarginId s : desired.margins()) {
    std::int64_t term = 1;
    for (int v : s.members()) term *= schema.variable(v).levels - 1;
    d += term;
  }
  return d;
}

std::int64_t ProjectionBytes(const Schema& schema, const DesiredSet& desired,
                             bool full_covariance) {
  const std::int64_t n = desired.CellCount(schema);
  const std::int64_t d = ConsistentDimension(schema, desired);
  // Constraint matrix plus its factorized transpose, the basis and its
  // whitened copy.
  std::int64_t doubles = Add(Mul(2, Mul(ConstraintRows(schema, desired), n)),
                             Mul(2, Mul(n, d)));
  if (full_covariance) doubles = Add(doubles, Mul(n, n));
  return Mul(doubles, sizeof(double));
}

ConstraintSystem BuildConstraints(const Schema& schema,
                                  const DesiredSet& desired,
                                  const ProjectionLimits& limits) {
  limits.Check(ConstraintBytes(schema, desired), "constraint matrix");
  ConstraintSystem system{schema, desired, {}, 0, {}};
  for (MarginId s : desired.margins()) {
    schema.Validate(s);
    system.offsets.emplace(s, system.columns);
    system.columns += schema.CellCount(s);
  }
  system.a = MatrixXd::Zero(ConstraintRows(schema, desired), system.columns);
  Index row_base = 0;
  for (MarginId s : desired.margins()) {
    const std::vector<int> dims = schema.Dims(s);
    const Index col_s = system.offsets.at(s);
    for (int v : s.members()) {
      const MarginId r = s.Without(v);
      const Index col_r = system.offsets.at(r);
      const auto strides = internal::ProjectedStrides(s, dims, r);
      internal::ForEachCell(dims, strides, [&](std::size_t o, std::int64_t i) {
        system.a(row_base + i, col_r + i) = 1.0;
        system.a(row_base + i, col_s + static_cast<Index>(o)) = -1.0;
      });
      row_base += schema.CellCount(r);
    }
  }
  return system;
}

DimensionReport ReportDimensions(const ConstraintSystem& system) {
  DimensionReport report;
  report.n = system.columns;
  if (system.a.rows() > 0) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(system.a);
    report.rank = qr.rank();
  }
  report.p = std::min(report.rank, report.n - report.rank);
  return report;
}

// ------------------------------------------------------------ BlueProjector

BlueProjector::BlueProjector(const ConstraintSystem& system,
                             const ProjectionLimits& limits)
    : schema_(system.schema),
      desired_(system.desired),
      offsets_(system.offsets) {
  const Index n = system.columns;
  limits.Check(ProjectionBytes(schema_, desired_, false), "dense projection");
  if (system.a.rows() == 0) {
    basis_ = MatrixXd::Identity(n, n);
    return;
  }
  // Trailing columns of Q in A^T P = Q R span the null space of A.
  MatrixXd at = system.a.transpose();
  Eigen::ColPivHouseholderQR<Eigen::Ref<MatrixXd>> qr(at);
  rank_ = qr.rank();
  basis_ = MatrixXd::Identity(n, n).rightCols(n - rank_);
  basis_.applyOnTheLeft(qr.householderQ());
}

struct WeightedSolver::Whitening {
  // Diagonal case: 1 / sd per column, 0 where unobserved. Full case: the
  // observed columns and the Cholesky factor of their covariance.
  VectorXd inverse_sd;
  std::vector<Index> observed;
  Eigen::LLT<MatrixXd> llt;
  bool full = false;
  Eigen::HouseholderQR<MatrixXd> qr;
};

namespace {

// The whitened basis has orthonormal columns before weighting, so a
// collapsed diagonal entry of R means some direction is unobserved.
void CheckIdentified(const Eigen::HouseholderQR<MatrixXd>& qr) {
  const Eigen::VectorXd diag = qr.matrixQR().diagonal().cwiseAbs();
  if (diag.size() == 0) return;
  const double tol = 1e-10 * std::max(1.0, diag.maxCoeff());
  const Index deficient = (diag.array() <= tol).count();
  if (deficient > 0) {
    throw Error(ErrorCode::kNumeric,
                "observed cells do not determine every desired cell (" +
                    std::to_string(deficient) + " of " +
                    std::to_string(diag.size()) +
                    " directions unobserved)");
  }
}

}  // namespace

WeightedSolver BlueProjector::Diagonal(const VectorXd& variances) const {
  const Index n = basis_.rows();
  if (variances.size() != n) {
    throw Error(ErrorCode::kStructure, "variance vector has " +
                                           std::to_string(variances.size()) +
                                           " entries, expected " +
                                           std::to_string(n));
  }
  auto w = std::make_shared<WeightedSolver::Whitening>();
  w->inverse_sd.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double v = variances[i];
    if (!(v > 0)) {
      throw Error(ErrorCode::kNumeric,
                  "covariance is not positive definite (variance " +
                      std::to_string(v) + " at column " + std::to_string(i) +
                      ")");
    }
    w->inverse_sd[i] = std::isinf(v) ? 0.0 : 1.0 / std::sqrt(v);
  }
  w->qr.compute(w->inverse_sd.asDiagonal() * basis_);
  CheckIdentified(w->qr);
  return WeightedSolver(this, std::move(w));
}

WeightedSolver BlueProjector::Full(const std::vector<bool>& observed,
                                   const MatrixXd& covariance) const {
  const Index n = basis_.rows();
  if (static_cast<Index>(observed.size()) != n) {
    throw Error(ErrorCode::kStructure, "observation mask has wrong length");
  }
  auto w = std::make_shared<WeightedSolver::Whitening>();
  w->full = true;
  for (Index i = 0; i < n; ++i) {
    if (observed[i]) w->observed.push_back(i);
  }
  const Index o = static_cast<Index>(w->observed.size());
  if (covariance.rows() != o || covariance.cols() != o) {
    throw Error(ErrorCode::kStructure,
                "covariance must be square over the observed cells");
  }
  w->llt.compute(covariance);
  if (w->llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kNumeric, "covariance is not positive definite");
  }
  MatrixXd g(o, basis_.cols());
  for (Index i = 0; i < o; ++i) g.row(i) = basis_.row(w->observed[i]);
  w->llt.matrixL().solveInPlace(g);
  w->qr.compute(g);
  CheckIdentified(w->qr);
  return WeightedSolver(this, std::move(w));
}

WeightedSolver::WeightedSolver(const BlueProjector* projector,
                               std::shared_ptr<const Whitening> whitening)
    : projector_(projector), whitening_(std::move(whitening)) {}

VectorXd WeightedSolver::Estimate(const VectorXd& observations) const {
  const MatrixXd& basis = projector_->basis();
  if (observations.size() != basis.rows()) {
    throw Error(ErrorCode::kStructure, "observation vector has wrong length");
  }
  VectorXd yw;
  if (whitening_->full) {
    yw.resize(static_cast<Index>(whitening_->observed.size()));
    for (Index i = 0; i < yw.size(); ++i) {
      yw[i] = observations[whitening_->observed[i]];
    }
    whitening_->llt.matrixL().solveInPlace(yw);
  } else {
    yw.resize(observations.size());
    for (Index i = 0; i < yw.size(); ++i) {
      const double s = whitening_->inverse_sd[i];
      yw[i] = s == 0 ? 0.0 : s * observations[i];
    }
  }
  return basis * whitening_->qr.solve(yw);
}

MatrixXd WeightedSolver::CovarianceFactor() const {
  // (G^T G)^-1 = R^-1 R^-T, so Cov = K K^T with K = N R^-1.
  const auto& qr = whitening_->qr;
  const Index d = projector_->basis().cols();
  MatrixXd k = projector_->basis();
  qr.matrixQR()
      .topLeftCorner(d, d)
      .triangularView<Eigen::Upper>()
      .solveInPlace<Eigen::OnTheRight>(k);
  return k;
}

MatrixXd WeightedSolver::Covariance() const {
  const MatrixXd k = CovarianceFactor();
  return k * k.transpose();
}

VectorXd WeightedSolver::CovarianceDiagonal() const {
  return CovarianceFactor().rowwise().squaredNorm();
}

BlueResult BlueProjection(const ConstraintSystem& system,
                          const VectorXd& observations,
                          const VectorXd& variances, bool with_covariance) {
  const BlueProjector projector(system);
  const WeightedSolver solver = projector.Diagonal(variances);
  BlueResult result{solver.Estimate(observations), {}};
  if (with_covariance) result.covariance = solver.Covariance();
  return result;
}

// ------------------------------------------------------------------ Stacking

ObservationVector Stack(const std::map<MarginId, Index>& offsets,
                        Index columns, const NoisyTableSet& noisy) {
  ObservationVector out{
      VectorXd::Zero(columns),
      VectorXd::Constant(columns, std::numeric_limits<double>::infinity())};
  for (const auto& [m, table] : noisy.tables()) {
    auto it = offsets.find(m);
    if (it == offsets.end()) continue;
    for (std::size_t i = 0; i < table.size(); ++i) {
      out.values[it->second + static_cast<Index>(i)] = table.values()[i];
      out.variances[it->second + static_cast<Index>(i)] =
          table.variance().at(i);
    }
  }
  return out;
}

std::map<MarginId, DenseTable> Unstack(const Schema& schema,
                                       const std::map<MarginId, Index>& offsets,
                                       const VectorXd& stacked,
                                       const DesiredSet& keep) {
  std::map<MarginId, DenseTable> out;
  for (MarginId m : keep.margins()) {
    const Index start = offsets.at(m);
    const Index cells = schema.CellCount(m);
    std::vector<double> values(stacked.data() + start,
                               stacked.data() + start + cells);
    out.emplace(m, DenseTable(m, schema.Dims(m), std::move(values)));
  }
  return out;
}

VectorXd StackTables(const std::map<MarginId, Index>& offsets, Index columns,
                     const std::map<MarginId, DenseTable>& tables) {
  VectorXd out = VectorXd::Zero(columns);
  for (const auto& [m, table] : tables) {
    auto it = offsets.find(m);
    if (it == offsets.end()) {
      throw Error(ErrorCode::kMarginMismatch, "table not in constraint system");
    }
    std::copy(table.values().begin(), table.values().end(),
              out.data() + it->second);
  }
  return out;
}

ProjectionOutput ProjectionEstimate(const NoisyTableSet& noisy,
                                    const DesiredSet& desired,
                                    bool with_variances,
                                    const ProjectionLimits& limits) {
  const Schema& schema = noisy.schema();
  for (MarginId s : desired.margins()) {
    schema.Validate(s);
    bool reachable = false;
    for (const auto& [r, t] : noisy.tables()) reachable |= s.IsSubsetOf(r);
    if (!reachable) {
      throw Error(ErrorCode::kUnreachableMargin,
                  "desired margin '" + schema.MarginName(s) +
                      "' is not contained in any observed table");
    }
  }
  std::set<MarginId> all = desired.margins();
  for (const auto& [r, t] : noisy.tables()) all.insert(r);
  const DesiredSet closure = CloseDownward(all);
  limits.Check(ProjectionBytes(schema, closure, false), "dense projection");

  const BlueProjector projector(BuildConstraints(schema, closure, limits),
                                limits);
  const ObservationVector obs =
      Stack(projector.offsets(), projector.columns(), noisy);
  const WeightedSolver solver = projector.Diagonal(obs.variances);
  const VectorXd estimate = solver.Estimate(obs.values);

  ProjectionOutput out;
  std::map<MarginId, Provenance> provenance;
  for (MarginId m : desired.margins()) {
    provenance.emplace(m, Provenance::kDenseProjection);
  }
  out.estimates =
      FinalEstimates(schema, desired,
                     Unstack(schema, projector.offsets(), estimate, desired),
                     std::move(provenance));
  if (with_variances) {
    const VectorXd diag = solver.CovarianceDiagonal();
    for (MarginId m : desired.margins()) {
      const Index start = projector.offsets().at(m);
      out.variances.emplace(
          m, std::vector<double>(diag.data() + start,
                                 diag.data() + start + schema.CellCount(m)));
    }
  }
  out.dimensions.n = projector.columns();
  out.dimensions.rank = projector.columns() - projector.basis().cols();
  out.dimensions.p =
      std::min(out.dimensions.rank, out.dimensions.n - out.dimensions.rank);
  return out;
}

std::vector<double> ProjectOntoZeroMarginSubspace(
    const Schema& schema, MarginId margin, std::span<const double> y,
    std::span<const double> variances, const ProjectionLimits& limits) {
  const std::int64_t cells = schema.CellCount(margin);
  if (static_cast<std::int64_t>(y.size()) != cells ||
      static_cast<std::int64_t>(variances.size()) != cells) {
    throw Error(ErrorCode::kStructure, "table and variances differ in size");
  }
  std::int64_t dim = 1;
  for (int v : margin.members()) dim *= schema.variable(v).levels - 1;
  limits.Check(Mul(Mul(2 * cells, dim), sizeof(double)),
               "weighted projection of '" + schema.MarginName(margin) + "'");
  const std::vector<DenseTable> basis = ZeroMarginBasis(schema, margin);
  MatrixXd b(cells, static_cast<Index>(basis.size()));
  for (Index j = 0; j < b.cols(); ++j) {
    b.col(j) = Eigen::Map<const VectorXd>(basis[j].values().data(), cells);
  }
  VectorXd inverse_sd(cells);
  VectorXd yw(cells);
  for (Index i = 0; i < cells; ++i) {
    if (!(variances[i] > 0) || !std::isfinite(variances[i])) {
      throw Error(ErrorCode::kNumeric, "variances must be positive and finite");
    }
    inverse_sd[i] = 1.0 / std::sqrt(variances[i]);
    yw[i] = y[i] * inverse_sd[i];
  }
  const MatrixXd g = inverse_sd.asDiagonal() * b;
  const VectorXd coef = g.householderQr().solve(yw);
  const VectorXd out = b * coef;
  return std::vector<double>(out.data(), out.data() + cells);
}

}  // namespace consistent_counts
