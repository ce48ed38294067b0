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

#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "consistent_counts/collection.h"
#include "consistent_counts/error.h"
#include "test_util.h"

namespace consistent_counts {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ::testing::HasSubstr;

DesiredSet AllOf(const Schema& schema) {
  return CloseDownward({schema.Full()});
}

// Stacked vector of all margins of a random detailed table: consistent by
// construction.
VectorXd ConsistentVector(std::mt19937_64& rng, const ConstraintSystem& sys) {
  const DenseTable truth =
      testing_util::RandomTable(rng, sys.schema, sys.schema.Full());
  std::map<MarginId, DenseTable> tables;
  for (MarginId m : sys.desired.margins()) {
    tables.emplace(m, testing_util::BruteForceMarginal(sys.schema, truth, m));
  }
  return StackTables(sys.offsets, sys.columns, tables);
}

NoisyTableSet UnequalPair() {
  const Schema schema({{"A", 2}, {"B", 2}});
  return NoisyTableSet(
      schema,
      {Table(DenseTable(MarginId::Of({0}), {2}, {5, 6}),
             Variance::PerCell({1, 11})),
       Table(DenseTable(MarginId::Of({0, 1}), {2, 2}, {1, 2, 3, 4}),
             Variance::PerCell({11, 11, 1, 1}))});
}

TEST(BuildConstraintsTest, SingleVariable) {
  const Schema schema({{"A", 2}});
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  ASSERT_EQ(sys.a.rows(), 1);
  ASSERT_EQ(sys.a.cols(), 3);
  EXPECT_EQ(sys.a(0, 0), 1);
  EXPECT_EQ(sys.a(0, 1), -1);
  EXPECT_EQ(sys.a(0, 2), -1);
}

TEST(BuildConstraintsTest, TwoBinaryRank) {
  const Schema schema = testing_util::UniformSchema(2, 2);
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  EXPECT_EQ(sys.columns, 9);
  const DimensionReport r = ReportDimensions(sys);
  EXPECT_EQ(r.n, 9);
  EXPECT_EQ(r.rank, 5);
  EXPECT_EQ(r.p, 4);
}

TEST(BuildConstraintsTest, TwoTernaryRank) {
  const Schema schema = testing_util::UniformSchema(2, 3);
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  EXPECT_EQ(sys.columns, 16);
  EXPECT_EQ(ReportDimensions(sys).rank, 7);
}

TEST(DimensionReportTest, Examples) {
  const Schema one({{"A", 2}});
  DimensionReport r = ReportDimensions(BuildConstraints(one, AllOf(one)));
  EXPECT_EQ(r.n, 3);
  EXPECT_EQ(r.p, 1);
  const Schema five = testing_util::UniformSchema(2, 5);
  r = ReportDimensions(BuildConstraints(five, AllOf(five)));
  EXPECT_EQ(r.n, 36);
  EXPECT_EQ(r.p, 11);
}

TEST(DimensionReportProperty, NullSpaceMatchesLevelProduct) {
  std::mt19937_64 rng(79);
  for (int trial = 0; trial < 15; ++trial) {
    const Schema schema = testing_util::RandomSchema(rng, 3, 4);
    const DesiredSet d = AllOf(schema);
    const DimensionReport r = ReportDimensions(BuildConstraints(schema, d));
    std::int64_t detail = 1;
    for (const Variable& v : schema.variables()) detail *= v.levels;
    EXPECT_EQ(r.n - r.rank, detail);
    EXPECT_EQ(ConsistentDimension(schema, d), detail);
  }
}

TEST(BlueProjectionTest, ConsistentInputUnchanged) {
  std::mt19937_64 rng(83);
  const Schema schema({{"A", 2}, {"B", 3}, {"C", 2}});
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  const VectorXd x = ConsistentVector(rng, sys);
  const BlueResult r =
      BlueProjection(sys, x, VectorXd::Constant(sys.columns, 1.5), false);
  EXPECT_LE((r.estimate - x).lpNorm<Eigen::Infinity>(),
            1e-10 * x.lpNorm<Eigen::Infinity>());
}

TEST(BlueProjectionTest, UnequalPairBeatsBetweenTableBound) {
  const NoisyTableSet noisy = UnequalPair();
  const DesiredSet desired = CloseDownward({MarginId::Of({0, 1})});
  const ProjectionOutput out = ProjectionEstimate(noisy, desired, true);
  const double total_var = out.variances.at(MarginId())[0];
  EXPECT_LE(total_var, 3.0 + 1e-8);
  EXPECT_LT(total_var, 8.0);
  const double collection =
      CollectionSingle(noisy, MarginId(), {}).variance;
  EXPECT_DOUBLE_EQ(collection, 8.0);
}

TEST(BlueProjectionTest, NonPositiveVarianceIsNumericError) {
  const Schema schema({{"A", 2}});
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  try {
    BlueProjection(sys, VectorXd::Zero(3), VectorXd::Constant(3, 0.0), false);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
  }
  EXPECT_THROW(
      BlueProjection(sys, VectorXd::Zero(3), VectorXd::Constant(2, 1.0), false),
      Error);
}

TEST(BlueProjectionTest, UnidentifiedCellsAreRejected) {
  // Only the total observed: the one-way cells are not determined.
  const Schema schema({{"A", 2}});
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  VectorXd var = VectorXd::Constant(3, std::numeric_limits<double>::infinity());
  var[0] = 1;
  EXPECT_THROW(BlueProjection(sys, VectorXd::Zero(3), var, false), Error);
}

TEST(BlueProjectionTest, FullCovarianceMatchesDiagonal) {
  std::mt19937_64 rng(89);
  const Schema schema({{"A", 3}, {"B", 2}});
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  const BlueProjector projector(sys);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  VectorXd var(sys.columns);
  for (auto& v : var) v = u(rng);
  VectorXd y(sys.columns);
  for (auto& v : y) v = u(rng) * 10;
  const auto diag = projector.Diagonal(var);
  const auto full = projector.Full(std::vector<bool>(sys.columns, true),
                                   MatrixXd(var.asDiagonal()));
  EXPECT_LE((diag.Estimate(y) - full.Estimate(y)).lpNorm<Eigen::Infinity>(),
            1e-10 * 10);
  EXPECT_LE((diag.Covariance() - full.Covariance()).lpNorm<Eigen::Infinity>(),
            1e-10);
  MatrixXd bad = MatrixXd::Identity(sys.columns, sys.columns);
  bad(0, 0) = -1;
  EXPECT_THROW(projector.Full(std::vector<bool>(sys.columns, true), bad),
               Error);
}

TEST(BlueProjectionTest, CorrelatedNoiseMatchesGeneralizedLeastSquares) {
  // Reference: x = y - S A^T (A S A^T)^+ A y for full covariance S.
  std::mt19937_64 rng(97);
  const Schema schema({{"A", 2}, {"B", 2}});
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  const MatrixXd g = MatrixXd::Random(sys.columns, sys.columns);
  const MatrixXd cov = g * g.transpose() +
                       MatrixXd::Identity(sys.columns, sys.columns);
  const VectorXd y = VectorXd::Random(sys.columns) * 5;
  const BlueProjector projector(sys);
  const VectorXd got =
      projector.Full(std::vector<bool>(sys.columns, true), cov).Estimate(y);
  const MatrixXd& a = sys.a;
  const VectorXd expected =
      y - cov * a.transpose() *
              Eigen::CompleteOrthogonalDecomposition<MatrixXd>(
                  a * cov * a.transpose())
                  .solve(a * y);
  EXPECT_LE((got - expected).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(BlueProjectionProperty, ConstraintsCovarianceAndLinearity) {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (int trial = 0; trial < 15; ++trial) {
    const Schema schema = testing_util::RandomSchema(rng, 3, 3);
    const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
    const BlueProjector projector(sys);
    VectorXd var(sys.columns);
    for (auto& v : var) v = u(rng);
    const auto solver = projector.Diagonal(var);
    const VectorXd x = VectorXd::Random(sys.columns) * 10;
    const VectorXd y = VectorXd::Random(sys.columns) * 10;
    const VectorXd ex = solver.Estimate(x);
    const double scale = 10 * sys.columns;
    EXPECT_LE((sys.a * ex).lpNorm<Eigen::Infinity>(), 1e-8 * scale);
    EXPECT_LE((solver.Estimate(x + y) - ex - solver.Estimate(y))
                  .lpNorm<Eigen::Infinity>(),
              1e-10 * scale);
    const VectorXd c = ConsistentVector(rng, sys);
    EXPECT_LE((solver.Estimate(c) - c).lpNorm<Eigen::Infinity>(),
              1e-10 * (1 + c.lpNorm<Eigen::Infinity>()));

    const MatrixXd cov = solver.Covariance();
    EXPECT_LE((cov - cov.transpose()).lpNorm<Eigen::Infinity>(), 1e-10);
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    EXPECT_GE(eig.eigenvalues().minCoeff(),
              -1e-8 * cov.trace() / sys.columns);
    for (Eigen::Index i = 0; i < sys.columns; ++i) {
      EXPECT_LE(cov(i, i), var[i] + 1e-10);
    }
    EXPECT_LE((solver.CovarianceDiagonal() - cov.diagonal())
                  .lpNorm<Eigen::Infinity>(),
              1e-12);
  }
}

TEST(BlueProjectionProperty, CovarianceMatchesMonteCarlo) {
  std::mt19937_64 rng(103);
  const Schema schema({{"A", 2}, {"B", 3}});
  const ConstraintSystem sys = BuildConstraints(schema, AllOf(schema));
  const BlueProjector projector(sys);
  VectorXd var(sys.columns);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (auto& v : var) v = u(rng);
  const auto solver = projector.Diagonal(var);
  const VectorXd predicted = solver.CovarianceDiagonal();
  std::normal_distribution<double> normal;
  VectorXd sum_sq = VectorXd::Zero(sys.columns);
  const int draws = 20000;
  for (int d = 0; d < draws; ++d) {
    VectorXd e(sys.columns);
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      e[i] = normal(rng) * std::sqrt(var[i]);
    }
    sum_sq += solver.Estimate(e).cwiseAbs2();
  }
  for (Eigen::Index i = 0; i < sys.columns; ++i) {
    EXPECT_NEAR(sum_sq[i] / draws / predicted[i], 1.0, 0.05) << "column " << i;
  }
}

TEST(ProjectionEstimateTest, UnreachableMargin) {
  const Schema schema({{"A", 2}, {"B", 2}});
  const NoisyTableSet noisy(
      schema, {Table(DenseTable(MarginId::Of({0}), {2}, {1, 2}),
                     Variance::Scalar(1))});
  try {
    ProjectionEstimate(noisy, AllOf(schema));
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnreachableMargin);
  }
}

TEST(ProjectionEstimateTest, SizeGuardNamesCap) {
  const Schema schema = testing_util::UniformSchema(6, 6);
  ProjectionLimits limits;
  EXPECT_GT(ProjectionBytes(schema, AllOf(schema), false), limits.max_bytes);
  std::vector<Table> tables;
  tables.emplace_back(DenseTable::Zeros(schema, schema.Full()),
                      Variance::Scalar(1));
  const NoisyTableSet noisy(schema, std::move(tables));
  try {
    ProjectionEstimate(noisy, AllOf(schema), false, limits);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSizeGuard);
    EXPECT_THAT(e.what(), HasSubstr(kMemCapEnv));
  }
}

TEST(ProjectionEstimateTest, FiveByFiveFitsDefaultCap) {
  const Schema schema = testing_util::UniformSchema(5, 5);
  EXPECT_LE(ProjectionBytes(schema, AllOf(schema), false),
            ProjectionLimits::kDefaultMaxBytes);
}

TEST(ProjectOntoZeroMarginSubspaceTest, UnitVariancesMatchOrthogonal) {
  std::mt19937_64 rng(107);
  const Schema schema({{"A", 3}, {"B", 4}});
  const DenseTable y = testing_util::RandomTable(rng, schema, schema.Full());
  const std::vector<double> ones(y.size(), 1.0);
  const auto p =
      ProjectOntoZeroMarginSubspace(schema, schema.Full(), y.values(), ones);
  const DenseTable zacute = BuildZAcute(schema, y);
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_NEAR(p[i], y[i] - zacute[i], 1e-10);
  }
}

TEST(ByteSizeTest, Parses) {
  EXPECT_EQ(ParseByteSize("1024"), 1024);
  EXPECT_EQ(ParseByteSize("512M"), std::int64_t{512} << 20);
  EXPECT_EQ(ParseByteSize("2GiB"), std::int64_t{2} << 30);
  EXPECT_EQ(ParseByteSize(" 3 kb "), std::nullopt);
  EXPECT_EQ(ParseByteSize("3kb"), 3072);
  EXPECT_EQ(ParseByteSize("lots"), std::nullopt);
  EXPECT_EQ(ParseByteSize("-5"), std::nullopt);
}

TEST(ByteSizeTest, EnvironmentOverride) {
  ::setenv(kMemCapEnv, "1M", 1);
  EXPECT_EQ(ProjectionLimits::FromEnvironment().max_bytes, 1 << 20);
  ::setenv(kMemCapEnv, "garbage", 1);
  EXPECT_THROW(ProjectionLimits::FromEnvironment(), Error);
  ::unsetenv(kMemCapEnv);
  EXPECT_EQ(ProjectionLimits::FromEnvironment().max_bytes,
            ProjectionLimits::kDefaultMaxBytes);
}

}  // namespace
}  // namespace consistent_counts
