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

// Down pass: margins are finalized in order of increasing size, each one
// projected so that its own margins agree with the already-final smaller
// tables.

#ifndef CONSISTENT_COUNTS_DOWNPASS_H_
#define CONSISTENT_COUNTS_DOWNPASS_H_

#include <cstdint>
#include <map>
#include <vector>

#include "consistent_counts/collection.h"
#include "consistent_counts/histogram.h"
#include "consistent_counts/projection_limits.h"

namespace consistent_counts {

enum class Provenance {
  kEfficient,  // closed-form orthogonal projection
  kWeighted,   // per-table weighted projection (unequal variances)
  kDenseProjection,  // whole-histogram dense solve
};

class FinalEstimates {
 public:
  FinalEstimates() = default;
  FinalEstimates(Schema schema, DesiredSet desired,
                 std::map<MarginId, DenseTable> tables,
                 std::map<MarginId, Provenance> provenance);

  const Schema& schema() const { return schema_; }
  const DesiredSet& desired() const { return desired_; }
  const std::map<MarginId, DenseTable>& tables() const { return tables_; }
  const DenseTable& at(MarginId margin) const;
  Provenance provenance(MarginId margin) const;
  std::int64_t CellCount() const;

 private:
  Schema schema_;
  DesiredSet desired_;
  std::map<MarginId, DenseTable> tables_;
  std::map<MarginId, Provenance> provenance_;
};

struct DownPassOptions {
  // Within-table variances count as equal when max / min - 1 is at most
  // this.
  double equal_variance_tolerance = 1e-9;
  // Largest table the weighted fallback will attempt.
  std::int64_t weighted_cell_cap = 100000;
  // Use the closed form even when variances differ.
  bool force_efficient = false;
  ProjectionLimits limits = ProjectionLimits::FromEnvironment();
};

// Table over `margin` built only from the fixed margins of every proper
// subset: each subset R contributes its values spread uniformly over the
// removed variables, with alternating sign by the number removed.
DenseTable BuildZHat(const Schema& schema, MarginId margin,
                     const std::map<MarginId, DenseTable>& fixed);

// Same construction from the margins of `acute` itself. This is the
// orthogonal projection of `acute` onto the complement of the tables with
// all margins zero.
DenseTable BuildZAcute(const Schema& schema, const DenseTable& acute);

// Signed indicator basis of the tables over `margin` whose margins are all
// zero; there are prod(levels - 1) of them.
std::vector<DenseTable> ZeroMarginBasis(const Schema& schema, MarginId margin);

FinalEstimates DownPass(const IntermediateEstimates& intermediates,
                        const DownPassOptions& options = {});

struct SeaBlueOptions {
  CollectionOptions collection{.drop_unreachable = false,
                               .retain_accumulators = false};
  DownPassOptions down_pass;
};

// Collection step followed by the down pass.
FinalEstimates SeaBlue(const NoisyTableSet& noisy, const DesiredSet& desired,
                       const SeaBlueOptions& options = {});

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_DOWNPASS_H_
