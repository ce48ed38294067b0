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

// Collection step: every desired count is estimated by inverse-variance
// weighting all estimates of it obtainable by summing a single observed
// table that contains it. Margins of each observed table are produced from
// previously computed margins of the same table, so no table is ever
// re-summed from scratch for each desired margin.

#ifndef CONSISTENT_COUNTS_COLLECTION_H_
#define CONSISTENT_COUNTS_COLLECTION_H_

#include <map>
#include <set>
#include <span>
#include <vector>

#include "consistent_counts/histogram.h"

namespace consistent_counts {

struct IntermediateTable {
  // Weighted mean of the available estimates; its variance is 1 / weight
  // total, stored as a scalar when identical across cells.
  Table estimate;
  // Accumulators: sum of value / variance and sum of 1 / variance.
  std::vector<double> weighted_sum;
  std::vector<double> weight_total;
};

class IntermediateEstimates {
 public:
  IntermediateEstimates(Schema schema, DesiredSet desired,
                        std::map<MarginId, IntermediateTable> tables)
      : schema_(std::move(schema)),
        desired_(std::move(desired)),
        tables_(std::move(tables)) {}

  const Schema& schema() const { return schema_; }
  const DesiredSet& desired() const { return desired_; }
  const std::map<MarginId, IntermediateTable>& tables() const {
    return tables_;
  }
  const IntermediateTable& at(MarginId margin) const;

 private:
  Schema schema_;
  DesiredSet desired_;
  std::map<MarginId, IntermediateTable> tables_;
};

struct CollectionOptions {
  // Silently drop desired margins no observed table contains, instead of
  // failing. Supersets of an unreachable margin are unreachable too, so
  // the remaining set stays downward closed.
  bool drop_unreachable = false;
  // Keep the weighted_sum / weight_total arrays in the output.
  bool retain_accumulators = true;
};

// Order in which chains add variables: fewest levels first, ties broken by
// schema position. Collapsing therefore removes the widest variables first.
std::vector<int> ChainOrder(const Schema& schema);

// Margins of `observed` to materialize so that every desired margin inside
// it is reached through a chain growing one variable at a time up to
// `observed`. Always contains the empty margin and `observed` itself.
std::set<MarginId> SpanningMargins(const Schema& schema, MarginId observed,
                                   const DesiredSet& desired);

// The margin one variable larger from which `margin` is summed inside
// `observed`.
MarginId ChainParent(const Schema& schema, MarginId margin, MarginId observed);

IntermediateEstimates CollectionStep(const NoisyTableSet& noisy,
                                     const DesiredSet& desired,
                                     const CollectionOptions& options = {});

struct PointEstimate {
  double estimate = 0;
  double variance = 0;
};

// Collection estimate of a single cell, evaluated directly from its
// defining weighted mean.
PointEstimate CollectionSingle(const NoisyTableSet& noisy, MarginId target,
                               std::span<const int> cell);

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_COLLECTION_H_
