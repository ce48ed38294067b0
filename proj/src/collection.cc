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

#include "consistent_counts/collection.h"

#include <algorithm>
#include <numeric>
#include <utility>

#include "consistent_counts/error.h"

namespace consistent_counts {

const IntermediateTable& IntermediateEstimates::at(MarginId margin) const {
  auto it = tables_.find(margin);
  if (it == tables_.end()) {
    throw Error(ErrorCode::kMarginMismatch,
                "no intermediate estimate for margin " +
                    schema_.MarginName(margin));
  }
  return it->second;
}

std::vector<int> ChainOrder(const Schema& schema) {
  std::vector<int> order(schema.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return schema.variable(a).levels < schema.variable(b).levels;
  });
  return order;
}

namespace {

// Lowest-ranked variable of `candidates` under ChainOrder.
int LowestRanked(const std::vector<int>& order, MarginId candidates) {
  for (int v : order) {
    if (candidates.Contains(v)) return v;
  }
  throw Error(ErrorCode::kStructure, "no variable left to add to chain");
}

}  // namespace

MarginId ChainParent(const Schema& schema, MarginId margin, MarginId observed) {
  if (!margin.IsProperSubsetOf(observed)) {
    throw Error(ErrorCode::kMarginMismatch,
                "chain parent requested for a margin not strictly inside the "
                "observed table");
  }
  return margin.With(LowestRanked(ChainOrder(schema), observed.Minus(margin)));
}

std::set<MarginId> SpanningMargins(const Schema& schema, MarginId observed,
                                   const DesiredSet& desired) {
  const std::vector<int> order = ChainOrder(schema);
  std::set<MarginId> out;
  auto add_chain = [&](MarginId start) {
    MarginId cur = start;
    while (out.insert(cur).second && cur != observed) {
      cur = cur.With(LowestRanked(order, observed.Minus(cur)));
    }
  };
  add_chain(MarginId());
  for (MarginId d : desired.margins()) {
    if (d.IsSubsetOf(observed)) add_chain(d);
  }
  return out;
}

IntermediateEstimates CollectionStep(const NoisyTableSet& noisy,
                                     const DesiredSet& desired,
                                     const CollectionOptions& options) {
  const Schema& schema = noisy.schema();
  std::set<MarginId> reachable;
  for (MarginId s : desired.margins()) {
    schema.Validate(s);
    bool found = false;
    for (const auto& [r, table] : noisy.tables()) {
      if (s.IsSubsetOf(r)) {
        found = true;
        break;
      }
    }
    if (found) {
      reachable.insert(s);
    } else if (!options.drop_unreachable) {
      throw Error(ErrorCode::kUnreachableMargin,
                  "desired margin '" + schema.MarginName(s) +
                      "' is not contained in any observed table");
    }
  }
  DesiredSet effective(std::move(reachable));

  struct Accumulator {
    std::vector<double> weighted_sum;
    std::vector<double> weight_total;
    bool all_scalar = true;
  };
  std::map<MarginId, Accumulator> acc;
  for (MarginId s : effective.margins()) {
    const auto cells = static_cast<std::size_t>(schema.CellCount(s));
    acc[s] = Accumulator{std::vector<double>(cells, 0.0),
                         std::vector<double>(cells, 0.0), true};
  }

  for (const auto& [observed, table] : noisy.tables()) {
    const std::set<MarginId> span = SpanningMargins(schema, observed, effective);
    // Widest margins first so every parent exists before its children.
    std::vector<MarginId> ordered(span.rbegin(), span.rend());
    std::map<MarginId, Table> margins;
    auto lookup = [&](MarginId m) -> const Table& {
      return m == observed ? table : margins.at(m);
    };
    for (MarginId s : ordered) {
      if (s != observed) {
        margins.emplace(s, Marginalize(lookup(ChainParent(schema, s, observed)),
                                       s));
      }
      auto it = acc.find(s);
      if (it == acc.end()) continue;
      const Table& t = lookup(s);
      Accumulator& a = it->second;
      const std::vector<double>& y = t.values();
      if (t.variance().is_scalar()) {
        const double w = 1.0 / t.variance().scalar();
        for (std::size_t v = 0; v < y.size(); ++v) {
          a.weighted_sum[v] += y[v] * w;
          a.weight_total[v] += w;
        }
      } else {
        a.all_scalar = false;
        const std::vector<double>& var = t.variance().per_cell();
        for (std::size_t v = 0; v < y.size(); ++v) {
          a.weighted_sum[v] += y[v] / var[v];
          a.weight_total[v] += 1.0 / var[v];
        }
      }
    }
  }

  std::map<MarginId, IntermediateTable> out;
  for (auto& [s, a] : acc) {
    std::vector<double> estimate(a.weighted_sum.size());
    for (std::size_t v = 0; v < estimate.size(); ++v) {
      estimate[v] = a.weighted_sum[v] / a.weight_total[v];
    }
    const bool uniform =
        a.all_scalar ||
        std::all_of(a.weight_total.begin(), a.weight_total.end(),
                    [&](double d) { return d == a.weight_total.front(); });
    Variance variance;
    if (uniform) {
      variance = Variance::Scalar(1.0 / a.weight_total.front());
    } else {
      std::vector<double> per_cell(a.weight_total.size());
      for (std::size_t v = 0; v < per_cell.size(); ++v) {
        per_cell[v] = 1.0 / a.weight_total[v];
      }
      variance = Variance::PerCell(std::move(per_cell));
    }
    IntermediateTable it{
        Table(DenseTable(s, schema.Dims(s), std::move(estimate)),
              std::move(variance)),
        {},
        {}};
    if (options.retain_accumulators) {
      it.weighted_sum = std::move(a.weighted_sum);
      it.weight_total = std::move(a.weight_total);
    }
    out.emplace(s, std::move(it));
  }
  return IntermediateEstimates(schema, std::move(effective), std::move(out));
}

PointEstimate CollectionSingle(const NoisyTableSet& noisy, MarginId target,
                               std::span<const int> cell) {
  const Schema& schema = noisy.schema();
  schema.Validate(target);
  const std::vector<int> target_members = target.members();
  if (cell.size() != target_members.size()) {
    throw Error(ErrorCode::kIndex, "cell index has wrong length");
  }
  double weighted_sum = 0;
  double weight_total = 0;
  bool found = false;
  for (const auto& [r, table] : noisy.tables()) {
    if (!target.IsSubsetOf(r)) continue;
    found = true;
    const std::vector<int> members = r.members();
    CellIndex index(members.size(), kSum);
    std::size_t j = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (target.Contains(members[i])) index[i] = cell[j++];
    }
    const double value = CellLookup(table.counts(), index);
    double variance;
    if (table.variance().is_scalar()) {
      double collapsed = 1;
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (index[i] == kSum) collapsed *= table.dims()[i];
      }
      variance = table.variance().scalar() * collapsed;
    } else {
      variance = CellLookup(
          DenseTable(r, table.dims(), table.variance().per_cell()), index);
    }
    weighted_sum += value / variance;
    weight_total += 1.0 / variance;
  }
  if (!found) {
    throw Error(ErrorCode::kUnreachableMargin,
                "margin '" + schema.MarginName(target) +
                    "' is not contained in any observed table");
  }
  return {weighted_sum / weight_total, 1.0 / weight_total};
}

}  // namespace consistent_counts
