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

#include "consistent_counts/downpass.h"

#include <utility>

#include "consistent_counts/error.h"
#include "consistent_counts/projection.h"
#include "strides.h"

namespace consistent_counts {

FinalEstimates::FinalEstimates(Schema schema, DesiredSet desired,
                               std::map<MarginId, DenseTable> tables,
                               std::map<MarginId, Provenance> provenance)
    : schema_(std::move(schema)),
      desired_(std::move(desired)),
      tables_(std::move(tables)),
      provenance_(std::move(provenance)) {}

const DenseTable& FinalEstimates::at(MarginId margin) const {
  auto it = tables_.find(margin);
  if (it == tables_.end()) {
    throw Error(ErrorCode::kMarginMismatch,
                "no final estimate for margin '" + schema_.MarginName(margin) +
                    "'");
  }
  return it->second;
}

Provenance FinalEstimates::provenance(MarginId margin) const {
  auto it = provenance_.find(margin);
  return it == provenance_.end() ? Provenance::kEfficient : it->second;
}

std::int64_t FinalEstimates::CellCount() const {
  std::int64_t n = 0;
  for (const auto& [m, t] : tables_) n += static_cast<std::int64_t>(t.size());
  return n;
}

namespace {

// Signed weight of the subset `r` of `s`: (-1)^(k+1) / prod of the removed
// level counts, k = |s \ r|.
double SpreadCoefficient(const Schema& schema, MarginId s, MarginId r) {
  const MarginId removed = s.Minus(r);
  double denom = 1;
  for (int v : removed.members()) denom *= schema.variable(v).levels;
  return (removed.size() % 2 == 1 ? 1.0 : -1.0) / denom;
}

// out[v] += coef * table[v[R]] for every cell v of `s`.
void AddSpread(MarginId s, const std::vector<int>& dims, const DenseTable& r,
               double coef, std::vector<double>& out) {
  const auto strides = internal::ProjectedStrides(s, dims, r.margin());
  const double* in = r.values().data();
  internal::ForEachCell(dims, strides, [&](std::size_t o, std::int64_t i) {
    out[o] += coef * in[i];
  });
}

// Every proper margin of `table`, each summed from its cheapest already
// computed parent.
std::map<MarginId, DenseTable> ProperMargins(const Schema& schema,
                                             const DenseTable& table) {
  const MarginId s = table.margin();
  const std::vector<int> order = ChainOrder(schema);
  std::vector<MarginId> subsets = s.Subsets();
  std::map<MarginId, DenseTable> out;
  for (auto it = subsets.rbegin(); it != subsets.rend(); ++it) {
    const MarginId r = *it;
    if (r == s) continue;
    MarginId parent = s;
    for (int v : order) {
      if (s.Contains(v) && !r.Contains(v)) {
        parent = r.With(v);
        break;
      }
    }
    out.emplace(r, Marginalize(parent == s ? table : out.at(parent), r));
  }
  return out;
}

}  // namespace

DenseTable BuildZHat(const Schema& schema, MarginId margin,
                     const std::map<MarginId, DenseTable>& fixed) {
  schema.Validate(margin);
  const std::vector<int> dims = schema.Dims(margin);
  std::vector<double> out(schema.CellCount(margin), 0.0);
  for (MarginId r : margin.Subsets()) {
    if (r == margin) continue;
    auto it = fixed.find(r);
    if (it == fixed.end()) {
      throw Error(ErrorCode::kIncompleteMargins,
                  "margin '" + schema.MarginName(r) + "' needed for '" +
                      schema.MarginName(margin) + "' is missing");
    }
    if (it->second.dims() != schema.Dims(r)) {
      throw Error(ErrorCode::kMarginMismatch,
                  "margin '" + schema.MarginName(r) + "' has wrong shape");
    }
    AddSpread(margin, dims, it->second, SpreadCoefficient(schema, margin, r),
              out);
  }
  return DenseTable(margin, dims, std::move(out));
}

DenseTable BuildZAcute(const Schema& schema, const DenseTable& acute) {
  return BuildZHat(schema, acute.margin(), ProperMargins(schema, acute));
}

std::vector<DenseTable> ZeroMarginBasis(const Schema& schema,
                                        MarginId margin) {
  schema.Validate(margin);
  if (margin.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "zero-margin basis needs at least one variable");
  }
  const std::vector<int> dims = schema.Dims(margin);
  const std::size_t k = dims.size();
  std::vector<int> reduced(dims);
  for (int& d : reduced) --d;
  const auto strides = internal::RowMajorStrides(dims);
  const std::int64_t cells = schema.CellCount(margin);

  std::vector<DenseTable> basis;
  const std::vector<std::int64_t> none(k, 0);
  // Basis elements are indexed by i in prod {0..n_j-2}; each is nonzero
  // only on the 2^k cells with v_j in {i_j, i_j + 1}.
  internal::ForEachCell(reduced, none, [&](std::size_t index, std::int64_t) {
    const std::vector<int> base = [&] {
      std::vector<int> c(k);
      std::size_t rest = index;
      for (std::size_t j = k; j-- > 0;) {
        c[j] = static_cast<int>(rest % reduced[j]);
        rest /= reduced[j];
      }
      return c;
    }();
    std::vector<double> values(cells, 0.0);
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << k); ++bits) {
      std::int64_t offset = 0;
      double sign = 1;
      for (std::size_t j = 0; j < k; ++j) {
        const bool up = (bits >> j) & 1;
        offset += (base[j] + (up ? 1 : 0)) * strides[j];
        if (up) sign = -sign;
      }
      values[offset] = sign;
    }
    basis.emplace_back(margin, dims, std::move(values));
  });
  return basis;
}

FinalEstimates DownPass(const IntermediateEstimates& intermediates,
                        const DownPassOptions& options) {
  const Schema& schema = intermediates.schema();
  const DesiredSet& desired = intermediates.desired();
  std::map<MarginId, DenseTable> final_tables;
  std::map<MarginId, Provenance> provenance;

  // DesiredSet iterates by increasing cardinality.
  for (MarginId s : desired.margins()) {
    const Table& acute = intermediates.at(s).estimate;
    if (s.empty()) {
      final_tables.emplace(s, acute.counts());
      provenance.emplace(s, Provenance::kEfficient);
      continue;
    }
    const std::vector<int> dims = schema.Dims(s);
    const bool equal =
        options.force_efficient ||
        acute.variance().IsUniform(options.equal_variance_tolerance);
    if (equal) {
      // Y^ = Y' - Z' + Z^, assembled as Y' plus the spread of the
      // difference between fixed and current margins.
      std::vector<double> out = acute.values();
      const auto current = ProperMargins(schema, acute.counts());
      for (const auto& [r, cur] : current) {
        const DenseTable& fixed = final_tables.at(r);
        std::vector<double> diff(cur.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = fixed[i] - cur[i];
        AddSpread(s, dims, DenseTable(r, cur.dims(), std::move(diff)),
                  SpreadCoefficient(schema, s, r), out);
      }
      final_tables.emplace(s, DenseTable(s, dims, std::move(out)));
      provenance.emplace(s, Provenance::kEfficient);
      continue;
    }

    if (static_cast<std::int64_t>(acute.size()) > options.weighted_cell_cap) {
      throw Error(ErrorCode::kSizeGuard,
                  "table '" + schema.MarginName(s) + "' has " +
                      std::to_string(acute.size()) +
                      " cells with unequal variances, above the weighted "
                      "projection cap of " +
                      std::to_string(options.weighted_cell_cap));
    }
    const DenseTable zhat = BuildZHat(schema, s, final_tables);
    std::vector<double> resid(acute.size());
    std::vector<double> var(acute.size());
    for (std::size_t i = 0; i < resid.size(); ++i) {
      resid[i] = acute.values()[i] - zhat[i];
      var[i] = acute.variance().at(i);
    }
    std::vector<double> out =
        ProjectOntoZeroMarginSubspace(schema, s, resid, var, options.limits);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += zhat[i];
    final_tables.emplace(s, DenseTable(s, dims, std::move(out)));
    provenance.emplace(s, Provenance::kWeighted);
  }
  return FinalEstimates(schema, desired, std::move(final_tables),
                        std::move(provenance));
}

FinalEstimates SeaBlue(const NoisyTableSet& noisy, const DesiredSet& desired,
                       const SeaBlueOptions& options) {
  return DownPass(CollectionStep(noisy, desired, options.collection),
                  options.down_pass);
}

}  // namespace consistent_counts
