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

#include "consistent_counts/histogram.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "consistent_counts/error.h"
#include "strides.h"

namespace consistent_counts {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid-argument";
    case ErrorCode::kMarginMismatch:
      return "margin-mismatch";
    case ErrorCode::kIndex:
      return "index";
    case ErrorCode::kConflict:
      return "conflict";
    case ErrorCode::kUnreachableMargin:
      return "unreachable-margin";
    case ErrorCode::kIncompleteMargins:
      return "incomplete-margins";
    case ErrorCode::kStructure:
      return "structure";
    case ErrorCode::kNumeric:
      return "numeric";
    case ErrorCode::kAssumption:
      return "assumption";
    case ErrorCode::kParameter:
      return "parameter";
    case ErrorCode::kSizeGuard:
      return "size-guard";
    case ErrorCode::kParse:
      return "parse";
    case ErrorCode::kIo:
      return "io";
  }
  return "unknown";
}

// ---------------------------------------------------------------- MarginId

MarginId MarginId::Of(std::initializer_list<int> variables) {
  return Of(std::span<const int>(variables.begin(), variables.size()));
}

MarginId MarginId::Of(std::span<const int> variables) {
  std::uint64_t mask = 0;
  for (int v : variables) {
    if (v < 0 || v >= kMaxVariables) {
      throw Error(ErrorCode::kInvalidArgument,
                  "variable index out of range: " + std::to_string(v));
    }
    mask |= std::uint64_t{1} << v;
  }
  return MarginId(mask);
}

int MarginId::size() const { return std::popcount(mask_); }

std::vector<int> MarginId::members() const {
  std::vector<int> out;
  out.reserve(size());
  for (std::uint64_t m = mask_; m != 0; m &= m - 1) {
    out.push_back(std::countr_zero(m));
  }
  return out;
}

std::vector<MarginId> MarginId::Subsets() const {
  // Standard submask enumeration, collected in ascending mask order.
  std::vector<MarginId> out;
  out.reserve(std::size_t{1} << size());
  std::uint64_t sub = 0;
  while (true) {
    out.push_back(MarginId(sub));
    if (sub == mask_) break;
    sub = (sub - mask_) & mask_;
  }
  return out;
}

std::strong_ordering operator<=>(MarginId a, MarginId b) {
  if (auto c = a.size() <=> b.size(); c != 0) return c;
  if (a.mask_ == b.mask_) return std::strong_ordering::equal;
  // Same cardinality: the set holding the lowest differing variable comes
  // first.
  const std::uint64_t diff = a.mask_ ^ b.mask_;
  const int lowest = std::countr_zero(diff);
  return a.Contains(lowest) ? std::strong_ordering::less
                            : std::strong_ordering::greater;
}

// ------------------------------------------------------------------ Schema

Schema::Schema(std::vector<Variable> variables)
    : variables_(std::move(variables)) {
  if (static_cast<int>(variables_.size()) > kMaxVariables) {
    throw Error(ErrorCode::kInvalidArgument,
                "at most 64 variables are supported");
  }
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    const Variable& v = variables_[i];
    if (v.name.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "variable name is empty");
    }
    if (v.name.find_first_of("+:,\"\n\r") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  "variable name contains a reserved character: " + v.name);
    }
    if (v.levels < 2) {
      throw Error(ErrorCode::kInvalidArgument,
                  "variable " + v.name + " needs at least 2 levels");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (variables_[j].name == v.name) {
        throw Error(ErrorCode::kInvalidArgument,
                    "duplicate variable name: " + v.name);
      }
    }
  }
}

const Variable& Schema::variable(int index) const {
  if (index < 0 || index >= size()) {
    throw Error(ErrorCode::kIndex,
                "variable index out of range: " + std::to_string(index));
  }
  return variables_[index];
}

int Schema::IndexOf(std::string_view name) const {
  for (int i = 0; i < size(); ++i) {
    if (variables_[i].name == name) return i;
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unknown variable: " + std::string(name));
}

MarginId Schema::Full() const {
  const int n = size();
  return MarginId::FromMask(n == 64 ? ~std::uint64_t{0}
                                    : (std::uint64_t{1} << n) - 1);
}

void Schema::Validate(MarginId margin) const {
  if (!margin.IsSubsetOf(Full())) {
    throw Error(ErrorCode::kMarginMismatch,
                "margin references variables outside the schema");
  }
}

std::vector<int> Schema::Dims(MarginId margin) const {
  Validate(margin);
  std::vector<int> dims;
  for (int v : margin.members()) dims.push_back(variables_[v].levels);
  return dims;
}

std::int64_t Schema::CellCount(MarginId margin) const {
  std::int64_t n = 1;
  for (int d : Dims(margin)) n *= d;
  return n;
}

MarginId Schema::ParseMargin(std::string_view joined) const {
  MarginId margin;
  if (joined.empty()) return margin;
  std::size_t start = 0;
  while (true) {
    const std::size_t plus = joined.find('+', start);
    const std::string_view name = joined.substr(
        start, plus == std::string_view::npos ? joined.npos : plus - start);
    const int index = IndexOf(name);
    if (margin.Contains(index)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "variable repeated in margin: " + std::string(name));
    }
    margin = margin.With(index);
    if (plus == std::string_view::npos) break;
    start = plus + 1;
  }
  return margin;
}

std::string Schema::MarginName(MarginId margin) const {
  Validate(margin);
  std::string out;
  for (int v : margin.members()) {
    if (!out.empty()) out += '+';
    out += variables_[v].name;
  }
  return out;
}

// -------------------------------------------------------------- DenseTable

DenseTable::DenseTable(MarginId margin, std::vector<int> dims,
                       std::vector<double> values)
    : margin_(margin), dims_(std::move(dims)), values_(std::move(values)) {
  if (static_cast<int>(dims_.size()) != margin_.size()) {
    throw Error(ErrorCode::kMarginMismatch,
                "table dims do not match margin cardinality");
  }
  std::size_t cells = 1;
  for (int d : dims_) {
    if (d < 1) throw Error(ErrorCode::kMarginMismatch, "non-positive dim");
    cells *= static_cast<std::size_t>(d);
  }
  if (values_.size() != cells) {
    throw Error(ErrorCode::kMarginMismatch,
                "table has " + std::to_string(values_.size()) +
                    " values, expected " + std::to_string(cells));
  }
}

DenseTable DenseTable::Zeros(MarginId margin, std::vector<int> dims) {
  std::size_t cells = 1;
  for (int d : dims) cells *= static_cast<std::size_t>(d);
  return DenseTable(margin, std::move(dims), std::vector<double>(cells, 0.0));
}

std::size_t DenseTable::Offset(std::span<const int> coords) const {
  if (coords.size() != dims_.size()) {
    throw Error(ErrorCode::kIndex, "cell index has wrong length");
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (coords[i] < 0 || coords[i] >= dims_[i]) {
      throw Error(ErrorCode::kIndex, "cell coordinate out of range");
    }
    offset = offset * dims_[i] + coords[i];
  }
  return offset;
}

CellIndex DenseTable::Coords(std::size_t offset) const {
  CellIndex coords(dims_.size());
  for (std::size_t i = dims_.size(); i-- > 0;) {
    coords[i] = static_cast<int>(offset % dims_[i]);
    offset /= dims_[i];
  }
  return coords;
}

// ---------------------------------------------------------------- Variance

Variance Variance::Scalar(double value) {
  Variance v;
  v.rep_ = value;
  return v;
}

Variance Variance::PerCell(std::vector<double> values) {
  Variance v;
  v.rep_ = std::move(values);
  return v;
}

double Variance::Min() const {
  if (is_scalar()) return scalar();
  const auto& v = per_cell();
  return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end());
}

double Variance::Max() const {
  if (is_scalar()) return scalar();
  const auto& v = per_cell();
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

bool Variance::IsUniform(double relative_tolerance) const {
  if (is_scalar()) return true;
  const double lo = Min();
  return lo > 0 && Max() / lo - 1.0 <= relative_tolerance;
}

// ------------------------------------------------------------------- Table

Table::Table(DenseTable counts, Variance variance)
    : counts_(std::move(counts)), variance_(std::move(variance)) {
  auto check = [](double v) {
    if (!(v > 0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kNumeric,
                  "variances must be positive and finite");
    }
  };
  if (variance_.is_scalar()) {
    check(variance_.scalar());
  } else {
    if (variance_.per_cell().size() != counts_.size()) {
      throw Error(ErrorCode::kMarginMismatch,
                  "variance array does not match table size");
    }
    for (double v : variance_.per_cell()) check(v);
  }
}

// ----------------------------------------------------------- NoisyTableSet

NoisyTableSet::NoisyTableSet(Schema schema, std::vector<Table> tables)
    : schema_(std::move(schema)) {
  for (Table& t : tables) {
    schema_.Validate(t.margin());
    if (t.dims() != schema_.Dims(t.margin())) {
      throw Error(ErrorCode::kMarginMismatch,
                  "table " + schema_.MarginName(t.margin()) +
                      " does not match schema levels");
    }
    const MarginId margin = t.margin();
    if (!tables_.emplace(margin, std::move(t)).second) {
      throw Error(ErrorCode::kConflict, "duplicate observed table: " +
                                            schema_.MarginName(margin));
    }
  }
}

const Table& NoisyTableSet::table(MarginId margin) const {
  auto it = tables_.find(margin);
  if (it == tables_.end()) {
    throw Error(ErrorCode::kMarginMismatch, "no observed table for margin " +
                                                schema_.MarginName(margin));
  }
  return it->second;
}

std::set<MarginId> NoisyTableSet::margins() const {
  std::set<MarginId> out;
  for (const auto& [m, t] : tables_) out.insert(m);
  return out;
}

std::int64_t NoisyTableSet::CellCount() const {
  std::int64_t n = 0;
  for (const auto& [m, t] : tables_) n += static_cast<std::int64_t>(t.size());
  return n;
}

// -------------------------------------------------------------- DesiredSet

DesiredSet::DesiredSet(std::set<MarginId> margins)
    : margins_(std::move(margins)) {
  for (MarginId m : margins_) {
    for (int v : m.members()) {
      if (!margins_.contains(m.Without(v))) {
        throw Error(ErrorCode::kStructure,
                    "desired set is not downward closed");
      }
    }
  }
}

int DesiredSet::MaxCardinality() const {
  int best = 0;
  for (MarginId m : margins_) best = std::max(best, m.size());
  return best;
}

std::int64_t DesiredSet::CellCount(const Schema& schema) const {
  std::int64_t n = 0;
  for (MarginId m : margins_) n += schema.CellCount(m);
  return n;
}

// -------------------------------------------------------------- Operations

DenseTable Marginalize(const DenseTable& table, MarginId target) {
  if (!target.IsSubsetOf(table.margin())) {
    throw Error(ErrorCode::kMarginMismatch,
                "marginalization target is not a subset of the table margin");
  }
  if (target == table.margin()) return table;
  const std::vector<std::int64_t> strides =
      internal::ProjectedStrides(table.margin(), table.dims(), target);
  const std::vector<int> members = table.margin().members();
  std::vector<int> out_dims;
  std::size_t cells = 1;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (target.Contains(members[i])) {
      out_dims.push_back(table.dims()[i]);
      cells *= static_cast<std::size_t>(table.dims()[i]);
    }
  }
  std::vector<double> acc(cells, 0.0);
  const std::span<const double> in = table.values();
  internal::ForEachCell(table.dims(), strides,
                        [&](std::size_t i, std::int64_t o) { acc[o] += in[i]; });
  return DenseTable(target, std::move(out_dims), std::move(acc));
}

Table Marginalize(const Table& table, MarginId target) {
  DenseTable counts = Marginalize(table.counts(), target);
  if (table.variance().is_scalar()) {
    const double collapsed = static_cast<double>(table.size()) /
                             static_cast<double>(counts.size());
    return Table(std::move(counts),
                 Variance::Scalar(table.variance().scalar() * collapsed));
  }
  DenseTable variances = Marginalize(
      DenseTable(table.margin(), table.dims(), table.variance().per_cell()),
      target);
  return Table(std::move(counts),
               Variance::PerCell(std::move(variances).TakeValues()));
}

double CellLookup(const DenseTable& table, std::span<const int> index) {
  if (index.size() != table.dims().size()) {
    throw Error(ErrorCode::kIndex, "cell index has wrong length");
  }
  const std::vector<int> members = table.margin().members();
  MarginId kept;
  std::vector<int> fixed;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] == kSum) continue;
    if (index[i] < 0 || index[i] >= table.dims()[i]) {
      throw Error(ErrorCode::kIndex, "cell coordinate out of range");
    }
    kept = kept.With(members[i]);
    fixed.push_back(index[i]);
  }
  if (kept == table.margin()) return table[table.Offset(index)];
  const DenseTable reduced = Marginalize(table, kept);
  return reduced[reduced.Offset(fixed)];
}

DesiredSet CloseDownward(const std::set<MarginId>& margins) {
  std::set<MarginId> closed;
  for (MarginId m : margins) {
    for (MarginId sub : m.Subsets()) closed.insert(sub);
  }
  return DesiredSet(std::move(closed));
}

NoisyTableSet PreAggregate(const NoisyTableSet& set, int variable) {
  const Schema& schema = set.schema();
  schema.variable(variable);
  std::vector<Table> tables;
  std::map<MarginId, std::vector<MarginId>> sources;
  bool found = false;
  for (const auto& [margin, table] : set.tables()) {
    if (margin.Contains(variable)) {
      found = true;
      const MarginId reduced = margin.Without(variable);
      sources[reduced].push_back(margin);
      tables.push_back(Marginalize(table, reduced));
    } else {
      sources[margin].push_back(margin);
      tables.push_back(table);
    }
  }
  if (!found) {
    throw Error(ErrorCode::kInvalidArgument,
                "variable " + schema.variable(variable).name +
                    " does not appear in any observed table");
  }
  for (const auto& [reduced, from] : sources) {
    if (from.size() > 1) {
      std::ostringstream msg;
      msg << "pre-aggregation collides on margin '"
          << schema.MarginName(reduced) << "' from tables:";
      for (MarginId m : from) msg << " '" << schema.MarginName(m) << "'";
      throw Error(ErrorCode::kConflict, msg.str());
    }
  }
  return NoisyTableSet(schema, std::move(tables));
}

}  // namespace consistent_counts
