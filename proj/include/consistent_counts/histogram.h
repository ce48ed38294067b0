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

// Data model for categorical histograms observed at several levels of
// marginalization: variables, margins (subsets of variables), dense tables
// and the marginalization algebra everything else is built on.
//
// Tables are dense and laid out lexicographically over the margin's
// variables in schema order, last variable fastest. Cell coordinates are
// 0-based in this API; files use 1-based coordinates.

#ifndef CONSISTENT_COUNTS_HISTOGRAM_H_
#define CONSISTENT_COUNTS_HISTOGRAM_H_

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace consistent_counts {

inline constexpr int kMaxVariables = 64;

// Coordinate marker meaning "summed over this variable".
inline constexpr int kSum = -1;

// One coordinate per margin member, each a 0-based level or kSum.
using CellIndex = std::vector<int>;

// A subset of schema variables, identified by their schema positions.
// The empty margin denotes the grand total.
class MarginId {
 public:
  constexpr MarginId() = default;

  static MarginId FromMask(std::uint64_t mask) { return MarginId(mask); }
  static MarginId Of(std::initializer_list<int> variables);
  static MarginId Of(std::span<const int> variables);

  std::uint64_t mask() const { return mask_; }
  int size() const;
  bool empty() const { return mask_ == 0; }
  bool Contains(int variable) const {
    return (mask_ >> variable) & std::uint64_t{1};
  }
  bool IsSubsetOf(MarginId other) const {
    return (mask_ & ~other.mask_) == 0;
  }
  bool IsProperSubsetOf(MarginId other) const {
    return IsSubsetOf(other) && mask_ != other.mask_;
  }
  MarginId With(int variable) const {
    return MarginId(mask_ | (std::uint64_t{1} << variable));
  }
  MarginId Without(int variable) const {
    return MarginId(mask_ & ~(std::uint64_t{1} << variable));
  }
  MarginId Union(MarginId other) const {
    return MarginId(mask_ | other.mask_);
  }
  MarginId Minus(MarginId other) const {
    return MarginId(mask_ & ~other.mask_);
  }

  // Members in ascending schema order.
  std::vector<int> members() const;

  // Every subset of this margin, including the empty set and itself.
  std::vector<MarginId> Subsets() const;

  friend bool operator==(MarginId a, MarginId b) = default;
  // Orders by cardinality, then lexicographically by members.
  friend std::strong_ordering operator<=>(MarginId a, MarginId b);

 private:
  explicit constexpr MarginId(std::uint64_t mask) : mask_(mask) {}
  std::uint64_t mask_ = 0;
};

struct Variable {
  std::string name;
  int levels = 0;

  friend bool operator==(const Variable&, const Variable&) = default;
};

// Ordered list of categorical variables. Names are unique and each
// variable has at least two levels.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<Variable> variables);

  int size() const { return static_cast<int>(variables_.size()); }
  const Variable& variable(int index) const;
  const std::vector<Variable>& variables() const { return variables_; }

  // Throws kInvalidArgument for unknown names.
  int IndexOf(std::string_view name) const;

  MarginId Full() const;
  std::vector<int> Dims(MarginId margin) const;
  std::int64_t CellCount(MarginId margin) const;

  // "A+B" <-> MarginId; the empty string is the total.
  MarginId ParseMargin(std::string_view joined) const;
  std::string MarginName(MarginId margin) const;

  // Throws kMarginMismatch when the margin names variables outside the
  // schema.
  void Validate(MarginId margin) const;

  friend bool operator==(const Schema&, const Schema&) = default;

 private:
  std::vector<Variable> variables_;
};

// Dense table of real values over one margin.
class DenseTable {
 public:
  DenseTable() = default;
  DenseTable(MarginId margin, std::vector<int> dims,
             std::vector<double> values);

  static DenseTable Zeros(MarginId margin, std::vector<int> dims);
  static DenseTable Zeros(const Schema& schema, MarginId margin) {
    return Zeros(margin, schema.Dims(margin));
  }

  MarginId margin() const { return margin_; }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t offset) const { return values_[offset]; }

  // Flat offset of a fully specified cell (no kSum entries).
  std::size_t Offset(std::span<const int> coords) const;
  CellIndex Coords(std::size_t offset) const;

  // Releases the storage to the caller.
  std::vector<double> TakeValues() && { return std::move(values_); }

 private:
  MarginId margin_;
  std::vector<int> dims_;
  std::vector<double> values_;
};

// Noise variance of a table: one value shared by every cell, or one value
// per cell. Per-cell storage is only used when variances differ.
class Variance {
 public:
  Variance() = default;
  static Variance Scalar(double value);
  static Variance PerCell(std::vector<double> values);

  bool is_scalar() const { return std::holds_alternative<double>(rep_); }
  double scalar() const { return std::get<double>(rep_); }
  const std::vector<double>& per_cell() const {
    return std::get<std::vector<double>>(rep_);
  }
  double at(std::size_t offset) const {
    return is_scalar() ? scalar() : per_cell()[offset];
  }
  double Min() const;
  double Max() const;
  // True when max/min - 1 <= relative_tolerance.
  bool IsUniform(double relative_tolerance) const;

  friend bool operator==(const Variance&, const Variance&) = default;

 private:
  std::variant<double, std::vector<double>> rep_ = 1.0;
};

// A dense table together with the variances of its cells. All variances
// are strictly positive and finite.
class Table {
 public:
  Table() = default;
  Table(DenseTable counts, Variance variance);

  MarginId margin() const { return counts_.margin(); }
  const std::vector<int>& dims() const { return counts_.dims(); }
  const std::vector<double>& values() const { return counts_.values(); }
  std::size_t size() const { return counts_.size(); }
  const DenseTable& counts() const { return counts_; }
  const Variance& variance() const { return variance_; }

 private:
  DenseTable counts_;
  Variance variance_;
};

// Observed noisy tables, at most one per margin.
class NoisyTableSet {
 public:
  NoisyTableSet() = default;
  // Throws kConflict on duplicate margins and kMarginMismatch when a table
  // does not match the schema.
  NoisyTableSet(Schema schema, std::vector<Table> tables);

  const Schema& schema() const { return schema_; }
  const std::map<MarginId, Table>& tables() const { return tables_; }
  bool Contains(MarginId margin) const { return tables_.contains(margin); }
  const Table& table(MarginId margin) const;
  std::set<MarginId> margins() const;
  std::int64_t CellCount() const;

 private:
  Schema schema_;
  std::map<MarginId, Table> tables_;
};

// Set of desired margins; downward closed.
class DesiredSet {
 public:
  DesiredSet() = default;
  // Throws kStructure if the set is not downward closed.
  explicit DesiredSet(std::set<MarginId> margins);

  const std::set<MarginId>& margins() const { return margins_; }
  bool contains(MarginId margin) const { return margins_.contains(margin); }
  std::size_t size() const { return margins_.size(); }
  int MaxCardinality() const;
  std::int64_t CellCount(const Schema& schema) const;

  friend bool operator==(const DesiredSet&, const DesiredSet&) = default;

 private:
  std::set<MarginId> margins_;
};

// Sums `table` over the variables not in `target`. Throws kMarginMismatch
// unless target is a subset of the table's margin.
DenseTable Marginalize(const DenseTable& table, MarginId target);

// As above; per-cell variances are summed like the values, a scalar
// variance is multiplied by the number of collapsed cells.
Table Marginalize(const Table& table, MarginId target);

// Value of one cell; kSum coordinates are summed on the fly.
double CellLookup(const DenseTable& table, std::span<const int> index);

// The union of all subsets of the given margins.
DesiredSet CloseDownward(const std::set<MarginId>& margins);

// Replaces every table containing `variable` by its marginalization with
// the variable removed. The variable keeps its place in the schema.
NoisyTableSet PreAggregate(const NoisyTableSet& set, int variable);

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_HISTOGRAM_H_
