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

// Internal helpers for walking dense tables while tracking the matching
// offset in a smaller (marginal) table.

#ifndef CONSISTENT_COUNTS_SRC_STRIDES_H_
#define CONSISTENT_COUNTS_SRC_STRIDES_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "consistent_counts/histogram.h"

namespace consistent_counts::internal {

inline std::vector<std::int64_t> RowMajorStrides(std::span<const int> dims) {
  std::vector<std::int64_t> strides(dims.size());
  std::int64_t stride = 1;
  for (std::size_t i = dims.size(); i-- > 0;) {
    strides[i] = stride;
    stride *= dims[i];
  }
  return strides;
}

// For each member of `outer`, the stride of that variable in the row-major
// layout of `inner`, or 0 when the variable is not in `inner`. Requires
// inner to be a subset of outer.
inline std::vector<std::int64_t> ProjectedStrides(MarginId outer,
                                                  std::span<const int> outer_dims,
                                                  MarginId inner) {
  const std::vector<int> outer_members = outer.members();
  std::vector<int> inner_dims;
  for (std::size_t i = 0; i < outer_members.size(); ++i) {
    if (inner.Contains(outer_members[i])) inner_dims.push_back(outer_dims[i]);
  }
  const std::vector<std::int64_t> inner_strides = RowMajorStrides(inner_dims);
  std::vector<std::int64_t> out(outer_members.size(), 0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < outer_members.size(); ++i) {
    if (inner.Contains(outer_members[i])) out[i] = inner_strides[j++];
  }
  return out;
}

// Calls fn(outer_offset, inner_offset) for every cell of the outer table in
// row-major order, where inner_offset = sum(coord[i] * inner_strides[i]).
template <typename Fn>
void ForEachCell(std::span<const int> dims,
                 std::span<const std::int64_t> inner_strides, Fn&& fn) {
  const std::size_t rank = dims.size();
  if (rank == 0) {
    fn(std::size_t{0}, std::int64_t{0});
    return;
  }
  for (int d : dims) {
    if (d <= 0) return;
  }
  std::vector<int> coord(rank, 0);
  std::int64_t inner = 0;
  std::size_t outer = 0;
  const int last_dim = dims[rank - 1];
  const std::int64_t last_stride = inner_strides[rank - 1];
  while (true) {
    std::int64_t cell = inner;
    for (int i = 0; i < last_dim; ++i) {
      fn(outer++, cell);
      cell += last_stride;
    }
    // Carry into the leading coordinates.
    std::size_t axis = rank - 1;
    while (true) {
      if (axis == 0) return;
      --axis;
      inner += inner_strides[axis];
      if (++coord[axis] < dims[axis]) break;
      inner -= inner_strides[axis] * dims[axis];
      coord[axis] = 0;
    }
  }
}

}  // namespace consistent_counts::internal

#endif  // CONSISTENT_COUNTS_SRC_STRIDES_H_
