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

#ifndef CONSISTENT_COUNTS_PROJECTION_LIMITS_H_
#define CONSISTENT_COUNTS_PROJECTION_LIMITS_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace consistent_counts {

inline constexpr char kMemCapEnv[] = "CONSISTENT_COUNTS_MEM_CAP";

// Allocation guard for the dense projection.
struct ProjectionLimits {
  static constexpr std::int64_t kDefaultMaxBytes = std::int64_t{2} << 30;

  std::int64_t max_bytes = kDefaultMaxBytes;

  // Default cap, overridden by CONSISTENT_COUNTS_MEM_CAP when set.
  static ProjectionLimits FromEnvironment();

  // Throws a size-guard error when `estimated_bytes` exceeds the cap.
  void Check(std::int64_t estimated_bytes, std::string_view what) const;
};

// Parses "1073741824", "512M", "2GiB" and similar. Binary units.
std::optional<std::int64_t> ParseByteSize(std::string_view text);

std::string FormatBytes(std::int64_t bytes);

}  // namespace consistent_counts

#endif  // CONSISTENT_COUNTS_PROJECTION_LIMITS_H_
