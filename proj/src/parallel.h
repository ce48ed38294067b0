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

// Minimal fork-join loop over independent indices.

#ifndef CONSISTENT_COUNTS_SRC_PARALLEL_H_
#define CONSISTENT_COUNTS_SRC_PARALLEL_H_

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace consistent_counts::internal {

// Calls fn(i) for i in [0, n). Worker w takes i = w, w + jobs, ...; the
// first exception (by worker) is rethrown after all workers finish.
template <typename Fn>
void ParallelFor(int n, int jobs, Fn&& fn) {
  if (n <= 0) return;
  jobs = std::clamp(jobs, 1, n);
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace consistent_counts::internal

#endif  // CONSISTENT_COUNTS_SRC_PARALLEL_H_
