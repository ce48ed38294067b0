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

#include "consistent_counts/bench.h"

#include <malloc.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "consistent_counts/downpass.h"
#include "consistent_counts/error.h"
#include "consistent_counts/io.h"
#include "consistent_counts/projection.h"
#include "consistent_counts/simharness.h"

namespace consistent_counts {

namespace {

std::int64_t StatusField(const char* key) {
  std::ifstream in("/proc/self/status");
  std::string line;
  const std::size_t n = std::strlen(key);
  while (std::getline(in, line)) {
    if (line.compare(0, n, key) == 0) {
      std::istringstream fields(line.substr(n));
      std::int64_t kib = 0;
      fields >> kib;
      return kib * 1024;
    }
  }
  return 0;
}

struct Measurement {
  bool ok = false;
  double wall_seconds = 0;
  std::int64_t peak_bytes = 0;
  std::string error;
};

Measurement RunMeasured(const BenchCase& c, const std::string& method,
                        const BenchOptions& options, const DesiredSet& desired) {
  Measurement m;
  try {
    ScenarioConfig config;
    config.seed = options.seed;
    const Instance inst = GenerateInstance(config, c.schema, c.observed, 0);
    malloc_trim(0);
    ResetPeakRss();
    const std::int64_t base = CurrentRssBytes();
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < options.repeats; ++r) {
      if (method == "seablue") {
        const FinalEstimates out = SeaBlue(inst.noisy, desired);
        if (out.CellCount() != desired.CellCount(c.schema)) {
          throw Error(ErrorCode::kNumeric, "unexpected output size");
        }
      } else {
        const ProjectionOutput out =
            ProjectionEstimate(inst.noisy, desired, false, options.limits);
        if (out.estimates.CellCount() != desired.CellCount(c.schema)) {
          throw Error(ErrorCode::kNumeric, "unexpected output size");
        }
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    m.wall_seconds =
        std::chrono::duration<double>(t1 - t0).count() / options.repeats;
    m.peak_bytes = std::max<std::int64_t>(0, PeakRssBytes() - base);
    m.ok = true;
  } catch (const std::exception& e) {
    m.error = e.what();
  }
  return m;
}

Measurement RunIsolated(const BenchCase& c, const std::string& method,
                        const BenchOptions& options, const DesiredSet& desired) {
  int fds[2];
  if (pipe(fds) != 0) return RunMeasured(c, method, options, desired);
  std::fflush(nullptr);
  const pid_t pid = fork();
  if (pid < 0) {
    close(fds[0]);
    close(fds[1]);
    return RunMeasured(c, method, options, desired);
  }
  if (pid == 0) {
    close(fds[0]);
    const Measurement m = RunMeasured(c, method, options, desired);
    std::ostringstream out;
    out.precision(17);
    out << (m.ok ? 1 : 0) << ' ' << m.wall_seconds << ' ' << m.peak_bytes << ' '
        << m.error;
    const std::string s = out.str();
    std::size_t done = 0;
    while (done < s.size()) {
      const ssize_t w = write(fds[1], s.data() + done, s.size() - done);
      if (w <= 0) break;
      done += static_cast<std::size_t>(w);
    }
    close(fds[1]);
    _exit(0);
  }
  close(fds[1]);
  std::string text;
  char buf[4096];
  ssize_t r;
  while ((r = read(fds[0], buf, sizeof(buf))) > 0) text.append(buf, r);
  close(fds[0]);
  int status = 0;
  waitpid(pid, &status, 0);

  Measurement m;
  if (WIFSIGNALED(status)) {
    m.error = "measurement process killed by signal " +
              std::to_string(WTERMSIG(status));
    return m;
  }
  std::istringstream in(text);
  int ok = 0;
  in >> ok >> m.wall_seconds >> m.peak_bytes;
  std::getline(in, m.error);
  if (!m.error.empty() && m.error.front() == ' ') m.error.erase(0, 1);
  m.ok = ok == 1;
  if (!m.ok && m.error.empty()) m.error = "measurement process failed";
  return m;
}

}  // namespace

std::int64_t CurrentRssBytes() { return StatusField("VmRSS:"); }
std::int64_t PeakRssBytes() { return StatusField("VmHWM:"); }

bool ResetPeakRss() {
  std::ofstream out("/proc/self/clear_refs");
  if (!out) return false;
  out << "5";
  out.flush();
  return static_cast<bool>(out);
}

BenchCase KByKCase(int k) {
  BenchCase c;
  c.label = std::to_string(k) + "x" + std::to_string(k);
  std::vector<Variable> vars;
  for (int i = 0; i < k; ++i) vars.push_back({"V" + std::to_string(i + 1), k});
  c.schema = Schema(std::move(vars));
  for (MarginId m : c.schema.Full().Subsets()) c.observed.insert(m);
  return c;
}

BenchCase Pl94Case() {
  return BenchCase{"pl94", Pl94Schema(), Pl94Observed()};
}

BenchPoint MeasurePoint(const BenchCase& c, const std::string& method,
                        const BenchOptions& options) {
  if (method != "seablue" && method != "projection") {
    throw Error(ErrorCode::kParameter, "unknown bench method '" + method + "'");
  }
  if (options.repeats < 1) {
    throw Error(ErrorCode::kParameter, "repeats must be >= 1");
  }
  BenchPoint p;
  p.label = c.label;
  p.method = method;
  const DesiredSet desired = CloseDownward(c.observed);
  p.counts = desired.CellCount(c.schema);
  for (MarginId m : c.observed) p.input_cells += c.schema.CellCount(m);
  p.input_bytes = p.input_cells * static_cast<std::int64_t>(sizeof(double));

  if (method == "projection") {
    try {
      options.limits.Check(ProjectionBytes(c.schema, desired, false),
                           "projection");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSizeGuard) throw;
      p.skip_reason = e.what();
      return p;
    }
  }
  const Measurement m = options.isolate
                            ? RunIsolated(c, method, options, desired)
                            : RunMeasured(c, method, options, desired);
  p.ran = m.ok;
  p.skip_reason = m.error;
  if (m.ok) {
    p.repeats = options.repeats;
    p.wall_seconds = m.wall_seconds;
    p.peak_bytes = m.peak_bytes;
  }
  return p;
}

std::vector<BenchPoint> RunBench(const BenchOptions& options) {
  std::vector<BenchPoint> out;
  for (const BenchCase& c : options.cases) {
    for (const std::string& method : options.methods) {
      out.push_back(MeasurePoint(c, method, options));
    }
  }
  return out;
}

std::string BenchToCsv(const std::vector<BenchPoint>& points) {
  std::ostringstream out;
  out << "case,method,counts,input_cells,input_bytes,ran,repeats,"
         "wall_seconds,peak_bytes,skip_reason\n";
  for (const BenchPoint& p : points) {
    std::string reason = p.skip_reason;
    for (char& ch : reason) {
      if (ch == '"') ch = '\'';
    }
    out << p.label << ',' << p.method << ',' << p.counts << ','
        << p.input_cells << ',' << p.input_bytes << ',' << (p.ran ? 1 : 0)
        << ',' << p.repeats << ',' << FormatDouble(p.wall_seconds) << ','
        << p.peak_bytes << ",\"" << reason << "\"\n";
  }
  return out.str();
}

nlohmann::json BenchToJson(const std::vector<BenchPoint>& points) {
  nlohmann::json arr = nlohmann::json::array();
  for (const BenchPoint& p : points) {
    arr.push_back({{"case", p.label},
                   {"method", p.method},
                   {"counts", p.counts},
                   {"input_cells", p.input_cells},
                   {"input_bytes", p.input_bytes},
                   {"ran", p.ran},
                   {"repeats", p.repeats},
                   {"wall_seconds", p.wall_seconds},
                   {"peak_bytes", p.peak_bytes},
                   {"skip_reason", p.skip_reason}});
  }
  return arr;
}

}  // namespace consistent_counts
